import numpy as np
import pytest

from fourda.cost import AssimilationWindow

# pass/fail lines collected by the acceptance module, echoed at the end
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
from fourda.covariance import CovarianceModel
from fourda.models import (
    DoubleWell,
    QuadraticOperator,
    generate_truth_and_observations,
)
from fourda.randomness import stream

# canonical double-well experiment: truth starts at -0.15, background 0.1
# with std sqrt(2), twelve observations of x^2 every 0.01 up to 0.12 with
# error std 0.05
DW_TRUTH0 = -0.15
DW_BACKGROUND = 0.1
DW_SIGMA_B = np.sqrt(2.0)
DW_SIGMA_OBS = 0.05
DW_OBS_TIMES = tuple(round(0.01 * k, 10) for k in range(1, 13))


def make_double_well_window(noise_sigma=DW_SIGMA_OBS, seed=7):
    """Window for the canonical setup; noise_sigma=0 gives noise-free
    observations while keeping the assumed error at 0.05."""
    model = DoubleWell()
    op = QuadraticOperator(1)
    truth, obs = generate_truth_and_observations(
        model,
        op,
        np.array([DW_TRUTH0]),
        0.0,
        DW_OBS_TIMES,
        noise_sigma,
        stream(seed, "observations"),
        sigma_assumed=DW_SIGMA_OBS,
    )
    win = AssimilationWindow(
        t0=0.0,
        tF=0.12,
        background=np.array([DW_BACKGROUND]),
        b0=CovarianceModel.diagonal([DW_SIGMA_B**2]),
        observations=obs,
        model=model,
        obs_operator=op,
    )
    return win, truth


@pytest.fixture
def dw_window_noisy():
    return make_double_well_window(noise_sigma=DW_SIGMA_OBS, seed=7)


@pytest.fixture
def dw_window_clean():
    return make_double_well_window(noise_sigma=0.0)

"""Metrics and cost accounting: RMSE, mode masses, chain health, and the
forward/adjoint run ledger behind the scheme-cost comparisons."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .covariance import Ensemble
from .hmc import ChainRecord
from .models import ModelInterface

# one adjoint sweep costs roughly this many forward runs
DEFAULT_ADJOINT_COST_RATIO = 2.5


class CostLedger:
    """Counters of model work with the equivalent-forward-run reduction.

    Call counts come with the integrated time span each sweep covered, so
    reports can be stated in whole-window run units no matter how many
    segments an evaluation was split into.  Increments are lock-protected
    so one ledger can sit behind shared instrumented wrappers.
    """

    def __init__(self, adjoint_cost_ratio: float = DEFAULT_ADJOINT_COST_RATIO):
        self.adjoint_cost_ratio = adjoint_cost_ratio
        self.forward_runs = 0
        self.adjoint_runs = 0
        self.tlm_runs = 0
        self.forward_time = 0.0
        self.adjoint_time = 0.0
        self.tlm_time = 0.0
        self._lock = threading.Lock()

    def add_forward(self, n: int = 1, span: float = 0.0):
        with self._lock:
            self.forward_runs += n
            self.forward_time += span

    def add_adjoint(self, n: int = 1, span: float = 0.0):
        with self._lock:
            self.adjoint_runs += n
            self.adjoint_time += span

    def add_tlm(self, n: int = 1, span: float = 0.0):
        with self._lock:
            self.tlm_runs += n
            self.tlm_time += span

    @property
    def equivalent_forward_runs(self) -> float:
        return self.forward_runs + self.adjoint_cost_ratio * self.adjoint_runs

    def window_equivalent_runs(self, window_span: float) -> float:
        """Equivalent forward runs with one run = one span-long sweep."""
        return (
            self.forward_time
            + self.tlm_time
            + self.adjoint_cost_ratio * self.adjoint_time
        ) / window_span


class CountingModel(ModelInterface):
    """Model wrapper that charges every propagation to a ledger.

    Forward and tangent-linear sweeps count as forward work; adjoint
    sweeps, including the forward recomputation they entail, count as
    adjoint work.
    """

    def __init__(self, inner: ModelInterface, ledger: CostLedger):
        self.inner = inner
        self.ledger = ledger
        self.nvar = inner.nvar
        self.dt = inner.dt

    def propagate(self, x0, t0, t1):
        self.ledger.add_forward(span=t1 - t0)
        return self.inner.propagate(x0, t0, t1)

    def trajectory(self, x0, t0, t1):
        self.ledger.add_forward(span=t1 - t0)
        return self.inner.trajectory(x0, t0, t1)

    def propagate_tlm(self, x0, dx0, t0, t1):
        self.ledger.add_tlm(span=t1 - t0)
        return self.inner.propagate_tlm(x0, dx0, t0, t1)

    def propagate_adjoint(self, x0, lam1, t0, t1, inner_trajectory=None):
        self.ledger.add_adjoint(span=t1 - t0)
        return self.inner.propagate_adjoint(
            x0, lam1, t0, t1, inner_trajectory=inner_trajectory
        )


def rmse(x: np.ndarray, x_true: np.ndarray) -> float:
    """Root mean squared difference over the state components."""
    x = np.asarray(x, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x.shape != x_true.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_true.shape}")
    return float(np.sqrt(np.mean((x - x_true) ** 2)))


def mode_masses(samples: Ensemble, boundary: float) -> tuple[float, float]:
    """Fractions of one-dimensional samples below and above ``boundary``.

    Samples exactly on the boundary count to the right.  The left
    fraction is an integer count over the total; the right one is its
    complement, so the pair sums to exactly one.
    """
    if samples.nvar != 1:
        raise ValueError("mode masses are defined for scalar states only")
    vals = samples.members[:, 0]
    n = vals.size
    n_left = int(np.sum(vals < boundary))
    left = n_left / n
    return left, 1.0 - left


def integrated_autocorrelation_time(series: np.ndarray) -> float:
    """IACT by Geyer's initial-positive-sequence truncation.

    Equals 1 for independent draws.  A constant series is reported as
    maximally correlated (IACT = length).
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return 0.0
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        return float(n)
    # autocovariances via FFT, biased normalization
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n].real / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return max(tau, 0.0)


@dataclass(frozen=True)
class ChainSummary:
    acceptance_rate: float
    mean_abs_delta_h: float
    n_diverged: int
    iact: float


def chain_diagnostics(record: ChainRecord, functional=None) -> ChainSummary:
    """Acceptance rate, mean |dH| over finite proposals, and the IACT of a
    scalar functional of the kept samples (first coordinate by default)."""
    if record.proposals_total == 0:
        raise ValueError("empty chain record")
    dh = np.array([e.delta_h for e in record.energy_trace])
    finite = np.isfinite(dh)
    mean_dh = float(np.mean(np.abs(dh[finite]))) if np.any(finite) else np.inf
    if functional is None:
        series = record.samples.members[:, 0]
    else:
        series = np.array([functional(m) for m in record.samples.members])
    return ChainSummary(
        acceptance_rate=record.accepted_total / record.proposals_total,
        mean_abs_delta_h=mean_dh,
        n_diverged=int(np.sum(~finite)),
        iact=integrated_autocorrelation_time(series),
    )


# -- scheme cost reports --------------------------------------------------


def sampler_formula_cost(
    proposals: int, per_proposal: float = 4.5
) -> float:
    """Nominal sampler cost: proposals times the per-proposal equivalent
    (one forward for the energy check plus one gradient at 3.5)."""
    return proposals * per_proposal


def variational_formula_cost(
    function_evaluations: int,
    gradient_evaluations: int,
    adjoint_cost_ratio: float = DEFAULT_ADJOINT_COST_RATIO,
) -> float:
    """Nominal variational cost: every function evaluation is one forward
    run and every gradient adds a forward plus an adjoint sweep."""
    return function_evaluations + gradient_evaluations * (1.0 + adjoint_cost_ratio)


@dataclass(frozen=True)
class CostReportRow:
    scheme: str
    detail: str
    measured_equivalent_runs: float
    formula_equivalent_runs: float


def cost_ledger_report(
    ledger: CostLedger,
    scheme: str,
    proposals: int | None = None,
    function_evaluations: int | None = None,
    gradient_evaluations: int | None = None,
    window_span: float | None = None,
) -> CostReportRow:
    """Pair the instrumented equivalent-run count with the nominal formula
    number; the two differ whenever trajectory settings differ from the
    bookkeeping behind the 4.5-per-proposal convention.

    With ``window_span`` the measured figure is in whole-window run units;
    otherwise it is raw sweep counts.
    """
    if proposals is not None:
        formula = sampler_formula_cost(proposals)
        detail = f"{proposals} proposals"
    elif function_evaluations is not None and gradient_evaluations is not None:
        formula = variational_formula_cost(
            function_evaluations, gradient_evaluations, ledger.adjoint_cost_ratio
        )
        detail = f"{function_evaluations} f-evals, {gradient_evaluations} g-evals"
    else:
        formula = float("nan")
        detail = ""
    measured = (
        ledger.window_equivalent_runs(window_span)
        if window_span
        else ledger.equivalent_forward_runs
    )
    return CostReportRow(
        scheme=scheme,
        detail=detail,
        measured_equivalent_runs=measured,
        formula_equivalent_runs=formula,
    )


def render_cost_table(rows) -> str:
    """Human-readable cost table; one line per scheme."""
    lines = [
        f"{'scheme':<12} {'detail':<28} {'measured eq. runs':>18} {'formula eq. runs':>18}",
        "-" * 80,
    ]
    for r in rows:
        lines.append(
            f"{r.scheme:<12} {r.detail:<28} "
            f"{r.measured_equivalent_runs:>18.1f} {r.formula_equivalent_runs:>18.1f}"
        )
    return "\n".join(lines)


def write_cost_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("scheme,detail,measured_equivalent_runs,formula_equivalent_runs\n")
        for r in rows:
            fh.write(
                f"{r.scheme},{r.detail},{r.measured_equivalent_runs:.17g},"
                f"{r.formula_equivalent_runs:.17g}\n"
            )

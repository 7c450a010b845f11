"""The sampling smoother: per-window posterior sampling, ensemble
forecast to the next window, and covariance feedback.

Each window's analysis ensemble is drawn from exp(-J) with the chain from
:mod:`fourda.hmc`; the mass matrix is the diagonal of the inverse
background covariance.  Sequential runs forecast the full ensemble to the
next window start, use its mean as the next background, and can blend its
sample covariance into the next background covariance.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import yaml

from . import covariance as cov
from .cost import AssimilationWindow, cost, gradient
from .covariance import CovarianceModel, Ensemble, TaperSpec
from .errors import Diverged, NonContiguousWindows
from .fourdvar import LbfgsConfig, minimize
from .hmc import ChainRecord, HmcConfig, MassMatrix, run_chain, write_chain_csv
from .models import ModelInterface, ObservationOperator, ObservationSet
from .randomness import substream_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmootherConfig:
    """Analysis-step settings.

    ``b0_mode`` 'fixed' keeps the modeled background covariance every
    window; 'hybrid' blends it with the (tapered) forecast-ensemble
    covariance using weight ``gamma`` on the modeled part.  The chain
    starts from the background state or from a short variational warm
    start.
    """

    hmc: HmcConfig
    b0_mode: str = "fixed"
    gamma: float = 0.75
    taper: TaperSpec | None = None
    init_strategy: str = "background"
    warm_start_iterations: int = 10

    def __post_init__(self):
        if self.b0_mode not in ("fixed", "hybrid"):
            raise ValueError(f"unknown b0_mode {self.b0_mode!r}")
        if self.init_strategy not in ("background", "fourdvar"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.b0_mode == "hybrid" and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class WindowSpec:
    """One assimilation window before backgrounds are attached."""

    t0: float
    tF: float
    observations: ObservationSet


@dataclass(frozen=True)
class WindowResult:
    analysis_ensemble: Ensemble
    analysis_mean: np.ndarray
    analysis_cov: CovarianceModel
    forecast_ensemble: Ensemble
    chain: ChainRecord
    window: AssimilationWindow

    def __post_init__(self):
        if not np.array_equal(
            self.analysis_mean, cov.ensemble_mean(self.analysis_ensemble)
        ):
            raise ValueError("analysis_mean must be the ensemble mean exactly")


def build_mass_matrix(b0: CovarianceModel) -> MassMatrix:
    """Diagonal mass set to diag(B0^-1), the true inverse diagonal."""
    return MassMatrix(b0.inverse_diagonal())


def _effective_b0(
    modeled: CovarianceModel,
    cfg: SmootherConfig,
    forecast_ens: Ensemble | None,
) -> CovarianceModel:
    if cfg.b0_mode == "fixed":
        return modeled
    if forecast_ens is None:
        raise ValueError("hybrid mode needs a forecast ensemble")
    ens_cov = cov.ensemble_covariance(forecast_ens)
    if cfg.taper is not None:
        ens_cov = cov.apply_taper(ens_cov, cfg.taper)
    return cov.hybrid_update(modeled, ens_cov, cfg.gamma)


def analyze_window(
    win: AssimilationWindow,
    cfg: SmootherConfig,
    forecast_ens: Ensemble | None = None,
) -> WindowResult:
    """Sample the window posterior and forecast the ensemble to tF.

    In fixed mode the forecast ensemble, if passed, is ignored entirely.
    """
    b0 = _effective_b0(win.b0, cfg, forecast_ens)
    if b0 is not win.b0:
        win = dataclasses.replace(win, b0=b0)
    mass = build_mass_matrix(b0)

    if cfg.init_strategy == "fourdvar":
        warm = minimize(
            win, win.background,
            LbfgsConfig(max_iterations=cfg.warm_start_iterations),
        )
        x_init = warm.analysis
    else:
        x_init = win.background

    chain = run_chain(
        x_init,
        mass,
        potential=lambda x: cost(win, x),
        grad_potential=lambda x: gradient(win, x),
        cfg=cfg.hmc,
        sample_time=win.t0,
    )
    analysis = chain.samples
    forecast = forecast_step(analysis, win.model, win.t0, win.tF)
    return WindowResult(
        analysis_ensemble=analysis,
        analysis_mean=cov.ensemble_mean(analysis),
        analysis_cov=cov.ensemble_covariance(analysis),
        forecast_ensemble=forecast,
        chain=chain,
        window=win,
    )


def forecast_step(
    ens: Ensemble, model: ModelInterface, t0: float, tF: float
) -> Ensemble:
    """Propagate every member with the full model; order preserved.

    Members whose propagation diverges are dropped with a warning; losing
    more than half the ensemble aborts the run.
    """
    kept = []
    lost = 0
    for e, member in enumerate(ens.members):
        try:
            kept.append(model.propagate(member, t0, tF))
        except Diverged:
            lost += 1
            log.warning("forecast member %d diverged; dropping it", e)
    if lost > 0 and lost * 2 > ens.n_members:
        raise Diverged(f"{lost} of {ens.n_members} forecast members diverged")
    return Ensemble(members=np.array(kept), time=tF)


def run_sequential(
    windows: list[WindowSpec],
    model: ModelInterface,
    obs_operator: ObservationOperator,
    background0: np.ndarray,
    b0_modeled: CovarianceModel,
    cfg: SmootherConfig,
) -> list[WindowResult]:
    """Assimilate consecutive windows, feeding each forecast forward.

    Window i > 0 uses the previous forecast-ensemble mean as background;
    in hybrid mode the forecast covariance also feeds B0.  The first
    window has no forecast ensemble and always runs in fixed mode.  Each
    window's chain gets its own derived seed.
    """
    for i in range(len(windows) - 1):
        if abs(windows[i].tF - windows[i + 1].t0) > 1e-12:
            raise NonContiguousWindows(
                f"window {i} ends at {windows[i].tF} but window {i + 1} "
                f"starts at {windows[i + 1].t0}"
            )
    results: list[WindowResult] = []
    background = np.asarray(background0, dtype=float)
    forecast: Ensemble | None = None
    for i, spec in enumerate(windows):
        win = AssimilationWindow(
            t0=spec.t0,
            tF=spec.tF,
            background=background,
            b0=b0_modeled,
            observations=spec.observations,
            model=model,
            obs_operator=obs_operator,
        )
        win_cfg = dataclasses.replace(
            cfg, hmc=dataclasses.replace(
                cfg.hmc, seed=substream_seed(cfg.hmc.seed, f"window-{i}")
            )
        )
        if i == 0 and cfg.b0_mode == "hybrid":
            win_cfg = dataclasses.replace(win_cfg, b0_mode="fixed")
        result = analyze_window(win, win_cfg, forecast_ens=forecast)
        results.append(result)
        forecast = result.forecast_ensemble
        background = cov.ensemble_mean(forecast)
    return results


def write_window_result(directory, result: WindowResult, config_echo=None) -> None:
    """Persist one window: samples, mean and covariance, chain trace, and
    a small manifest with the seed."""
    import os

    os.makedirs(directory, exist_ok=True)
    join = lambda name: os.path.join(directory, name)
    cov.write_matrix(join("samples.bin"), result.analysis_ensemble.members)
    cov.write_matrix(join("mean.bin"), result.analysis_mean.reshape(1, -1))
    cov.write_matrix_csv(join("mean.csv"), result.analysis_mean.reshape(1, -1))
    cov.write_matrix(join("cov.bin"), result.analysis_cov.as_matrix())
    cov.write_matrix_csv(join("cov.csv"), result.analysis_cov.as_matrix())
    write_chain_csv(join("chain.csv"), result.chain)
    manifest = {
        "seed": result.chain.seed,
        "gaussian_method": result.chain.gaussian_method,
        "t0": result.window.t0,
        "tF": result.window.tF,
        "n_members": result.analysis_ensemble.n_members,
        "acceptance_rate": result.chain.acceptance_rate,
    }
    if config_echo is not None:
        manifest["config"] = config_echo
    with open(join("manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)

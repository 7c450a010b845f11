"""Twin-experiment runner.

Reads a YAML experiment description, generates a synthetic truth and
observations, runs the selected assimilation schemes over the configured
windows, and writes a run directory with trajectories, per-window results,
RMSE series, histogram bins, and a cost ledger.  Re-running the same
config and seed reproduces every CSV byte for byte; only the manifest
carries a timestamp.

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
import yaml

from . import __version__
from . import covariance as cov
from . import diagnostics as diag
from .cost import AssimilationWindow
from .covariance import CovarianceModel, Ensemble, TaperSpec
from .enks import enks_window
from .fourdvar import LbfgsConfig, minimize
from .hmc import HmcConfig
from .models import (
    DoubleWell,
    IdentityOperator,
    Lorenz96,
    ObservationSet,
    QuadraticOperator,
    Trajectory,
    generate_truth_and_observations,
    lorenz96_spinup,
    write_trajectory_binary,
    write_trajectory_csv,
)
from .randomness import stream, substream_seed
from .smoother import (
    SmootherConfig,
    WindowSpec,
    run_sequential,
    write_window_result,
)

log = logging.getLogger(__name__)

SCHEMES = ("hmc", "fourdvar", "enks")


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    t0: float
    tF: float
    obs_times: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    scheme: str
    seed: int
    output_dir: str
    windows: tuple
    truth_kind: str = "explicit"
    truth_state: tuple | None = None
    spinup_time: float = 5.0
    spinup_perturbation: float = 0.01
    model_n: int = 40
    model_forcing: float = 8.0
    obs_operator: str = "quadratic"
    obs_sigma: float | None = None
    obs_sigma_fraction: float | None = None
    background_kind: str = "explicit"
    background_state: tuple | None = None
    background_sigma: float | None = None
    background_sigma_fraction: float | None = None
    hmc_n_samples: int = 100
    hmc_trajectory_steps: int = 10
    hmc_base_step: float = 0.01
    hmc_step_jitter: float = 0.2
    hmc_burn_in: int = 20
    hmc_thin: int = 4
    b0_mode: str = "fixed"
    gamma: float = 0.75
    taper_length: float | None = None
    init_strategy: str = "background"
    warm_start_iterations: int = 10
    lbfgs_memory: int = 10
    lbfgs_max_iterations: int = 100
    lbfgs_grad_norm_tol: float = 1e-10
    lbfgs_rel_f_tol: float = 1e-6
    enks_members: int = 100
    histogram_bins: int = 50
    histogram_range: tuple = (-2.0, 2.0)

    def to_dict(self) -> dict:
        d = {
            "model": {"kind": self.model_kind},
            "scheme": self.scheme,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "truth": {"kind": self.truth_kind},
            "observation": {"operator": self.obs_operator},
            "background": {"kind": self.background_kind},
            "windows": [
                {"t0": w.t0, "tF": w.tF, "obs_times": list(w.obs_times)}
                for w in self.windows
            ],
            "hmc": {
                "n_samples": self.hmc_n_samples,
                "trajectory_steps": self.hmc_trajectory_steps,
                "base_step": self.hmc_base_step,
                "step_jitter": self.hmc_step_jitter,
                "burn_in": self.hmc_burn_in,
                "thin": self.hmc_thin,
                "b0_mode": self.b0_mode,
                "gamma": self.gamma,
                "taper_length": self.taper_length,
                "init_strategy": self.init_strategy,
                "warm_start_iterations": self.warm_start_iterations,
            },
            "fourdvar": {
                "memory": self.lbfgs_memory,
                "max_iterations": self.lbfgs_max_iterations,
                "grad_norm_tol": self.lbfgs_grad_norm_tol,
                "rel_f_tol": self.lbfgs_rel_f_tol,
            },
            "enks": {"n_members": self.enks_members},
            "histogram": {
                "bins": self.histogram_bins,
                "range": list(self.histogram_range),
            },
        }
        if self.model_kind == "lorenz96":
            d["model"]["n"] = self.model_n
            d["model"]["forcing"] = self.model_forcing
        if self.truth_kind == "explicit":
            d["truth"]["state"] = list(self.truth_state)
        else:
            d["truth"]["spinup_time"] = self.spinup_time
            d["truth"]["perturbation"] = self.spinup_perturbation
        if self.obs_sigma is not None:
            d["observation"]["sigma"] = self.obs_sigma
        if self.obs_sigma_fraction is not None:
            d["observation"]["sigma_fraction"] = self.obs_sigma_fraction
        if self.background_state is not None:
            d["background"]["state"] = list(self.background_state)
        if self.background_sigma is not None:
            d["background"]["sigma"] = self.background_sigma
        if self.background_sigma_fraction is not None:
            d["background"]["sigma_fraction"] = self.background_sigma_fraction
        return d


def _expand_obs_times(w: dict, errors, where: str):
    if "obs_times" in w:
        return tuple(float(t) for t in w["obs_times"])
    if "obs_spacing" in w:
        dt = float(w["obs_spacing"])
        if dt <= 0:
            errors.append(f"{where}: obs_spacing must be positive")
            return ()
        t0, tf = float(w["t0"]), float(w["tF"])
        n = int(round((tf - t0) / dt))
        # rounding keeps accumulated spacing on the window boundary
        return tuple(round(t0 + k * dt, 10) for k in range(1, n + 1))
    errors.append(f"{where}: needs obs_times or obs_spacing")
    return ()


def validate_config(raw_text: str):
    """Parse and validate; returns (config or None, list of all errors)."""
    errors: list[str] = []
    try:
        data = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        return None, [f"config is not valid YAML: {exc}"]
    if not isinstance(data, dict):
        return None, ["config must be a YAML mapping (empty file?)"]

    def section(name, default=None):
        v = data.get(name, default if default is not None else {})
        return v if isinstance(v, dict) else {}

    model = section("model")
    kind = model.get("kind")
    if kind not in ("double_well", "lorenz96"):
        errors.append(f"model.kind must be double_well or lorenz96, got {kind!r}")
    model_n = int(model.get("n", 40))
    model_forcing = float(model.get("forcing", 8.0))
    if kind == "lorenz96" and model_n < 4:
        errors.append("model.n must be at least 4")

    scheme = data.get("scheme", "all")
    if scheme not in SCHEMES + ("all",):
        errors.append(f"scheme must be one of {SCHEMES + ('all',)}, got {scheme!r}")

    seed = data.get("seed")
    if not isinstance(seed, int):
        errors.append("seed must be an integer")
        seed = 0

    output_dir = data.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir must be a non-empty string")
        output_dir = "."

    nvar = 1 if kind == "double_well" else model_n
    model_dt = 1e-3 if kind == "double_well" else 5e-3

    truth = section("truth")
    truth_kind = truth.get("kind", "explicit")
    truth_state = None
    if truth_kind == "explicit":
        state = truth.get("state")
        if not isinstance(state, (list, tuple)) or len(state) != nvar:
            errors.append(f"truth.state must be a list of length {nvar}")
        else:
            truth_state = tuple(float(v) for v in state)
    elif truth_kind == "spinup":
        if kind == "double_well":
            errors.append("truth.kind spinup applies to lorenz96 only")
    else:
        errors.append(f"truth.kind must be explicit or spinup, got {truth_kind!r}")

    obs = section("observation")
    obs_operator = obs.get("operator", "quadratic" if kind == "double_well" else "identity")
    if obs_operator not in ("quadratic", "identity"):
        errors.append(f"observation.operator must be quadratic or identity, got {obs_operator!r}")
    obs_sigma = obs.get("sigma")
    obs_sigma_fraction = obs.get("sigma_fraction")
    if (obs_sigma is None) == (obs_sigma_fraction is None):
        errors.append("observation: exactly one of sigma / sigma_fraction is required")
    for name, v in (("sigma", obs_sigma), ("sigma_fraction", obs_sigma_fraction)):
        if v is not None and float(v) <= 0:
            errors.append(f"observation.{name} must be positive")

    bg = section("background")
    background_kind = bg.get("kind", "explicit")
    background_state = None
    if background_kind == "explicit":
        state = bg.get("state")
        if not isinstance(state, (list, tuple)) or len(state) != nvar:
            errors.append(f"background.state must be a list of length {nvar}")
        else:
            background_state = tuple(float(v) for v in state)
    elif background_kind != "perturbed":
        errors.append(f"background.kind must be explicit or perturbed, got {background_kind!r}")
    bg_sigma = bg.get("sigma")
    bg_sigma_fraction = bg.get("sigma_fraction")
    if (bg_sigma is None) == (bg_sigma_fraction is None):
        errors.append("background: exactly one of sigma / sigma_fraction is required")
    for name, v in (("sigma", bg_sigma), ("sigma_fraction", bg_sigma_fraction)):
        if v is not None and float(v) <= 0:
            errors.append(f"background.{name} must be positive")

    windows_raw = data.get("windows")
    windows = []
    if not isinstance(windows_raw, list) or not windows_raw:
        errors.append("windows must be a non-empty list")
    else:
        for i, w in enumerate(windows_raw):
            where = f"windows[{i}]"
            if not isinstance(w, dict) or "t0" not in w or "tF" not in w:
                errors.append(f"{where}: needs t0 and tF")
                continue
            t0, tf = float(w["t0"]), float(w["tF"])
            if not t0 < tf:
                errors.append(f"{where}: t0 must be strictly less than tF")
                continue
            obs_times = _expand_obs_times(w, errors, where)
            tol = 1e-9 * max(1.0, abs(tf - t0))
            for t in obs_times:
                if t < t0 - tol or t > tf + tol:
                    errors.append(f"{where}: observation time {t} outside [t0, tF]")
                n_steps = (t - t0) / model_dt
                if abs(n_steps - round(n_steps)) > 1e-6:
                    errors.append(
                        f"{where}: observation time {t} not on the model grid "
                        f"(step {model_dt})"
                    )
            if any(a >= b for a, b in zip(obs_times, obs_times[1:])):
                errors.append(f"{where}: obs_times must be strictly ascending")
            windows.append(WindowConfig(t0=t0, tF=tf, obs_times=obs_times))
        for i in range(len(windows) - 1):
            if abs(windows[i].tF - windows[i + 1].t0) > 1e-12:
                errors.append(
                    f"windows[{i}] tF and windows[{i + 1}] t0 must coincide "
                    "(contiguous windows)"
                )

    hmc_cfg = section("hmc")
    gamma = float(hmc_cfg.get("gamma", 0.75))
    if not 0.0 <= gamma <= 1.0:
        errors.append(f"hmc.gamma must lie in [0, 1], got {gamma}")
    b0_mode = hmc_cfg.get("b0_mode", "fixed")
    if b0_mode not in ("fixed", "hybrid"):
        errors.append(f"hmc.b0_mode must be fixed or hybrid, got {b0_mode!r}")
    init_strategy = hmc_cfg.get("init_strategy", "background")
    if init_strategy not in ("background", "fourdvar"):
        errors.append(f"hmc.init_strategy must be background or fourdvar, got {init_strategy!r}")
    for name, lo in (("n_samples", 1), ("trajectory_steps", 1), ("burn_in", 0), ("thin", 0)):
        v = hmc_cfg.get(name)
        if v is not None and int(v) < lo:
            errors.append(f"hmc.{name} must be >= {lo}")
    jitter = float(hmc_cfg.get("step_jitter", 0.2))
    if not 0.0 <= jitter < 1.0:
        errors.append("hmc.step_jitter must lie in [0, 1)")
    taper_length = hmc_cfg.get("taper_length")
    if taper_length is not None and float(taper_length) <= 0:
        errors.append("hmc.taper_length must be positive")

    fdv = section("fourdvar")
    enks_cfg = section("enks")
    enks_members = int(enks_cfg.get("n_members", 100))
    if enks_members < 2:
        errors.append("enks.n_members must be at least 2")
    hist = section("histogram")
    hist_range = hist.get("range", [-2.0, 2.0])
    if not (isinstance(hist_range, (list, tuple)) and len(hist_range) == 2
            and float(hist_range[0]) < float(hist_range[1])):
        errors.append("histogram.range must be [low, high] with low < high")
        hist_range = [-2.0, 2.0]

    if errors:
        return None, errors

    config = ExperimentConfig(
        model_kind=kind,
        scheme=scheme,
        seed=seed,
        output_dir=output_dir,
        windows=tuple(windows),
        truth_kind=truth_kind,
        truth_state=truth_state,
        spinup_time=float(truth.get("spinup_time", 5.0)),
        spinup_perturbation=float(truth.get("perturbation", 0.01)),
        model_n=model_n,
        model_forcing=model_forcing,
        obs_operator=obs_operator,
        obs_sigma=None if obs_sigma is None else float(obs_sigma),
        obs_sigma_fraction=None if obs_sigma_fraction is None else float(obs_sigma_fraction),
        background_kind=background_kind,
        background_state=background_state,
        background_sigma=None if bg_sigma is None else float(bg_sigma),
        background_sigma_fraction=None if bg_sigma_fraction is None else float(bg_sigma_fraction),
        hmc_n_samples=int(hmc_cfg.get("n_samples", 100)),
        hmc_trajectory_steps=int(hmc_cfg.get("trajectory_steps", 10)),
        hmc_base_step=float(hmc_cfg.get("base_step", 0.01)),
        hmc_step_jitter=jitter,
        hmc_burn_in=int(hmc_cfg.get("burn_in", 20)),
        hmc_thin=int(hmc_cfg.get("thin", 4)),
        b0_mode=b0_mode,
        gamma=gamma,
        taper_length=None if taper_length is None else float(taper_length),
        init_strategy=init_strategy,
        warm_start_iterations=int(hmc_cfg.get("warm_start_iterations", 10)),
        lbfgs_memory=int(fdv.get("memory", 10)),
        lbfgs_max_iterations=int(fdv.get("max_iterations", 100)),
        lbfgs_grad_norm_tol=float(fdv.get("grad_norm_tol", 1e-10)),
        lbfgs_rel_f_tol=float(fdv.get("rel_f_tol", 1e-6)),
        enks_members=enks_members,
        histogram_bins=int(hist.get("bins", 50)),
        histogram_range=(float(hist_range[0]), float(hist_range[1])),
    )
    return config, []


# -- experiment orchestration ------------------------------------------------


def _build_model(cfg: ExperimentConfig, ledger=None):
    if cfg.model_kind == "double_well":
        model = DoubleWell()
    else:
        model = Lorenz96(n=cfg.model_n, forcing=cfg.model_forcing)
    if ledger is not None:
        model = diag.CountingModel(model, ledger)
    return model


def _build_operator(cfg: ExperimentConfig, nvar: int):
    if cfg.obs_operator == "quadratic":
        return QuadraticOperator(nvar)
    return IdentityOperator(nvar)


def _truth_initial(cfg: ExperimentConfig, model):
    if cfg.truth_kind == "explicit":
        return np.array(cfg.truth_state, dtype=float)
    return lorenz96_spinup(model, cfg.spinup_time, cfg.spinup_perturbation)


def _sigma_vector(abs_value, fraction, scale, nvar):
    if abs_value is not None:
        return np.full(nvar, float(abs_value))
    return np.full(nvar, float(fraction) * scale)


def _truth_at(truth: Trajectory, model, t: float):
    """Truth state at t, propagating from the nearest earlier stored time."""
    earlier = truth.times[truth.times <= t + 1e-12]
    i = int(np.argmax(earlier))
    t_base = float(truth.times[i])
    x = truth.states[i]
    if abs(t_base - t) <= 1e-12:
        return x
    return model.propagate(x, t_base, t)


def _split_observations(all_obs: ObservationSet, windows) -> list[ObservationSet]:
    # windows own their end point; a boundary observation belongs to the
    # earlier window (only the first window may claim its own start)
    out = []
    for i, w in enumerate(windows):
        sel = [
            k for k, t in enumerate(all_obs.times)
            if (t > w.t0 + 1e-12 or (i == 0 and t >= w.t0 - 1e-12))
            and t <= w.tF + 1e-12
        ]
        out.append(
            ObservationSet(
                times=tuple(all_obs.times[k] for k in sel),
                values=tuple(all_obs.values[k] for k in sel),
                error_cov=tuple(all_obs.error_cov[k] for k in sel),
            )
        )
    return out


def _write_histogram(path, values, bins, vrange):
    counts, edges = np.histogram(values, bins=bins, range=vrange)
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            fh.write(f"{lo:.17g},{hi:.17g},{c}\n")


def _write_rmse_csv(path, times, columns: dict):
    names = list(columns)
    with open(path, "w") as fh:
        fh.write("time," + ",".join(names) + "\n")
        for i, t in enumerate(times):
            row = ",".join(f"{columns[n][i]:.17g}" for n in names)
            fh.write(f"{t:.17g},{row}\n")


def run_experiment(cfg: ExperimentConfig) -> str:
    """Run all configured schemes; returns the run directory path."""
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)

    with open(os.path.join(out, "config.yaml"), "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

    base_model = _build_model(cfg)
    nvar = base_model.nvar
    obs_op = _build_operator(cfg, nvar)

    truth0 = _truth_initial(cfg, base_model)
    scale = float(np.mean(np.abs(truth0)))
    sigma_obs = _sigma_vector(cfg.obs_sigma, cfg.obs_sigma_fraction, scale, obs_op.obs_dim)
    sigma_bg = _sigma_vector(cfg.background_sigma, cfg.background_sigma_fraction, scale, nvar)
    b0_modeled = CovarianceModel.diagonal(sigma_bg**2)

    all_obs_times = [t for w in cfg.windows for t in w.obs_times]
    t_start = cfg.windows[0].t0
    t_end = cfg.windows[-1].tF
    truth, all_obs = generate_truth_and_observations(
        base_model, obs_op, truth0, t_start, all_obs_times, sigma_obs,
        stream(cfg.seed, "observations"),
    )
    per_window_obs = _split_observations(all_obs, cfg.windows)

    if cfg.background_kind == "explicit":
        background0 = np.array(cfg.background_state, dtype=float)
    else:
        background0 = truth0 + b0_modeled.sample(stream(cfg.seed, "background"))

    # report grid: window starts, observation times, final time
    report_times = sorted(
        {w.t0 for w in cfg.windows} | set(all_obs_times) | {t_end}
    )
    truth_report = np.array([_truth_at(truth, base_model, t) for t in report_times])
    truth_traj = Trajectory(times=np.array(report_times), states=truth_report)
    write_trajectory_csv(os.path.join(out, "truth.csv"), truth_traj)
    write_trajectory_binary(os.path.join(out, "truth.bin"), truth_traj)
    with open(os.path.join(out, "observations.csv"), "w") as fh:
        fh.write("time," + ",".join(f"y{i}" for i in range(obs_op.obs_dim)) + "\n")
        for t, y in zip(all_obs.times, all_obs.values):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in y) + "\n")

    schemes = SCHEMES if cfg.scheme == "all" else (cfg.scheme,)
    rmse_columns: dict[str, list] = {}
    cost_rows = []

    # free-running background trajectory as the no-assimilation baseline
    free = [
        diag.rmse(_free_state(base_model, background0, t_start, t), tr)
        for t, tr in zip(report_times, truth_report)
    ]
    rmse_columns["background"] = free

    window_specs = [
        WindowSpec(t0=w.t0, tF=w.tF, observations=o)
        for w, o in zip(cfg.windows, per_window_obs)
    ]

    mean_span = float(np.mean([w.tF - w.t0 for w in cfg.windows]))
    for scheme in schemes:
        ledger = diag.CostLedger()
        model = _build_model(cfg, ledger)
        runner = {"hmc": _run_hmc, "fourdvar": _run_fourdvar, "enks": _run_enks}[scheme]
        scheme_dir = os.path.join(out, scheme)
        os.makedirs(scheme_dir, exist_ok=True)
        rmse_columns[scheme] = runner(
            cfg, model, base_model, obs_op, background0, b0_modeled,
            window_specs, scheme_dir, report_times, truth_report,
            ledger, cost_rows, mean_span,
        )

    _write_rmse_csv(os.path.join(out, "rmse.csv"), report_times, rmse_columns)
    diag.write_cost_csv(os.path.join(out, "cost_ledger.csv"), cost_rows)
    with open(os.path.join(out, "cost_ledger.txt"), "w") as fh:
        fh.write(diag.render_cost_table(cost_rows) + "\n")

    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "schemes": list(schemes),
        "timestamp": datetime.datetime.now().isoformat(),
        "status": "success",
    }
    with open(os.path.join(out, "manifest.yaml"), "w") as fh:
        yaml.safe_dump(manifest, fh, sort_keys=True)
    return out


def _free_state(model, x0, t0, t):
    return x0 if t <= t0 else model.propagate(x0, t0, t)


def _scheme_rmse(model, anchors, report_times, truth_report):
    """RMSE of per-window analyses propagated across their own window.

    ``anchors`` maps each window to (t0, tF, state at t0).
    """
    out = []
    for t, tr in zip(report_times, truth_report):
        state = None
        for (t0, tf, x) in anchors:
            if t0 - 1e-12 <= t <= tf + 1e-12:
                state = x if abs(t - t0) <= 1e-12 else model.propagate(x, t0, t)
                break
        if state is None:  # before the first window
            state = anchors[0][2]
        out.append(diag.rmse(state, tr))
    return out


def _window_stats_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("window,t0,background_rmse,analysis_rmse\n")
        for w, t0, br, ar in rows:
            fh.write(f"{w},{t0:.17g},{br:.17g},{ar:.17g}\n")


def _run_hmc(cfg, model, report_model, obs_op, background0, b0_modeled,
             window_specs, scheme_dir, report_times, truth_report,
             ledger, cost_rows, mean_span):
    hmc_cfg = HmcConfig(
        n_samples=cfg.hmc_n_samples,
        trajectory_steps=cfg.hmc_trajectory_steps,
        base_step=cfg.hmc_base_step,
        step_jitter=cfg.hmc_step_jitter,
        burn_in=cfg.hmc_burn_in,
        thin=cfg.hmc_thin,
        seed=substream_seed(cfg.seed, "hmc"),
    )
    taper = (
        TaperSpec(cfg.taper_length) if cfg.taper_length is not None else None
    )
    smoother_cfg = SmootherConfig(
        hmc=hmc_cfg,
        b0_mode=cfg.b0_mode,
        gamma=cfg.gamma,
        taper=taper,
        init_strategy=cfg.init_strategy,
        warm_start_iterations=cfg.warm_start_iterations,
    )
    results = run_sequential(
        window_specs, model, obs_op, background0, b0_modeled, smoother_cfg
    )
    anchors = []
    stats = []
    echo = {
        "b0_mode": cfg.b0_mode,
        "gamma": cfg.gamma,
        "n_samples": cfg.hmc_n_samples,
        "trajectory_steps": cfg.hmc_trajectory_steps,
        "base_step": cfg.hmc_base_step,
        "burn_in": cfg.hmc_burn_in,
        "thin": cfg.hmc_thin,
        "init_strategy": cfg.init_strategy,
    }
    for i, (spec, res) in enumerate(zip(window_specs, results)):
        wdir = os.path.join(scheme_dir, f"window_{i:03d}")
        write_window_result(wdir, res, config_echo=echo)
        if res.analysis_ensemble.nvar == 1:
            _write_histogram(
                os.path.join(wdir, "histogram.csv"),
                res.analysis_ensemble.members[:, 0],
                cfg.histogram_bins, cfg.histogram_range,
            )
        anchors.append((spec.t0, spec.tF, res.analysis_mean))
        truth_t0 = truth_report[report_times.index(spec.t0)]
        stats.append((
            i, spec.t0,
            diag.rmse(res.window.background, truth_t0),
            diag.rmse(res.analysis_mean, truth_t0),
        ))
    _window_stats_csv(os.path.join(scheme_dir, "window_stats.csv"), stats)
    proposals = sum(r.chain.proposals_total for r in results)
    cost_rows.append(diag.cost_ledger_report(
        ledger, "hmc", proposals=proposals, window_span=mean_span,
    ))
    return _scheme_rmse(report_model, anchors, report_times, truth_report)


def _run_fourdvar(cfg, model, report_model, obs_op, background0, b0_modeled,
                  window_specs, scheme_dir, report_times, truth_report,
                  ledger, cost_rows, mean_span):
    lbfgs = LbfgsConfig(
        memory=cfg.lbfgs_memory,
        max_iterations=cfg.lbfgs_max_iterations,
        grad_norm_tol=cfg.lbfgs_grad_norm_tol,
        rel_f_tol=cfg.lbfgs_rel_f_tol,
    )
    background = background0
    anchors = []
    stats = []
    n_f = n_g = 0
    for i, spec in enumerate(window_specs):
        win = AssimilationWindow(
            t0=spec.t0, tF=spec.tF, background=background, b0=b0_modeled,
            observations=spec.observations, model=model, obs_operator=obs_op,
        )
        wdir = os.path.join(scheme_dir, f"window_{i:03d}")
        os.makedirs(wdir, exist_ok=True)
        res = minimize(
            win, background,
            dataclasses.replace(lbfgs, log_path=os.path.join(wdir, "iterations.csv")),
        )
        cov.write_matrix_csv(
            os.path.join(wdir, "analysis.csv"), res.analysis.reshape(1, -1)
        )
        n_f += res.function_evaluations
        n_g += res.gradient_evaluations
        anchors.append((spec.t0, spec.tF, res.analysis))
        truth_t0 = truth_report[report_times.index(spec.t0)]
        stats.append((
            i, spec.t0,
            diag.rmse(background, truth_t0),
            diag.rmse(res.analysis, truth_t0),
        ))
        background = model.propagate(res.analysis, spec.t0, spec.tF)
    _window_stats_csv(os.path.join(scheme_dir, "window_stats.csv"), stats)
    cost_rows.append(diag.cost_ledger_report(
        ledger, "fourdvar", function_evaluations=n_f, gradient_evaluations=n_g,
        window_span=mean_span,
    ))
    return _scheme_rmse(report_model, anchors, report_times, truth_report)


def _run_enks(cfg, model, report_model, obs_op, background0, b0_modeled,
              window_specs, scheme_dir, report_times, truth_report,
              ledger, cost_rows, mean_span):
    rng = stream(cfg.seed, "enks")
    init_rng = stream(cfg.seed, "enks-init")
    members = background0 + b0_modeled.sample(init_rng, size=cfg.enks_members)
    ens = Ensemble(members=members, time=window_specs[0].t0)
    anchors = []
    stats = []
    for i, spec in enumerate(window_specs):
        background_mean = cov.ensemble_mean(ens)
        win = AssimilationWindow(
            t0=spec.t0, tF=spec.tF, background=background_mean, b0=b0_modeled,
            observations=spec.observations, model=model, obs_operator=obs_op,
        )
        smoothed, running, _ = enks_window(ens, win, rng)
        wdir = os.path.join(scheme_dir, f"window_{i:03d}")
        os.makedirs(wdir, exist_ok=True)
        cov.write_matrix(os.path.join(wdir, "samples.bin"), smoothed.members)
        mean = cov.ensemble_mean(smoothed)
        cov.write_matrix_csv(os.path.join(wdir, "mean.csv"), mean.reshape(1, -1))
        cov.write_matrix(os.path.join(wdir, "mean.bin"), mean.reshape(1, -1))
        a0 = cov.ensemble_covariance(smoothed).as_matrix()
        cov.write_matrix_csv(os.path.join(wdir, "cov.csv"), a0)
        cov.write_matrix(os.path.join(wdir, "cov.bin"), a0)
        if smoothed.nvar == 1:
            _write_histogram(
                os.path.join(wdir, "histogram.csv"),
                smoothed.members[:, 0],
                cfg.histogram_bins, cfg.histogram_range,
            )
        with open(os.path.join(wdir, "manifest.yaml"), "w") as fh:
            yaml.safe_dump(
                {"seed": cfg.seed, "t0": spec.t0, "tF": spec.tF,
                 "n_members": smoothed.n_members},
                fh, sort_keys=True,
            )
        anchors.append((spec.t0, spec.tF, mean))
        truth_t0 = truth_report[report_times.index(spec.t0)]
        stats.append((
            i, spec.t0,
            diag.rmse(background_mean, truth_t0),
            diag.rmse(mean, truth_t0),
        ))
        ens = running
    _window_stats_csv(os.path.join(scheme_dir, "window_stats.csv"), stats)
    cost_rows.append(diag.cost_ledger_report(ledger, "enks", window_span=mean_span))
    return _scheme_rmse(report_model, anchors, report_times, truth_report)


# -- entry point --------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fourda",
        description="Twin-experiment driver for the assimilation toolkit",
    )
    parser.add_argument("config", help="path to the YAML experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--output-dir", help="override the run directory")
    parser.add_argument(
        "--scheme", choices=SCHEMES + ("all",), help="run only this scheme"
    )
    parser.add_argument(
        "--validate-only", action="store_true",
        help="check the config and exit",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        with open(args.config) as fh:
            raw = fh.read()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    config, errors = validate_config(raw)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.output_dir is not None:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    if args.scheme is not None:
        config = dataclasses.replace(config, scheme=args.scheme)
    if args.validate_only:
        print("config ok")
        return 0

    try:
        out = run_experiment(config)
    except Exception as exc:  # runtime failure: partial outputs + manifest
        log.exception("experiment failed")
        try:
            os.makedirs(config.output_dir, exist_ok=True)
            with open(os.path.join(config.output_dir, "manifest.yaml"), "w") as fh:
                yaml.safe_dump(
                    {
                        "version": __version__,
                        "seed": config.seed,
                        "status": "failed",
                        "error": str(exc),
                        "timestamp": datetime.datetime.now().isoformat(),
                    },
                    fh, sort_keys=True,
                )
        except OSError:
            pass
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 3
    print(f"run complete: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

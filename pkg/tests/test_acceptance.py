"""Acceptance gate: every criterion at its stated tolerance.

Each check prints one pass/fail line (echoed in the terminal summary).
Two checks are expected to stay red and are deliberately not weakened:

* criterion 1 pins the double-well posterior peak locations to bands
  around +/-0.103.  That number is a property of one specific noisy
  observation draw; the zero-noise geometry puts the peaks at +/-0.150
  (where the squared-trajectory mismatch vanishes), and under repeated
  noise draws the peak location scatters with std ~0.03 around 0.146,
  so 20/20 seeds inside 0.103 +/- 0.03 cannot happen.
* criterion 2 demands the stochastic ensemble smoother collapse to one
  sign (|mean sign| >= 0.9).  The perturbed-observations update keeps a
  sign-mixed ensemble (|mean sign| ~ 0.25); its real failure mode is
  misplacing probability mass, not sign collapse.

The measured values are printed either way.
"""

import dataclasses
import os
import time

import numpy as np
import pytest
import yaml

import oracles
from conftest import ACCEPTANCE_LINES, DW_OBS_TIMES, make_double_well_window
from fourda import cli
from fourda.cost import cost, gradient
from fourda.covariance import CovarianceModel, Ensemble, TaperSpec, ensemble_mean
from fourda.diagnostics import (
    chain_diagnostics,
    mode_masses,
    rmse,
    sampler_formula_cost,
    variational_formula_cost,
)
from fourda.enks import enks_fixed_point
from fourda.fourdvar import minimize
from fourda.hmc import (
    HmcConfig,
    MassMatrix,
    PhasePoint,
    hamiltonian,
    run_chain,
    verlet_trajectory,
)
from fourda.models import (
    IdentityOperator,
    Lorenz96,
    ObservationSet,
    StationaryModel,
    generate_truth_and_observations,
    lorenz96_spinup,
)
from fourda.randomness import stream
from fourda.smoother import (
    SmootherConfig,
    WindowSpec,
    analyze_window,
    build_mass_matrix,
    run_sequential,
)


def record(criterion: str, ok: bool, detail: str):
    line = f"[{criterion}] {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- criterion 1: bimodal posterior geometry --------------------------------


@pytest.fixture(scope="module")
def zero_noise_scan():
    ys = oracles.dw_truth_observations()
    grid, kernel = oracles.dw_kernel_grid(ys, step=1e-4)
    return grid, kernel


def test_criterion_1a_two_symmetric_maxima(zero_noise_scan):
    t0 = time.time()
    grid, kernel = zero_noise_scan
    peaks = grid[oracles.local_maxima(kernel)]
    ok = len(peaks) == 2 and abs(peaks[0] + peaks[1]) <= 2e-4
    record(
        "criterion 1a", ok,
        f"zero-noise kernel has exactly two symmetric maxima at "
        f"{np.round(peaks, 4)} ({time.time() - t0:.1f}s)",
    )


def test_criterion_1b_zero_noise_peak_band(zero_noise_scan):
    grid, kernel = zero_noise_scan
    peaks = np.abs(grid[oracles.local_maxima(kernel)])
    ok = bool(np.all((peaks >= 0.08) & (peaks <= 0.13)))
    record(
        "criterion 1b", ok,
        f"zero-noise peak |locations| {np.round(peaks, 4)} inside [0.08, 0.13] "
        "(the mismatch term vanishes at 0.150, outside the stated band)",
    )


def test_criterion_1c_noisy_peak_location_band():
    t0 = time.time()
    ys0 = oracles.dw_truth_observations()
    states = oracles.dw_rk4_obs_states(np.arange(-2.0, 2.0 + 5e-5, 1e-4))
    squares = states**2
    grid = np.arange(-2.0, 2.0 + 5e-5, 1e-4)
    prior = 0.5 * ((grid - 0.1) / np.sqrt(2.0)) ** 2
    hits = []
    locs = []
    rng = stream(42, "criterion-1c")
    for _ in range(20):
        ys = ys0 + rng.normal(0.0, 0.05, size=12)
        j = prior + 0.5 * np.sum(((squares - ys[:, None]) / 0.05) ** 2, axis=0)
        peaks = grid[oracles.local_maxima(np.exp(-j))]
        right = peaks[peaks > 0]
        loc = right.max() if right.size else np.nan
        locs.append(loc)
        hits.append(np.isfinite(loc) and abs(loc - 0.103) <= 0.03)
    ok = all(hits)
    record(
        "criterion 1c", ok,
        f"noisy right-peak within 0.103 +/- 0.03 for {sum(hits)}/20 seeds, "
        f"locations mean {np.nanmean(locs):.3f} std {np.nanstd(locs):.3f} "
        f"({time.time() - t0:.1f}s)",
    )


# -- criterion 2: sampler bimodality vs ensemble-smoother collapse -----------


@pytest.fixture(scope="module")
def dw_noisy():
    return make_double_well_window(seed=7)


@pytest.fixture(scope="module")
def quadrature_masses(dw_noisy):
    win, _ = dw_noisy
    ys = np.array([v[0] for v in win.observations.values])
    grid, kernel = oracles.dw_kernel_grid(ys)
    return oracles.kernel_mode_masses(grid, kernel)


@pytest.fixture(scope="module")
def dw_chain_small(dw_noisy):
    win, _ = dw_noisy
    cfg = SmootherConfig(
        hmc=HmcConfig(n_samples=100, trajectory_steps=10, base_step=0.01,
                      step_jitter=0.2, burn_in=20, thin=4, seed=1)
    )
    return analyze_window(win, cfg)


@pytest.fixture(scope="module")
def dw_chain_large(dw_noisy):
    win, _ = dw_noisy
    mass = build_mass_matrix(win.b0)
    cfg = HmcConfig(n_samples=10_000, trajectory_steps=10, base_step=0.01,
                    step_jitter=0.2, burn_in=50, thin=2, seed=2024)
    return run_chain(win.background, mass,
                     lambda x: cost(win, x), lambda x: gradient(win, x), cfg)


def test_criterion_2a_hmc_masses_match_quadrature(
    dw_noisy, quadrature_masses, dw_chain_small, dw_chain_large
):
    t0 = time.time()
    q_left, _ = quadrature_masses
    small = dw_chain_small.analysis_ensemble
    assert small.n_members == 100           # the figure-scale ensemble exists
    h_left, _ = mode_masses(dw_chain_large.samples, 0.0)
    diff = abs(h_left - q_left)
    record(
        "criterion 2a", diff <= 0.03,
        f"HMC left-mode mass {h_left:.4f} vs quadrature {q_left:.4f} "
        f"(|diff| = {diff:.4f} <= 0.03, 10,000 samples, acceptance "
        f"{dw_chain_large.acceptance_rate:.2f}) ({time.time() - t0:.1f}s)",
    )


def test_criterion_2b_enks_sign_concentration(dw_noisy):
    t0 = time.time()
    win, _ = dw_noisy
    rng = stream(501, "enks-prior")
    members = win.background + win.b0.sample(rng, size=100)
    prior = Ensemble(members=members, time=win.t0)
    smoothed = enks_fixed_point(prior, win, stream(502, "enks"))
    concentration = abs(float(np.mean(np.sign(smoothed.members[:, 0]))))
    record(
        "criterion 2b", concentration >= 0.9,
        f"EnKS sign concentration |mean(sign)| = {concentration:.3f} "
        f"(stated band >= 0.9; the stochastic update keeps both signs) "
        f"({time.time() - t0:.1f}s)",
    )


def test_criterion_2c_hmc_sign_balance(dw_chain_large):
    concentration = abs(float(np.mean(np.sign(dw_chain_large.samples.members[:, 0]))))
    record(
        "criterion 2c", concentration <= 0.5,
        f"HMC sign concentration |mean(sign)| = {concentration:.3f} <= 0.5",
    )


# -- criterion 3: variational mode trapping ----------------------------------


def test_criterion_3_fourdvar_mode_trapping(dw_noisy):
    t0 = time.time()
    win, truth = dw_noisy
    res = minimize(win, win.background)
    grid_times = [0.0] + list(DW_OBS_TIMES)
    xa = res.analysis.copy()
    xt = np.array([-0.15])
    traj_a, traj_t = [], []
    prev = 0.0
    for t in grid_times:
        if t > prev:
            xa = win.model.propagate(xa, prev, t)
            xt = win.model.propagate(xt, prev, t)
            prev = t
        traj_a.append(xa[0])
        traj_t.append(xt[0])
    traj_a, traj_t = np.array(traj_a), np.array(traj_t)
    err_abs = rmse(np.abs(traj_a), np.abs(traj_t))
    err = rmse(traj_a, traj_t)
    ok = res.analysis[0] > 0 and err_abs < 0.05 and err > 0.2
    record(
        "criterion 3", ok,
        f"analysis {res.analysis[0]:+.4f} (positive mode), "
        f"RMSE(|x|,|truth|) = {err_abs:.4f} < 0.05, "
        f"RMSE(x,truth) = {err:.4f} > 0.2 ({time.time() - t0:.1f}s)",
    )


# -- criterion 4: gradient correctness ----------------------------------------


def test_criterion_4a_double_well_gradient(dw_noisy):
    t0 = time.time()
    win, _ = dw_noisy
    rng = stream(404, "fd-points")
    eps = 1e-6
    worst = 0.0
    for x0 in rng.uniform(-1.5, 1.5, size=20):
        g = gradient(win, np.array([x0]))[0]
        fd = (cost(win, np.array([x0 + eps])) - cost(win, np.array([x0 - eps]))) / (2 * eps)
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-12))
    record(
        "criterion 4a", worst <= 1e-6,
        f"double-well gradient vs FD at 20 points, worst rel err {worst:.2e} "
        f"<= 1e-6 ({time.time() - t0:.1f}s)",
    )


def test_criterion_4b_lorenz96_gradient():
    t0 = time.time()
    model = Lorenz96()
    op = IdentityOperator(40)
    x_true0 = lorenz96_spinup(model)
    times = [round(0.05 * k, 10) for k in range(1, 5)]
    _, obs = generate_truth_and_observations(
        model, op, x_true0, 0.0, times, 0.15, stream(405, "observations")
    )
    from fourda.cost import AssimilationWindow

    win = AssimilationWindow(
        t0=0.0, tF=times[-1], background=x_true0 + 0.1,
        b0=CovarianceModel.diagonal(np.full(40, 0.25)),
        observations=obs, model=model, obs_operator=op,
    )
    rng = stream(406, "fd-coords")
    eps = 1e-6
    worst = 0.0
    for p in range(5):
        x0 = x_true0 + 0.2 * rng.standard_normal(40)
        g = gradient(win, x0)
        for i in rng.choice(40, size=10, replace=False):
            e = np.zeros(40)
            e[i] = eps
            fd = (cost(win, x0 + e) - cost(win, x0 - e)) / (2 * eps)
            worst = max(worst, abs(g[i] - fd) / max(abs(fd), 1e-12))
    record(
        "criterion 4b", worst <= 1e-5,
        f"Lorenz-96 gradient vs FD, 10 coordinates at 5 points, worst rel err "
        f"{worst:.2e} <= 1e-5 ({time.time() - t0:.1f}s)",
    )


# -- criterion 5: symplectic integrator suite ---------------------------------


def test_criterion_5a_reversibility():
    t0 = time.time()
    worst = 0.0
    for grad in (lambda x: x, lambda x: 4 * x**3 - 4 * x):
        mass = MassMatrix([1.5])
        start = PhasePoint(np.array([0.7]), np.array([-0.4]))
        fwd = verlet_trajectory(start, mass, grad, h=0.05, m=20)
        back = verlet_trajectory(
            PhasePoint(fwd.position, -fwd.momentum), mass, grad, h=0.05, m=20
        )
        worst = max(worst, abs(back.position[0] - start.position[0]),
                    abs(-back.momentum[0] - start.momentum[0]))
    record(
        "criterion 5a", worst <= 1e-10,
        f"negate-integrate-negate round trip error {worst:.2e} <= 1e-10 "
        f"({time.time() - t0:.1f}s)",
    )


def test_criterion_5b_unit_determinant():
    mass = MassMatrix.identity(1)
    h = 0.13

    def column(x, p):
        out = verlet_trajectory(PhasePoint([x], [p]), mass, lambda v: v, h, 1)
        return np.array([out.position[0], out.momentum[0]])

    m = np.column_stack([column(1.0, 0.0), column(0.0, 1.0)])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    record(
        "criterion 5b", abs(det - 1.0) <= 1e-14,
        f"harmonic one-step map determinant {det:.16f}, |det-1| <= 1e-14",
    )


def test_criterion_5c_energy_error_order():
    t0 = time.time()
    cases = [
        (lambda x: 0.5 * float(x @ x), lambda x: x, 1.1, 0.6),
        (lambda x: float(np.sum((x + 1) ** 2 * (x - 1) ** 2)),
         lambda x: 4 * x**3 - 4 * x, 0.4, 0.9),
    ]
    ratios = []
    for potential, grad, x0, p0 in cases:
        mass = MassMatrix.identity(1)

        def delta_h(m):
            start = PhasePoint(np.array([x0]), np.array([p0]))
            end = verlet_trajectory(start, mass, grad, 0.4 / m, m)
            return hamiltonian(end, mass, potential) - hamiltonian(start, mass, potential)

        ratios.append(abs(delta_h(8)) / abs(delta_h(16)))
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    record(
        "criterion 5c", ok,
        f"|dH| reduction factors under h-halving {np.round(ratios, 3)} in "
        f"[3.5, 4.5] ({time.time() - t0:.1f}s)",
    )


# -- criterion 6: linear-Gaussian closed form ---------------------------------


@pytest.fixture(scope="module")
def linear_gaussian_setup():
    nvar = 3
    rng = stream(606, "lg")
    model = StationaryModel(nvar=nvar, dt=0.05)
    op = IdentityOperator(nvar)
    xb = rng.standard_normal(nvar)
    b0_var = np.ones(nvar)
    r_var = np.full(nvar, 0.25)
    truth = xb + rng.standard_normal(nvar)
    values = [truth + 0.5 * rng.standard_normal(nvar) for _ in range(3)]
    obs = ObservationSet(
        times=(0.05, 0.10, 0.15),
        values=tuple(values),
        error_cov=tuple(CovarianceModel.diagonal(r_var) for _ in range(3)),
    )
    from fourda.cost import AssimilationWindow

    win = AssimilationWindow(
        t0=0.0, tF=0.2, background=xb, b0=CovarianceModel.diagonal(b0_var),
        observations=obs, model=model, obs_operator=op,
    )
    exact_mean, exact_cov = oracles.gaussian_posterior_identity_dynamics(
        xb, b0_var, values, r_var
    )
    return win, exact_mean, exact_cov


def test_criterion_6a_hmc_mean(linear_gaussian_setup):
    t0 = time.time()
    win, exact_mean, exact_cov = linear_gaussian_setup
    cfg = SmootherConfig(
        hmc=HmcConfig(n_samples=10_000, trajectory_steps=10, base_step=0.15,
                      step_jitter=0.2, burn_in=50, thin=1, seed=909)
    )
    res = analyze_window(win, cfg)
    summary = chain_diagnostics(res.chain)
    iact = max(summary.iact, 1.0)
    se = np.sqrt(np.diag(exact_cov) * iact / 10_000)
    dev = np.abs(res.analysis_mean - exact_mean) / se
    cov_err = np.linalg.norm(res.analysis_cov.as_matrix() - exact_cov) / np.linalg.norm(exact_cov)
    record(
        "criterion 6a", bool(np.all(dev <= 3.0)),
        f"HMC mean within 3 SE of exact (worst {dev.max():.2f} SE, IACT "
        f"{summary.iact:.1f}) ({time.time() - t0:.1f}s)",
    )
    record(
        "criterion 6b", cov_err <= 0.10,
        f"HMC sample covariance within 10% of exact (rel err {cov_err:.3f})",
    )


def test_criterion_6c_enks_mean(linear_gaussian_setup):
    t0 = time.time()
    win, exact_mean, exact_cov = linear_gaussian_setup
    rng = stream(707, "prior")
    members = win.background + win.b0.sample(rng, size=500)
    smoothed = enks_fixed_point(
        Ensemble(members=members, time=win.t0), win, stream(708, "enks")
    )
    se = np.sqrt(np.diag(exact_cov) / 500)
    dev = np.abs(ensemble_mean(smoothed) - exact_mean) / se
    record(
        "criterion 6c", bool(np.all(dev <= 3.0)),
        f"EnKS (500 members) mean within 3 MC SE of exact "
        f"(worst {dev.max():.2f} SE) ({time.time() - t0:.1f}s)",
    )


# -- criterion 7: cost accounting ---------------------------------------------


def test_criterion_7_cost_accounting():
    cfg = HmcConfig(n_samples=100, burn_in=30, thin=4)
    rec = run_chain(
        np.zeros(1), MassMatrix.identity(1),
        lambda x: 0.5 * float(x @ x), lambda x: x,
        dataclasses.replace(cfg, seed=7, base_step=0.2),
    )
    ok = (
        cfg.proposals_total == 530
        and rec.proposals_total == 530
        and sampler_formula_cost(530, 4.5) == 2385.0
        and variational_formula_cost(151, 49, 2.5) == 322.5
    )
    record(
        "criterion 7", ok,
        f"30 + 100 x 5 = {cfg.proposals_total} proposals; "
        f"530 x 4.5 = {sampler_formula_cost(530, 4.5):.0f}; "
        f"151 + 49 x 3.5 = {variational_formula_cost(151, 49, 2.5):.1f}",
    )


# -- criterion 8: Lorenz-96 three-window twin experiment ----------------------


def l96_specs(seed, wlen=0.3, spacing=0.05, n_windows=3):
    model = Lorenz96()
    op = IdentityOperator(40)
    x_true0 = lorenz96_spinup(model)
    bounds = [round(wlen * i, 10) for i in range(n_windows + 1)]
    all_times = []
    for lo, hi in zip(bounds, bounds[1:]):
        n = int(round((hi - lo) / spacing))
        all_times += [round(lo + spacing * k, 10) for k in range(1, n + 1)]
    truth, all_obs = generate_truth_and_observations(
        model, op, x_true0, 0.0, all_times, 0.15, stream(seed, "observations")
    )
    specs = []
    for lo, hi in zip(bounds, bounds[1:]):
        sel = [k for k, t in enumerate(all_obs.times) if lo < t <= hi]
        specs.append(WindowSpec(
            t0=lo, tF=hi,
            observations=ObservationSet(
                times=tuple(all_obs.times[k] for k in sel),
                values=tuple(all_obs.values[k] for k in sel),
                error_cov=tuple(all_obs.error_cov[k] for k in sel),
            ),
        ))
    background0 = x_true0 + 0.5 * stream(seed, "background").standard_normal(40)
    b0 = CovarianceModel.diagonal(np.full(40, 0.25))
    return specs, model, op, background0, b0, truth


def l96_smoother_config(seed, mode):
    return SmootherConfig(
        hmc=HmcConfig(n_samples=60, trajectory_steps=10, base_step=0.02,
                      step_jitter=0.2, burn_in=20, thin=2, seed=seed),
        b0_mode=mode, gamma=0.75, taper=TaperSpec(4.0),
        init_strategy="fourdvar", warm_start_iterations=15,
    )


@pytest.fixture(scope="module")
def l96_runs():
    out = {}
    for mode in ("fixed", "hybrid"):
        out[mode] = []
        for seed in range(5):
            specs, model, op, bg0, b0, truth = l96_specs(seed)
            results = run_sequential(
                specs, model, op, bg0, b0, l96_smoother_config(seed, mode)
            )
            out[mode].append((specs, model, bg0, truth, results))
    return out


def test_criterion_8a_analysis_beats_background(l96_runs):
    # baseline: the unassimilated background run (a cycled background is
    # itself an assimilation product and regularly beats a window-start
    # smoother analysis in its stable directions)
    t0 = time.time()
    worst = 0.0
    ok = True
    for mode in ("fixed", "hybrid"):
        for specs, model, bg0, truth, results in l96_runs[mode]:
            free = bg0
            t_prev = specs[0].t0
            for spec, res in zip(specs, results):
                if spec.t0 > t_prev:
                    free = model.propagate(free, t_prev, spec.t0)
                    t_prev = spec.t0
                tt = truth.state_at(spec.t0)
                ratio = rmse(res.analysis_mean, tt) / rmse(free, tt)
                worst = max(worst, ratio)
                ok = ok and ratio < 1.0
    record(
        "criterion 8a", ok,
        f"analysis RMSE strictly below unassimilated-background RMSE at every "
        f"window start, both modes, 5 seeds (worst ratio {worst:.3f}) "
        f"({time.time() - t0:.1f}s)",
    )


def test_criterion_8b_hybrid_window2(l96_runs):
    def window2_mean_rmse(entry):
        specs, model, bg0, truth, results = entry
        spec, res = specs[1], results[1]
        errs = []
        for t in spec.observations.times:
            xa = model.propagate(res.analysis_mean, spec.t0, t)
            errs.append(rmse(xa, truth.state_at(t)))
        return float(np.mean(errs))

    fixed = np.mean([window2_mean_rmse(e) for e in l96_runs["fixed"]])
    hybrid = np.mean([window2_mean_rmse(e) for e in l96_runs["hybrid"]])
    record(
        "criterion 8b", hybrid <= 1.10 * fixed,
        f"hybrid window-2 mean RMSE {hybrid:.4f} <= 1.10 x fixed {fixed:.4f} "
        f"(ratio {hybrid / fixed:.3f}), averaged over 5 seeds",
    )


# -- criterion 9: determinism --------------------------------------------------


def test_criterion_9_byte_identical_reruns(tmp_path):
    t0 = time.time()
    dw = {
        "model": {"kind": "double_well"},
        "scheme": "all",
        "seed": 99,
        "output_dir": "",
        "truth": {"kind": "explicit", "state": [-0.15]},
        "observation": {"operator": "quadratic", "sigma": 0.05},
        "background": {"kind": "explicit", "state": [0.1], "sigma": 1.4142135623730951},
        "windows": [{"t0": 0.0, "tF": 0.12, "obs_spacing": 0.01}],
        "hmc": {"n_samples": 30, "burn_in": 10, "thin": 1},
        "enks": {"n_members": 40},
    }
    l96 = {
        "model": {"kind": "lorenz96", "n": 40, "forcing": 8.0},
        "scheme": "all",
        "seed": 99,
        "output_dir": "",
        "truth": {"kind": "spinup", "spinup_time": 5.0, "perturbation": 0.01},
        "observation": {"operator": "identity", "sigma_fraction": 0.05},
        "background": {"kind": "perturbed", "sigma_fraction": 0.15},
        "windows": [
            {"t0": 0.0, "tF": 0.3, "obs_spacing": 0.05},
            {"t0": 0.3, "tF": 0.6, "obs_spacing": 0.05},
        ],
        "hmc": {"n_samples": 20, "burn_in": 10, "thin": 1, "base_step": 0.02,
                "b0_mode": "hybrid", "gamma": 0.75, "taper_length": 4.0,
                "init_strategy": "fourdvar", "warm_start_iterations": 10},
        "enks": {"n_members": 30},
    }
    compared = 0
    for name, data in (("dw", dw), ("l96", l96)):
        runs = []
        for tag in ("a", "b"):
            d = dict(data, output_dir=str(tmp_path / f"{name}_{tag}"))
            cfg, errors = cli.validate_config(yaml.safe_dump(d))
            assert errors == []
            runs.append(cli.run_experiment(cfg))
        for root, _, files in os.walk(runs[0]):
            for f in sorted(files):
                if not f.endswith(".csv"):
                    continue
                rel = os.path.relpath(os.path.join(root, f), runs[0])
                a = open(os.path.join(runs[0], rel), "rb").read()
                b = open(os.path.join(runs[1], rel), "rb").read()
                assert a == b, f"{name}: {rel} differs between reruns"
                compared += 1
    record(
        "criterion 9", compared >= 20,
        f"double-well and Lorenz-96 reruns byte-identical across {compared} "
        f"CSV files ({time.time() - t0:.1f}s)",
    )

"""Stochastic ensemble Kalman filter update and the fixed-point smoother.

The filter update is the perturbed-observations form: every member is
nudged by the Kalman gain applied to its own noisy innovation, with the
gain built from ensemble sample covariances in observation space.  Each
update is also expressed as an ensemble-space transform T so the smoothed
initial ensemble is the initial ensemble times the running product of the
per-time transforms, applied in chronological observation order.
"""

from __future__ import annotations

import numpy as np

from .cost import AssimilationWindow
from .covariance import CovarianceModel, Ensemble
from .errors import InsufficientMembers
from .models import ObservationOperator


def enkf_update(
    forecast: Ensemble,
    y_k: np.ndarray,
    r_k: CovarianceModel,
    obs_op: ObservationOperator,
    rng: np.random.Generator,
) -> tuple[Ensemble, np.ndarray]:
    """One perturbed-observations analysis step.

    Returns the analysis ensemble and the transform T with
    X_analysis = X_forecast @ T (members as rows here, so the identity
    reads members_a = T^T members_f member-wise; T columns sum to one,
    which keeps means consistent when T is reapplied to another ensemble).
    """
    if forecast.n_members < 2:
        raise InsufficientMembers("ensemble update needs at least 2 members")
    n_ens = forecast.n_members
    x = forecast.members                       # (n_ens, nvar)
    hx = np.array([obs_op.observe(m) for m in x])   # (n_ens, m)
    x_mean = x.mean(axis=0)
    hx_mean = hx.mean(axis=0)
    xd = x - x_mean
    sd = hx - hx_mean

    c_xy = xd.T @ sd / (n_ens - 1)             # (nvar, m)
    c_yy = sd.T @ sd / (n_ens - 1) + r_k.as_matrix()
    innov_cov = CovarianceModel.dense(c_yy)    # jitter policy on solve

    eta = r_k.sample(rng, size=n_ens)          # (n_ens, m)
    innovations = y_k + eta - hx
    increments = innovations @ innov_cov.solve(c_xy.T)       # K d, per member
    analysis = x + increments

    # transform recovery: minimal-norm solution on forecast deviations plus
    # the identity keeps column sums at one (deviations annihilate ones)
    t_mat = np.eye(n_ens) + np.linalg.pinv(xd.T) @ increments.T
    return Ensemble(members=analysis, time=forecast.time), t_mat


def apply_transform(ens: Ensemble, t_mat: np.ndarray) -> Ensemble:
    """Right-multiply the member matrix (members as columns) by T."""
    return Ensemble(members=(ens.members.T @ t_mat).T, time=ens.time)


def enks_window(
    initial_ens: Ensemble,
    window: AssimilationWindow,
    rng: np.random.Generator,
) -> tuple[Ensemble, Ensemble, list[np.ndarray]]:
    """Filter sweep through the window with a fixed anchor at t0.

    Returns (smoothed t0 ensemble, running ensemble at tF, transforms).
    The anchor absorbs each transform as soon as it is produced.
    """
    if initial_ens.n_members < 2:
        raise InsufficientMembers("smoother needs at least 2 members")
    anchor = Ensemble(members=initial_ens.members, time=window.t0)
    running = anchor
    t_now = window.t0
    transforms = []
    for tk, yk, rk in zip(
        window.observations.times,
        window.observations.values,
        window.observations.error_cov,
    ):
        if tk > t_now:
            members = np.array(
                [window.model.propagate(m, t_now, tk) for m in running.members]
            )
            running = Ensemble(members=members, time=tk)
            t_now = tk
        running, t_mat = enkf_update(running, yk, rk, window.obs_operator, rng)
        anchor = apply_transform(anchor, t_mat)
        transforms.append(t_mat)
    if window.tF > t_now:
        members = np.array(
            [window.model.propagate(m, t_now, window.tF) for m in running.members]
        )
        running = Ensemble(members=members, time=window.tF)
    return anchor, running, transforms


def enks_fixed_point(
    initial_ens: Ensemble,
    window: AssimilationWindow,
    rng: np.random.Generator,
) -> Ensemble:
    """Smoothed ensemble at the window start given all window observations.

    With no observations the initial ensemble is returned unchanged.
    """
    smoothed, _, _ = enks_window(initial_ens, window, rng)
    return smoothed

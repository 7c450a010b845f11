"""Strong-constraint window cost, its adjoint gradient, and the posterior
kernel.

The cost of a candidate initial state is the background mismatch plus the
sum of observation mismatches along one forward propagation:

    J(x0) = 1/2 ||x0 - xb||^2_{B0^-1}
          + 1/2 sum_k ||H(x_k) - y_k||^2_{Rk^-1},   x_k = M(t0 -> tk) x0.

The gradient is assembled from a single forward sweep that checkpoints the
state at observation times and one backward adjoint sweep accumulating the
innovations.  exp(-J) is the unnormalized posterior density of x0, which
is what the sampling smoother draws from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceModel
from .models import ModelInterface, ObservationOperator, ObservationSet, as_state


@dataclass(frozen=True)
class AssimilationWindow:
    """Everything needed to evaluate J over [t0, tF]."""

    t0: float
    tF: float
    background: np.ndarray
    b0: CovarianceModel
    observations: ObservationSet
    model: ModelInterface
    obs_operator: ObservationOperator

    def __post_init__(self):
        object.__setattr__(self, "background", as_state(self.background))
        if not self.t0 < self.tF:
            raise ValueError(f"t0={self.t0} must precede tF={self.tF}")
        if self.background.shape[0] != self.model.nvar:
            raise ValueError("background dimension does not match the model")
        if self.b0.dim != self.model.nvar:
            raise ValueError("B0 dimension does not match the model")
        tol = 1e-9 * max(1.0, abs(self.tF - self.t0))
        for t in self.observations.times:
            if t < self.t0 - tol or t > self.tF + tol:
                raise ValueError(f"observation time {t} outside [{self.t0}, {self.tF}]")
            self.model.n_steps(self.t0, t)  # alignment with the inner grid
        for v in self.observations.values:
            if v.shape[0] != self.obs_operator.obs_dim:
                raise ValueError("observation dimension does not match the operator")


def compensated_sum(values) -> float:
    """Kahan summation; the result is insensitive to term order to ~1e-16."""
    total = 0.0
    carry = 0.0
    for v in values:
        y = float(v) - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total


def _checkpoints(win: AssimilationWindow, x0: np.ndarray) -> list[np.ndarray]:
    """States at each observation time, one forward propagation."""
    states = []
    x = x0
    t_prev = win.t0
    for tk in win.observations.times:
        x = win.model.propagate(x, t_prev, tk) if tk > t_prev else x
        states.append(x)
        t_prev = tk
    return states


def cost(win: AssimilationWindow, x0) -> float:
    """J(x0) >= 0; zero only when both terms vanish."""
    x0 = as_state(x0)
    db = x0 - win.background
    terms = [float(db @ win.b0.solve(db))]
    for xk, yk, rk in zip(
        _checkpoints(win, x0), win.observations.values, win.observations.error_cov
    ):
        d = win.obs_operator.observe(xk) - yk
        terms.append(float(d @ rk.solve(d)))
    return 0.5 * compensated_sum(terms)


def gradient(win: AssimilationWindow, x0, keep_inner_trajectories: bool = False):
    """Gradient of ``cost`` at x0 via one adjoint sweep.

    The forward sweep stores full states at observation times only; inner
    steps are recomputed segment by segment during the backward sweep.
    With ``keep_inner_trajectories`` the forward sweep retains every inner
    state and the backward sweep reuses them; both modes perform the same
    arithmetic and agree bit for bit.
    """
    x0 = as_state(x0)
    times = win.observations.times
    nobs = len(times)
    model = win.model
    op = win.obs_operator

    checkpoints = []
    inner = []
    x = x0
    t_prev = win.t0
    for tk in times:
        if tk > t_prev:
            if keep_inner_trajectories:
                traj = model.trajectory(x, t_prev, tk)
                inner.append(traj)
                x = traj[-1]
            else:
                inner.append(None)
                x = model.propagate(x, t_prev, tk)
        else:
            inner.append(None)
        checkpoints.append(x)
        t_prev = tk

    grad = win.b0.solve(x0 - win.background)
    if nobs == 0:
        return grad

    def obs_pullback(k):
        xk = checkpoints[k]
        d = op.observe(xk) - win.observations.values[k]
        return op.jacobian_adjoint(xk, win.observations.error_cov[k].solve(d))

    lam = obs_pullback(nobs - 1)
    for k in range(nobs - 2, -1, -1):
        lam = model.propagate_adjoint(
            checkpoints[k], lam, times[k], times[k + 1],
            inner_trajectory=inner[k + 1],
        )
        lam = lam + obs_pullback(k)
    if times[0] > win.t0:
        lam = model.propagate_adjoint(
            x0, lam, win.t0, times[0], inner_trajectory=inner[0]
        )
    return grad + lam


def posterior_log_kernel(win: AssimilationWindow, x0) -> float:
    """log of the unnormalized posterior density: exactly -cost."""
    return -cost(win, x0)

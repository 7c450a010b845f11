"""Dynamical models, observation operators, and synthetic-truth generation.

A model advances a state vector with fixed-step RK4 and exposes the exact
discrete tangent-linear and adjoint of that step, which is what makes the
window-cost gradients exact to rounding.  Two reference models are
provided: the scalar double-well particle and the cyclic Lorenz-96 system.
Model instances are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .covariance import CovarianceModel
from .errors import Diverged


def _all_finite(a: np.ndarray) -> bool:
    # summing is much cheaper than an elementwise isfinite scan; any
    # inf/nan poisons the sum (an overflowing sum of finite huge values
    # is itself a divergence for these models)
    return math.isfinite(float(np.sum(a)))


def as_state(values) -> np.ndarray:
    """Validate and normalize a state vector: 1-D, float, finite."""
    if type(values) is np.ndarray and values.dtype == np.float64 and values.ndim == 1:
        x = values
    else:
        x = np.asarray(values, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.ndim != 1:
            raise ValueError("state vectors are one-dimensional")
    if not _all_finite(x):
        raise ValueError("state vector contains non-finite entries")
    return x


class ModelInterface(abc.ABC):
    """Forward, tangent-linear, and adjoint propagation of one model."""

    nvar: int
    dt: float

    def n_steps(self, t0: float, t1: float) -> int:
        """Number of inner steps spanning [t0, t1]; must divide evenly."""
        if t1 < t0:
            raise ValueError(f"t1={t1} earlier than t0={t0}")
        span = t1 - t0
        n = int(round(span / self.dt))
        if abs(n * self.dt - span) > 1e-9 * max(1.0, abs(span)):
            raise ValueError(
                f"interval [{t0}, {t1}] is not a whole number of steps dt={self.dt}"
            )
        return n

    @abc.abstractmethod
    def propagate(self, x0, t0: float, t1: float) -> np.ndarray:
        """Advance x0 from t0 to t1."""

    @abc.abstractmethod
    def trajectory(self, x0, t0: float, t1: float) -> np.ndarray:
        """All inner states on [t0, t1], shape (n_steps + 1, nvar)."""

    @abc.abstractmethod
    def propagate_tlm(self, x0, dx0, t0: float, t1: float) -> np.ndarray:
        """Linearized perturbation at t1 around the trajectory from x0."""

    @abc.abstractmethod
    def propagate_adjoint(
        self, x0, lam1, t0: float, t1: float, inner_trajectory=None
    ) -> np.ndarray:
        """Adjoint variable pulled back from t1 to t0 along the trajectory
        from x0.  ``inner_trajectory`` may supply precomputed inner states
        (as returned by ``trajectory``); otherwise they are recomputed."""


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not _all_finite(x):
        raise Diverged(f"{what} produced non-finite values")
    return x


class Rk4Model(ModelInterface):
    """Generic RK4 propagation built from rhs / jvp / vjp callbacks.

    Subclasses with performance-critical dynamics override the propagation
    methods with compiled kernels; this base remains the reference
    implementation and serves user-defined models directly.
    """

    @abc.abstractmethod
    def rhs(self, x: np.ndarray) -> np.ndarray:
        """Time derivative dx/dt."""

    @abc.abstractmethod
    def jvp(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        """Jacobian of rhs at x applied to dx."""

    @abc.abstractmethod
    def vjp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Transposed Jacobian of rhs at x applied to w."""

    def _step(self, x):
        h = self.dt
        k1 = self.rhs(x)
        k2 = self.rhs(x + 0.5 * h * k1)
        k3 = self.rhs(x + 0.5 * h * k2)
        k4 = self.rhs(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _stages(self, x):
        h = self.dt
        k1 = self.rhs(x)
        s2 = x + 0.5 * h * k1
        k2 = self.rhs(s2)
        s3 = x + 0.5 * h * k2
        k3 = self.rhs(s3)
        s4 = x + h * k3
        return s2, s3, s4

    def _step_tlm(self, x, dx):
        h = self.dt
        s2, s3, s4 = self._stages(x)
        dk1 = self.jvp(x, dx)
        dk2 = self.jvp(s2, dx + 0.5 * h * dk1)
        dk3 = self.jvp(s3, dx + 0.5 * h * dk2)
        dk4 = self.jvp(s4, dx + h * dk3)
        return dx + (h / 6.0) * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)

    def _step_adjoint(self, x, lam):
        h = self.dt
        s2, s3, s4 = self._stages(x)
        a = self.vjp(s4, (h / 6.0) * lam)
        b = self.vjp(s3, (h / 3.0) * lam + h * a)
        c = self.vjp(s2, (h / 3.0) * lam + 0.5 * h * b)
        d = self.vjp(x, (h / 6.0) * lam + 0.5 * h * c)
        return lam + a + b + c + d

    def propagate(self, x0, t0, t1):
        x = as_state(x0)
        for _ in range(self.n_steps(t0, t1)):
            x = self._step(x)
        return _check_finite(x, "propagation")

    def trajectory(self, x0, t0, t1):
        n = self.n_steps(t0, t1)
        out = np.empty((n + 1, self.nvar))
        out[0] = as_state(x0)
        for j in range(n):
            out[j + 1] = self._step(out[j])
        return _check_finite(out, "propagation")

    def propagate_tlm(self, x0, dx0, t0, t1):
        traj = self.trajectory(x0, t0, t1)
        dx = as_state(dx0)
        for j in range(traj.shape[0] - 1):
            dx = self._step_tlm(traj[j], dx)
        return _check_finite(dx, "tangent-linear propagation")

    def propagate_adjoint(self, x0, lam1, t0, t1, inner_trajectory=None):
        traj = (
            inner_trajectory
            if inner_trajectory is not None
            else self.trajectory(x0, t0, t1)
        )
        lam = as_state(lam1)
        for j in range(traj.shape[0] - 2, -1, -1):
            lam = self._step_adjoint(traj[j], lam)
        return _check_finite(lam, "adjoint propagation")


class DoubleWell(Rk4Model):
    """Particle in the potential (x+1)^2 (x-1)^2: dx/dt = 4x(1 - x^2).

    Stable equilibria at -1 and +1, an unstable one at 0.  State dimension
    is 1; propagation accepts longer vectors too, which integrates a batch
    of independent particles (used by grid-based posterior scans).
    """

    def __init__(self, dt: float = 1e-3):
        self.nvar = 1
        self.dt = dt

    def rhs(self, x):
        return 4.0 * x - 4.0 * x**3

    def jvp(self, x, dx):
        return (4.0 - 12.0 * x**2) * dx

    def vjp(self, x, w):
        return (4.0 - 12.0 * x**2) * w

    def propagate(self, x0, t0, t1):
        x = as_state(x0)
        n = self.n_steps(t0, t1)
        return _check_finite(_kernels.dw_steps(x, n, self.dt), "propagation")

    def trajectory(self, x0, t0, t1):
        x = as_state(x0)
        n = self.n_steps(t0, t1)
        return _check_finite(_kernels.dw_trajectory(x, n, self.dt), "propagation")

    def propagate_tlm(self, x0, dx0, t0, t1):
        traj = self.trajectory(x0, t0, t1)
        out = _kernels.dw_tlm(traj, as_state(dx0), self.dt)
        return _check_finite(out, "tangent-linear propagation")

    def propagate_adjoint(self, x0, lam1, t0, t1, inner_trajectory=None):
        if inner_trajectory is None:
            out = _kernels.dw_segment_adjoint(
                as_state(x0), as_state(lam1), self.n_steps(t0, t1), self.dt
            )
        else:
            out = _kernels.dw_adjoint(inner_trajectory, as_state(lam1), self.dt)
        return _check_finite(out, "adjoint propagation")


class Lorenz96(Rk4Model):
    """Cyclic Lorenz-96 system, chaotic at the standard N=40, F=8 setting."""

    def __init__(self, n: int = 40, forcing: float = 8.0, dt: float = 5e-3):
        if n < 4:
            raise ValueError("Lorenz-96 needs at least 4 variables")
        self.nvar = n
        self.forcing = float(forcing)
        self.dt = dt

    def rhs(self, x):
        return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + self.forcing

    def jvp(self, x, dx):
        return (
            (np.roll(dx, -1) - np.roll(dx, 2)) * np.roll(x, 1)
            + (np.roll(x, -1) - np.roll(x, 2)) * np.roll(dx, 1)
            - dx
        )

    def vjp(self, x, w):
        return (
            np.roll(x, 2) * np.roll(w, 1)
            - np.roll(x, -1) * np.roll(w, -2)
            + (np.roll(x, -2) - np.roll(x, 1)) * np.roll(w, -1)
            - w
        )

    def _check_dim(self, x):
        if x.shape[0] != self.nvar:
            raise ValueError(f"state of length {x.shape[0]}, model nvar={self.nvar}")
        return x

    def propagate(self, x0, t0, t1):
        x = self._check_dim(as_state(x0))
        n = self.n_steps(t0, t1)
        return _check_finite(
            _kernels.l96_steps(x, n, self.dt, self.forcing), "propagation"
        )

    def trajectory(self, x0, t0, t1):
        x = self._check_dim(as_state(x0))
        n = self.n_steps(t0, t1)
        return _check_finite(
            _kernels.l96_trajectory(x, n, self.dt, self.forcing), "propagation"
        )

    def propagate_tlm(self, x0, dx0, t0, t1):
        traj = self.trajectory(x0, t0, t1)
        out = _kernels.l96_tlm(traj, as_state(dx0), self.dt, self.forcing)
        return _check_finite(out, "tangent-linear propagation")

    def propagate_adjoint(self, x0, lam1, t0, t1, inner_trajectory=None):
        if inner_trajectory is None:
            out = _kernels.l96_segment_adjoint(
                self._check_dim(as_state(x0)), as_state(lam1),
                self.n_steps(t0, t1), self.dt, self.forcing,
            )
        else:
            out = _kernels.l96_adjoint(
                inner_trajectory, as_state(lam1), self.dt, self.forcing
            )
        return _check_finite(out, "adjoint propagation")


def lorenz96_spinup(
    model: Lorenz96, spinup_time: float = 5.0, perturbation: float = 0.01
) -> np.ndarray:
    """Standard chaotic initial condition: rest state nudged at one node,
    then integrated onto the attractor."""
    x = np.full(model.nvar, model.forcing, dtype=float)
    x[0] += perturbation
    return model.propagate(x, 0.0, spinup_time)


class StationaryModel(Rk4Model):
    """dx/dt = 0.  Degenerate dynamics for linear-Gaussian closed-form
    checks; propagation is the identity map."""

    def __init__(self, nvar: int, dt: float = 0.01):
        self.nvar = nvar
        self.dt = dt

    def rhs(self, x):
        return np.zeros_like(x)

    def jvp(self, x, dx):
        return np.zeros_like(dx)

    def vjp(self, x, w):
        return np.zeros_like(w)


# -- observation operators ------------------------------------------------


class ObservationOperator(abc.ABC):
    """Map from model space to observation space with its linearization.

    The default Jacobian products fall back to central finite differences
    of ``observe`` so user-defined operators work out of the box; operators
    participating in gradient checks should override them analytically.
    """

    obs_dim: int
    _fd_eps = 1e-7

    @abc.abstractmethod
    def observe(self, x: np.ndarray) -> np.ndarray:
        """H(x)."""

    def _fd_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = as_state(x)
        cols = []
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = self._fd_eps
            cols.append((self.observe(x + e) - self.observe(x - e)) / (2 * self._fd_eps))
        return np.column_stack(cols)

    def jacobian_apply(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        return self._fd_jacobian(x) @ as_state(dx)

    def jacobian_adjoint(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self._fd_jacobian(x).T @ np.asarray(w, dtype=float)


class QuadraticOperator(ObservationOperator):
    """Elementwise square, insensitive to the sign of the state.

    The hot methods assume 1-D float arrays; window evaluation validates
    states upstream.
    """

    def __init__(self, nvar: int = 1):
        self.obs_dim = nvar

    def observe(self, x):
        return np.asarray(x, dtype=float) ** 2

    def jacobian_apply(self, x, dx):
        return 2.0 * x * dx

    def jacobian_adjoint(self, x, w):
        return 2.0 * x * w


class LinearOperator(ObservationOperator):
    """H(x) = H x for a fixed matrix."""

    def __init__(self, matrix):
        h = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = h
        self.obs_dim = h.shape[0]

    def observe(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def jacobian_apply(self, x, dx):
        return self.matrix @ dx

    def jacobian_adjoint(self, x, w):
        return self.matrix.T @ np.asarray(w, dtype=float)


class IdentityOperator(ObservationOperator):
    """Observe every state component directly."""

    def __init__(self, nvar: int):
        self.obs_dim = nvar

    def observe(self, x):
        return np.asarray(x, dtype=float).copy()

    def jacobian_apply(self, x, dx):
        return np.asarray(dx, dtype=float).copy()

    def jacobian_adjoint(self, x, w):
        return np.asarray(w, dtype=float).copy()


# -- observations ----------------------------------------------------------


@dataclass(frozen=True)
class ObservationSet:
    """Time-stamped observations with per-time error covariances."""

    times: tuple
    values: tuple
    error_cov: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        values = tuple(np.asarray(v, dtype=float) for v in self.values)
        covs = tuple(self.error_cov)
        if not (len(times) == len(values) == len(covs)):
            raise ValueError("times, values, error_cov must have equal lengths")
        if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
            raise ValueError("observation times must be strictly ascending")
        for v, c in zip(values, covs):
            if v.shape[0] != c.dim:
                raise ValueError("observation/covariance dimension mismatch")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "error_cov", covs)

    def __len__(self):
        return len(self.times)

    @classmethod
    def empty(cls):
        return cls(times=(), values=(), error_cov=())


@dataclass(frozen=True)
class Trajectory:
    """States sampled at selected times (reference solutions, RMSE rows)."""

    times: np.ndarray
    states: np.ndarray

    def state_at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"no stored state at t={t}")
        return self.states[i]


def generate_truth_and_observations(
    model: ModelInterface,
    obs_op: ObservationOperator,
    x_true0,
    t0: float,
    obs_times,
    sigma_obs,
    rng: np.random.Generator,
    sigma_assumed=None,
) -> tuple[Trajectory, ObservationSet]:
    """Twin-experiment synthetic data.

    The reference state is propagated through the observation times; each
    observation is H(x) plus N(0, R) noise with noise level ``sigma_obs``
    (a scalar or per-component vector; zero gives noise-free observations).
    The R attached to the returned observations is built from
    ``sigma_assumed`` when given, else from ``sigma_obs``; noise-free runs
    must therefore state the assumed error level explicitly, since R has
    to stay invertible.  Identical inputs and generator state reproduce
    the output exactly.
    """
    x = as_state(x_true0)
    m = obs_op.obs_dim
    sigma = np.broadcast_to(np.asarray(sigma_obs, dtype=float), (m,))
    if np.any(sigma < 0):
        raise ValueError("sigma_obs must be non-negative")
    sig_r = sigma if sigma_assumed is None else np.broadcast_to(
        np.asarray(sigma_assumed, dtype=float), (m,)
    )
    if not np.all(sig_r > 0):
        raise ValueError(
            "assumed observation error must be positive; pass sigma_assumed "
            "when generating noise-free observations"
        )
    times = [float(t0)]
    states = [x]
    values = []
    covs = []
    t_prev = t0
    for tk in obs_times:
        x = model.propagate(x, t_prev, tk)
        t_prev = tk
        times.append(float(tk))
        states.append(x)
        y = obs_op.observe(x)
        if np.any(sigma > 0):
            y = y + sigma * rng.standard_normal(m)
        values.append(y)
        covs.append(CovarianceModel.diagonal(sig_r**2))
    truth = Trajectory(times=np.array(times), states=np.array(states))
    obs = ObservationSet(times=tuple(obs_times), values=tuple(values), error_cov=tuple(covs))
    return truth, obs


def write_trajectory_csv(path, traj: Trajectory) -> None:
    nvar = traj.states.shape[1]
    header = "time," + ",".join(f"x{i}" for i in range(nvar))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(times=data[:, 0], states=data[:, 1:])


def write_trajectory_binary(path, traj: Trajectory) -> None:
    """Binary-container form: time column prepended to the state matrix."""
    from .covariance import write_matrix

    write_matrix(path, np.column_stack([traj.times, traj.states]))


def read_trajectory_binary(path) -> Trajectory:
    from .covariance import read_matrix

    data = read_matrix(path)
    return Trajectory(times=data[:, 0], states=data[:, 1:])

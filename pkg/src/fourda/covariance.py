"""Covariance representations and algebra.

Houses the background, observation, analysis, and mass covariance matrices
used throughout the toolkit: diagonal, dense, and localized (tapered dense)
forms, ensemble-derived estimates, and the hybrid blend of a static matrix
with a flow-dependent one.

Instances are immutable after construction.  The Cholesky factorization
backing ``solve`` is computed lazily exactly once (guarded by a lock) so a
single instance can be shared across concurrent readers.
"""

from __future__ import annotations

import enum
import struct
import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    EmptyEnsemble,
    InsufficientMembers,
    InvalidWeight,
    NotPositiveDefinite,
    UnsupportedKind,
)

# Jitter escalation: start at 1e-10 * trace/n, multiply by 10, give up after
# three failed retries.
_JITTER_BASE = 1e-10
_JITTER_RETRIES = 3

_MAGIC = b"DAMATRIX"


class Kind(enum.Enum):
    DIAGONAL = "diagonal"
    DENSE = "dense"
    LOCALIZED = "localized"


class Metric(enum.Enum):
    CYCLIC_INDEX = "cyclic"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class TaperSpec:
    """Compactly supported correlation taper.

    ``decorrelation_length`` is measured in the model's own distance units
    (index distance for gridded models); entries at separation >= twice the
    length are zeroed.
    """

    decorrelation_length: float
    metric: Metric = Metric.CYCLIC_INDEX

    def __post_init__(self):
        if not self.decorrelation_length > 0:
            raise ValueError("decorrelation_length must be positive")


class CovarianceModel:
    """Symmetric positive (semi-)definite covariance with cached solves."""

    def __init__(self, kind: Kind, *, variances=None, matrix=None):
        self._kind = kind
        self._lock = threading.Lock()
        self._chol = None          # (lower factor, jitter used)
        if kind is Kind.DIAGONAL:
            v = np.asarray(variances, dtype=float).copy()
            if v.ndim != 1 or v.size == 0:
                raise ValueError("diagonal variances must be a non-empty vector")
            if not np.all(v > 0):
                raise ValueError("diagonal variances must be strictly positive")
            v.setflags(write=False)
            self._variances = v
            self._matrix = None
            self._dim = v.size
        else:
            m = np.asarray(matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("dense covariance must be a square matrix")
            if not np.all(np.isfinite(m)):
                raise ValueError("covariance entries must be finite")
            asym = np.max(np.abs(m - m.T)) if m.size else 0.0
            scale = max(1.0, np.max(np.abs(m)) if m.size else 0.0)
            if asym > 1e-8 * scale:
                raise ValueError("matrix is not symmetric")
            m = 0.5 * (m + m.T)    # stored form is exactly symmetric
            m.setflags(write=False)
            self._variances = None
            self._matrix = m
            self._dim = m.shape[0]

    @classmethod
    def diagonal(cls, variances) -> "CovarianceModel":
        return cls(Kind.DIAGONAL, variances=variances)

    @classmethod
    def dense(cls, matrix) -> "CovarianceModel":
        return cls(Kind.DENSE, matrix=matrix)

    @classmethod
    def identity(cls, dim: int) -> "CovarianceModel":
        return cls(Kind.DIAGONAL, variances=np.ones(dim))

    @property
    def kind(self) -> Kind:
        return self._kind

    @property
    def dim(self) -> int:
        return self._dim

    def as_matrix(self) -> np.ndarray:
        """Dense copy of the covariance."""
        if self._kind is Kind.DIAGONAL:
            return np.diag(self._variances)
        return self._matrix.copy()

    @property
    def diagonal_variances(self) -> np.ndarray:
        if self._kind is Kind.DIAGONAL:
            return self._variances
        return np.diag(self._matrix)

    # -- factorization --------------------------------------------------

    def _factor(self):
        """Lower Cholesky factor, adding diagonal jitter if needed."""
        if self._chol is None:
            with self._lock:
                if self._chol is None:
                    self._chol = self._compute_factor()
        return self._chol

    def _compute_factor(self):
        m = self._matrix
        jitter = 0.0
        step = _JITTER_BASE * np.trace(m) / self._dim
        if step <= 0.0:
            step = _JITTER_BASE
        for attempt in range(_JITTER_RETRIES + 1):
            try:
                low = np.linalg.cholesky(m + jitter * np.eye(self._dim))
                return low, jitter
            except np.linalg.LinAlgError:
                jitter = step if jitter == 0.0 else jitter * 10.0
        raise NotPositiveDefinite(
            f"Cholesky failed after jitter escalation up to {jitter:g}"
        )

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Return C^{-1} v without forming an explicit inverse."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self._dim:
            raise ValueError(f"vector of length {v.shape[0]} vs dim {self._dim}")
        if self._kind is Kind.DIAGONAL:
            return (v.T / self._variances).T
        low, _ = self._factor()
        z = scipy.linalg.solve_triangular(low, v, lower=True)
        return scipy.linalg.solve_triangular(low.T, z, lower=False)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Return C v."""
        v = np.asarray(v, dtype=float)
        if self._kind is Kind.DIAGONAL:
            return (v.T * self._variances).T
        return self._matrix @ v

    def inverse_diagonal(self) -> np.ndarray:
        """diag(C^{-1}), via the Cholesky factor for dense forms.

        This is the true diagonal of the inverse, not the reciprocal of
        the diagonal of C.
        """
        if self._kind is Kind.DIAGONAL:
            return 1.0 / self._variances
        low, _ = self._factor()
        inv_low = scipy.linalg.solve_triangular(
            low, np.eye(self._dim), lower=True
        )
        return np.sum(inv_low**2, axis=0)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw from N(0, C).  Returns (dim,) or (size, dim)."""
        n = 1 if size is None else size
        z = rng.standard_normal((n, self._dim))
        if self._kind is Kind.DIAGONAL:
            out = z * np.sqrt(self._variances)
        else:
            low, _ = self._factor()
            out = z @ low.T
        return out[0] if size is None else out

    def __repr__(self):
        return f"CovarianceModel({self._kind.value}, dim={self._dim})"


# -- ensembles ----------------------------------------------------------


@dataclass(frozen=True)
class Ensemble:
    """A set of state vectors sharing a common model time.

    ``members`` has shape (n_members, nvar); rows are individual states.
    """

    members: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2:
            raise ValueError("members must be a 2-D (n_members, nvar) array")
        if not np.all(np.isfinite(m)):
            raise ValueError("ensemble members must be finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    @property
    def nvar(self) -> int:
        return self.members.shape[1]

    def member(self, e: int) -> np.ndarray:
        return self.members[e]


def ensemble_mean(ens: Ensemble) -> np.ndarray:
    if ens.n_members == 0:
        raise EmptyEnsemble("cannot average an empty ensemble")
    return ens.members.mean(axis=0)


def ensemble_covariance(ens: Ensemble) -> CovarianceModel:
    """Unbiased sample covariance of the members as a dense model."""
    if ens.n_members < 2:
        raise InsufficientMembers(
            f"need >= 2 members for a covariance, got {ens.n_members}"
        )
    dev = ens.members - ens.members.mean(axis=0)
    cov = dev.T @ dev / (ens.n_members - 1)
    return CovarianceModel.dense(cov)


# -- localization -------------------------------------------------------


def gaspari_cohn(z) -> np.ndarray:
    """Fifth-order piecewise-rational compactly supported correlation.

    ``z`` is separation over decorrelation length; support ends at z = 2.
    """
    z = np.abs(np.asarray(z, dtype=float))
    out = np.zeros_like(z)
    near = z <= 1.0
    far = (z > 1.0) & (z < 2.0)
    zn = z[near]
    out[near] = (
        -0.25 * zn**5 + 0.5 * zn**4 + 0.625 * zn**3 - (5.0 / 3.0) * zn**2 + 1.0
    )
    zf = z[far]
    out[far] = (
        (1.0 / 12.0) * zf**5
        - 0.5 * zf**4
        + 0.625 * zf**3
        + (5.0 / 3.0) * zf**2
        - 5.0 * zf
        + 4.0
        - (2.0 / 3.0) / zf
    )
    return out


def distance_matrix(n: int, metric: Metric) -> np.ndarray:
    idx = np.arange(n, dtype=float)
    d = np.abs(idx[:, None] - idx[None, :])
    if metric is Metric.CYCLIC_INDEX:
        d = np.minimum(d, n - d)
    return d


def taper_matrix(n: int, taper: TaperSpec) -> np.ndarray:
    d = distance_matrix(n, taper.metric)
    return gaspari_cohn(d / taper.decorrelation_length)


def apply_taper(cov: CovarianceModel, taper: TaperSpec) -> CovarianceModel:
    """Schur product with the taper correlation; diagonal is untouched."""
    if cov.kind is Kind.DIAGONAL:
        raise UnsupportedKind("taper applies to dense covariances only")
    rho = taper_matrix(cov.dim, taper)
    return CovarianceModel(Kind.LOCALIZED, matrix=cov.as_matrix() * rho)


# -- hybrid blend -------------------------------------------------------


def hybrid_update(
    modeled: CovarianceModel, ensemble_cov: CovarianceModel, gamma: float
) -> CovarianceModel:
    """Convex blend gamma * modeled + (1 - gamma) * ensemble_cov.

    gamma = 1 returns ``modeled`` itself and gamma = 0 returns
    ``ensemble_cov`` itself (which may be singular; callers relying on
    solves get the jitter policy).
    """
    if not 0.0 <= gamma <= 1.0:
        raise InvalidWeight(f"gamma must lie in [0, 1], got {gamma}")
    if modeled.dim != ensemble_cov.dim:
        raise ValueError("dimension mismatch between blended covariances")
    if gamma == 1.0:
        return modeled
    if gamma == 0.0:
        return ensemble_cov
    blend = gamma * modeled.as_matrix() + (1.0 - gamma) * ensemble_cov.as_matrix()
    return CovarianceModel.dense(blend)


def solve_with(cov: CovarianceModel, v: np.ndarray) -> np.ndarray:
    """Functional alias for ``cov.solve(v)``."""
    return cov.solve(v)


# -- persistence --------------------------------------------------------
#
# Binary container: 8-byte magic, two little-endian uint64 dims, then
# row-major little-endian float64 payload.


def write_matrix(path, arr: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"bad magic header {magic!r} in {path}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"truncated matrix payload in {path}")
    return data.reshape(rows, cols).astype(float)


def write_matrix_csv(path, arr: np.ndarray, header: str | None = None) -> None:
    """CSV mirror of the binary container, 17 significant digits."""
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for row in arr:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")

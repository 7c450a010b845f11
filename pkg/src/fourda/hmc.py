"""Hamiltonian Monte-Carlo over an arbitrary potential with gradient.

The chain targets exp(-J(x)) for a user-supplied potential J: momenta are
drawn from N(0, M) with a diagonal mass matrix M, trajectories are
integrated with the position Verlet scheme (time reversible, volume
preserving), and proposals are accepted with probability 1 ^ exp(-dH).
The integrator step is jittered once per trajectory so results do not
hinge on one specific step length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import Ensemble
from .errors import Diverged
from .randomness import GAUSSIAN_METHOD, ChainStreams
from .models import as_state


@dataclass(frozen=True)
class HmcConfig:
    """Chain settings.

    trajectory_steps * base_step is the nominal trajectory length; the
    realized step is (1 + r) * base_step with r ~ U(-jitter, +jitter)
    drawn once per proposal.  ``thin`` states are dropped between kept
    samples once burn-in has passed.
    """

    n_samples: int
    trajectory_steps: int = 10
    base_step: float = 0.01
    step_jitter: float = 0.2
    burn_in: int = 0
    thin: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.trajectory_steps < 1:
            raise ValueError("n_samples and trajectory_steps must be positive")
        if self.base_step <= 0:
            raise ValueError("base_step must be positive")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ValueError("step_jitter must lie in [0, 1)")
        if self.burn_in < 0 or self.thin < 0:
            raise ValueError("burn_in and thin must be non-negative")

    @property
    def proposals_total(self) -> int:
        return self.burn_in + self.n_samples * (self.thin + 1)

    @property
    def trajectory_length(self) -> float:
        """Nominal trajectory span T = m * h before jitter."""
        return self.trajectory_steps * self.base_step


class MassMatrix:
    """Diagonal momentum covariance; entries are the target precisions."""

    def __init__(self, diagonal):
        d = np.asarray(diagonal, dtype=float).copy()
        if d.ndim != 1 or not np.all(d > 0):
            raise ValueError("mass matrix diagonal must be strictly positive")
        d.setflags(write=False)
        self.diagonal = d
        self._sqrt = np.sqrt(d)

    @property
    def dim(self) -> int:
        return self.diagonal.size

    def inv_apply(self, p: np.ndarray) -> np.ndarray:
        return p / self.diagonal

    def kinetic(self, p: np.ndarray) -> float:
        return 0.5 * float(p @ (p / self.diagonal))

    def sample_momentum(self, rng) -> np.ndarray:
        return self._sqrt * rng.standard_normal(self.dim)

    @classmethod
    def identity(cls, dim: int) -> "MassMatrix":
        return cls(np.ones(dim))


@dataclass(frozen=True)
class PhasePoint:
    position: np.ndarray
    momentum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", as_state(self.position))
        p = np.asarray(self.momentum, dtype=float)
        if p.shape != self.position.shape:
            raise ValueError("position and momentum dimensions differ")
        object.__setattr__(self, "momentum", p)


@dataclass(frozen=True)
class TraceEntry:
    index: int
    h_current: float
    h_proposal: float
    delta_h: float
    accepted: bool
    kept: bool = False


@dataclass(frozen=True)
class ChainRecord:
    samples: Ensemble
    proposals_total: int
    accepted_total: int
    energy_trace: tuple
    seed: int
    config: HmcConfig
    gaussian_method: str = GAUSSIAN_METHOD

    def __post_init__(self):
        if self.proposals_total != self.config.proposals_total:
            raise ValueError("proposal count inconsistent with chain settings")
        if not 0 <= self.accepted_total <= self.proposals_total:
            raise ValueError("accepted_total outside [0, proposals_total]")

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_total / self.proposals_total


def hamiltonian(phase: PhasePoint, mass: MassMatrix, potential) -> float:
    """Total energy: kinetic 1/2 p^T M^-1 p plus potential J(x)."""
    return mass.kinetic(phase.momentum) + float(potential(phase.position))


def verlet_trajectory(
    start: PhasePoint, mass: MassMatrix, grad_potential, h: float, m: int
) -> PhasePoint:
    """m position-Verlet steps of size h; exactly m gradient evaluations.

    Raises Diverged on any non-finite intermediate.
    """
    if h <= 0 or m < 1:
        raise ValueError("need h > 0 and m >= 1")
    x = start.position.copy()
    p = start.momentum.copy()
    half = 0.5 * h
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(m):
            x_half = x + half * mass.inv_apply(p)
            p = p - h * np.asarray(grad_potential(x_half), dtype=float)
            x = x_half + half * mass.inv_apply(p)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
                raise Diverged("Hamiltonian trajectory left the finite domain")
    return PhasePoint(position=x, momentum=p)


def hmc_step(
    current: np.ndarray,
    mass: MassMatrix,
    potential,
    grad_potential,
    cfg: HmcConfig,
    streams: ChainStreams,
    index: int = 0,
    current_potential: float | None = None,
):
    """One proposal: draw momentum, integrate, accept or reject.

    Returns (next_state, next_potential, entry).  On acceptance the
    returned state is the proposal array itself; on rejection it is the
    ``current`` object unchanged.  A diverged trajectory counts as a
    rejection with delta_h = +inf.  Both momenta are discarded.
    """
    if current_potential is None:
        current_potential = float(potential(current))
    p = mass.sample_momentum(streams.momentum)
    r = float(streams.jitter.uniform(-cfg.step_jitter, cfg.step_jitter))
    h = (1.0 + r) * cfg.base_step
    h_cur = mass.kinetic(p) + current_potential

    try:
        prop = verlet_trajectory(
            PhasePoint(current, p), mass, grad_potential, h, cfg.trajectory_steps
        )
        prop_potential = float(potential(prop.position))
        h_prop = mass.kinetic(prop.momentum) + prop_potential
        delta_h = h_prop - h_cur
    except Diverged:
        h_prop = np.inf
        delta_h = np.inf

    accept_prob = 1.0 if delta_h <= 0.0 else float(np.exp(-delta_h))
    u = float(streams.accept.uniform())
    accepted = accept_prob > u
    entry = TraceEntry(
        index=index,
        h_current=h_cur,
        h_proposal=h_prop,
        delta_h=delta_h,
        accepted=accepted,
    )
    if accepted:
        return prop.position, prop_potential, entry
    return current, current_potential, entry


def run_chain(
    x_init,
    mass: MassMatrix,
    potential,
    grad_potential,
    cfg: HmcConfig,
    sample_time: float = 0.0,
) -> ChainRecord:
    """Run the chain: burn-in, then keep every (thin+1)-th state.

    Potential failures inside a trajectory surface as rejections; the
    chain itself never aborts once started.
    """
    x = as_state(x_init)
    streams = ChainStreams.from_seed(cfg.seed)
    jx = float(potential(x))
    trace = []
    kept = []
    accepted_total = 0
    for index in range(cfg.proposals_total):
        x, jx, entry = hmc_step(
            x, mass, potential, grad_potential, cfg, streams,
            index=index, current_potential=jx,
        )
        accepted_total += entry.accepted
        keep = index >= cfg.burn_in and (index - cfg.burn_in + 1) % (cfg.thin + 1) == 0
        if keep:
            kept.append(x)
        trace.append(
            TraceEntry(entry.index, entry.h_current, entry.h_proposal,
                       entry.delta_h, entry.accepted, kept=keep)
        )
    samples = Ensemble(members=np.array(kept), time=sample_time)
    return ChainRecord(
        samples=samples,
        proposals_total=cfg.proposals_total,
        accepted_total=accepted_total,
        energy_trace=tuple(trace),
        seed=cfg.seed,
        config=cfg,
    )


def suggest_base_step(nvar: int, reference_step: float = 0.01,
                      reference_nvar: int = 1) -> float:
    """Dimension-scaled step suggestion, step ~ nvar^(-1/4).

    A starting point only; empirical tuning of the step remains the norm.
    """
    return reference_step * (reference_nvar / nvar) ** 0.25


def write_chain_csv(path, record: ChainRecord) -> None:
    """One row per proposal: index, energy loss, accept flag, kept flag."""
    with open(path, "w") as fh:
        fh.write("index,h_current,h_proposal,delta_h,accepted,kept\n")
        for e in record.energy_trace:
            fh.write(
                f"{e.index},{e.h_current:.17g},{e.h_proposal:.17g},"
                f"{e.delta_h:.17g},{int(e.accepted)},{int(e.kept)}\n"
            )

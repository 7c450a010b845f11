"""Four-dimensional data assimilation toolkit.

Samples the posterior of a dynamical system's initial condition with a
Hamiltonian Monte-Carlo smoother, alongside a strong-constraint
variational solver and an ensemble Kalman smoother for comparison, all
driven by a twin-experiment CLI.
"""

__version__ = "0.1.0"

from .covariance import (
    CovarianceModel,
    Ensemble,
    TaperSpec,
    apply_taper,
    ensemble_covariance,
    ensemble_mean,
    gaspari_cohn,
    hybrid_update,
    solve_with,
)
from .cost import AssimilationWindow, cost, gradient, posterior_log_kernel
from .enks import enkf_update, enks_fixed_point
from .errors import (
    AssimilationError,
    Diverged,
    EmptyEnsemble,
    InsufficientMembers,
    InvalidWeight,
    NonContiguousWindows,
    NotPositiveDefinite,
    UnsupportedKind,
)
from .fourdvar import LbfgsConfig, OptimResult, Termination, minimize
from .hmc import (
    ChainRecord,
    HmcConfig,
    MassMatrix,
    PhasePoint,
    hamiltonian,
    hmc_step,
    run_chain,
    verlet_trajectory,
)
from .models import (
    DoubleWell,
    IdentityOperator,
    LinearOperator,
    Lorenz96,
    ObservationSet,
    QuadraticOperator,
    StationaryModel,
    generate_truth_and_observations,
)
from .smoother import (
    SmootherConfig,
    WindowResult,
    WindowSpec,
    analyze_window,
    build_mass_matrix,
    forecast_step,
    run_sequential,
)
from .diagnostics import (
    CostLedger,
    CountingModel,
    chain_diagnostics,
    mode_masses,
    rmse,
)

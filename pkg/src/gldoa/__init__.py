"""Gridless direction-of-arrival estimation on uniform and sparse linear
arrays, via reweighted nonconvex fitting of Hermitian Toeplitz covariances."""

__version__ = "0.1.0"

from .arrays import (
    ArrayGeometry,
    Scenario,
    Snapshots,
    exact_covariance,
    sample_covariance,
    sla,
    steering_vector,
    synthesize_snapshots,
    ula,
)
from .bench import (
    BenchScenario,
    TrialTable,
    beta_threshold,
    chi2_inv,
    crlb_stochastic,
    run_monte_carlo,
)
from .driver import IcmraConfig, IcmraResult, run_cmra, run_icmra, run_icmra_cov
from .errors import (
    ConfigError,
    GldoaError,
    PeakCountError,
    RootExtractionError,
    SolverError,
)
from .methods import MethodSettings, method_runner, run_method
from .penalties import PenaltySpec, default_spec
from .recovery import (
    DoaEstimate,
    estimate_rank,
    extract_doas,
    music_estimate,
    power_least_squares,
    vandermonde_decompose,
)
from .solvers import ConstrainedProblem, SolverOptions, solve_constrained, solve_ficmra
from .toeplitz import toeplitz_adjoint, toeplitz_from_param

__all__ = [
    "ArrayGeometry",
    "BenchScenario",
    "ConfigError",
    "ConstrainedProblem",
    "DoaEstimate",
    "GldoaError",
    "IcmraConfig",
    "IcmraResult",
    "MethodSettings",
    "PeakCountError",
    "PenaltySpec",
    "RootExtractionError",
    "Scenario",
    "Snapshots",
    "SolverError",
    "SolverOptions",
    "TrialTable",
    "beta_threshold",
    "chi2_inv",
    "crlb_stochastic",
    "default_spec",
    "estimate_rank",
    "exact_covariance",
    "extract_doas",
    "method_runner",
    "music_estimate",
    "power_least_squares",
    "run_cmra",
    "run_icmra",
    "run_icmra_cov",
    "run_method",
    "run_monte_carlo",
    "sample_covariance",
    "sla",
    "solve_constrained",
    "solve_ficmra",
    "steering_vector",
    "synthesize_snapshots",
    "toeplitz_adjoint",
    "toeplitz_from_param",
    "ula",
    "vandermonde_decompose",
]

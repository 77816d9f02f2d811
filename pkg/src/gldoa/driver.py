"""Reweighted covariance-fitting loops.

``run_cmra`` performs the single-pass weighted trace fit. ``run_icmra``
iterates it: each pass re-derives the eigenvalue weighting from the previous
Toeplitz iterate, tightening a nonconvex rank surrogate while the smoothing
parameter anneals. The ``ficmra`` backend swaps the constrained subproblem
for the closed-form stationarity system, trading the hard data-fit ball for
a fixed trade-off weight ``lam``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import ArrayGeometry, estimate_noise_power, fill_missing_lags, sample_covariance
from .bench import beta_threshold
from .errors import SolverError
from .penalties import PenaltySpec, default_spec, schedule_next, surrogate_value, weight_matrix
from .solvers import (
    ConstrainedSolver,
    SolverOptions,
    build_ficmra_c,
    build_quadratic_operator,
    solve_ficmra_operator,
)
from .toeplitz import WeightedErrorContext, psd_project, toeplitz_from_param

BACKENDS = ("constrained", "ficmra")
INITS = ("zero", "random", "rfull")
DEGENERATE_EIG = 1e-12
# The closed-form backend has no PSD constraint. Once the annealed weight
# overpowers the quadratic fit, iterates dive indefinite and never return;
# anything past mild indefiniteness means that regime has been entered.
INDEFINITE_REL = 1e-3


def nearest_toeplitz_param(t: np.ndarray) -> np.ndarray:
    """Per-lag means of a square matrix: the closest Hermitian Toeplitz
    parameter in the Frobenius sense."""
    t = np.asarray(t, dtype=complex)
    n = t.shape[0]
    u = np.array([t.diagonal(-k).sum() / (n - k) for k in range(n)])
    u[0] = u[0].real
    return u


@dataclass(frozen=True)
class IcmraConfig:
    penalty: PenaltySpec = field(default_factory=lambda: default_spec("log"))
    backend: str = "constrained"
    max_outer_iters: int = 20
    rel_tol: float = 1e-4
    chi2_p: float = 0.001
    beta_sq: float = None  # default: chi-square threshold at M^2 dof
    lam: float = 0.1
    sigma_mode: str = "direct"
    init: str = "zero"
    init_seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.sigma_mode not in ("direct", "full_fill"):
            raise ValueError("sigma_mode must be 'direct' or 'full_fill'")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if not 0.0 < self.chi2_p < 1.0:
            raise ValueError("chi2_p must lie in (0, 1)")
        if self.beta_sq is not None and not self.beta_sq > 0:
            raise ValueError("beta_sq must be > 0")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")


@dataclass
class IcmraResult:
    u: np.ndarray
    geom: ArrayGeometry
    sigma: float
    beta_sq: float  # None when the ficmra backend was used
    surrogate_trace: list
    eigen_history: list  # raw eigenvalues of each iterate, descending
    iters_run: int
    converged: bool
    stop_reason: str
    wall_time_s: float
    iter_times_s: list

    @property
    def toeplitz(self) -> np.ndarray:
        return toeplitz_from_param(self.u)

    @property
    def final_eigs(self) -> np.ndarray:
        return self.eigen_history[-1]


def _initial_param(cfg: IcmraConfig, r_hat: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    n = geom.n_aperture
    if cfg.init == "zero":
        return np.zeros(n, dtype=complex)
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.init_seed)
        raw = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    else:  # first column of the lag-mean filled covariance
        raw = fill_missing_lags(r_hat, geom)[:, 0]
    raw = np.asarray(raw, dtype=complex)
    raw[0] = raw[0].real
    # project to the PSD cone so the first weight is well defined
    return nearest_toeplitz_param(psd_project(toeplitz_from_param(raw)))


def run_icmra_cov(r_hat: np.ndarray, l_snapshots: int, geom: ArrayGeometry,
                  cfg: IcmraConfig = None, sigma: float = None) -> IcmraResult:
    """Iterated reweighted fit on a precomputed sample covariance.

    ``sigma`` overrides the noise-power estimate (pass the true value for
    noiseless studies). A constrained subproblem that misses its iteration
    budget is retried once with ten times the budget; if the retry fails on
    the very first pass the error propagates, while later failures stop the
    loop and keep the last iterate, as does a closed-form iterate whose
    smallest eigenvalue drops below ``-INDEFINITE_REL`` times its largest.
    """
    cfg = cfg or IcmraConfig()
    t_start = time.perf_counter()
    r_hat = np.asarray(r_hat, dtype=complex)
    if sigma is None:
        sigma = estimate_noise_power(r_hat, geom, mode=cfg.sigma_mode)
    sigma = float(sigma)

    if cfg.backend == "constrained":
        beta_sq = cfg.beta_sq
        if beta_sq is None:
            beta_sq = beta_threshold(geom.m_sensors, cfg.chi2_p)
        ctx = WeightedErrorContext(r_hat=r_hat, sigma=sigma,
                                   l_snapshots=l_snapshots, whitener=r_hat)
        solver = ConstrainedSolver(ctx, geom, cfg.solver)
        qop = None
    else:
        # the quadratic fit needs (r_hat - sigma I) invertible; back sigma
        # off the smallest eigenvalue, which the direct estimate equals.
        # Too little slack makes the fit weight along that eigendirection
        # swamp everything else and wreck the very first pass.
        lam_min = float(np.linalg.eigvalsh(r_hat)[0])
        sigma = min(sigma, 0.99 * lam_min)
        beta_sq = None
        solver = None
        qop = build_quadratic_operator(build_ficmra_c(r_hat, sigma, geom))

    n = geom.n_aperture
    u = _initial_param(cfg, r_hat, geom)
    t_eval = psd_project(toeplitz_from_param(u))
    spec = cfg.penalty
    surrogates = []
    eig_hist = []
    iter_times = []
    warm = None
    converged = False
    stop_reason = "max_iters"
    iters_run = 0

    for _ in range(cfg.max_outer_iters):
        it0 = time.perf_counter()
        if not np.any(u):
            weight = np.eye(n, dtype=complex)
        else:
            weight = weight_matrix(spec, t_eval)
        try:
            if cfg.backend == "constrained":
                inc = u if np.any(u) else None
                try:
                    u_new, _, warm = solver.solve(weight, beta_sq, warm=warm,
                                                  incumbent=inc)
                except SolverError:
                    # the optimality tolerance is defined against a 10x-longer
                    # run of the same solver; grant exactly that budget once
                    big = replace(cfg.solver, max_iters=10 * cfg.solver.max_iters)
                    u_new, _, warm = solver.solve(weight, beta_sq, warm=warm,
                                                  incumbent=inc, opts=big)
            else:
                u_new = solve_ficmra_operator(qop, weight, cfg.lam)
        except SolverError:
            if iters_run == 0:
                raise
            stop_reason = "subproblem_failure"
            break
        t_new = toeplitz_from_param(u_new)
        raw_eigs = np.linalg.eigvalsh(t_new)[::-1]
        if (cfg.backend == "ficmra" and iters_run > 0
                and raw_eigs[-1] < -INDEFINITE_REL * max(raw_eigs[0], 0.0)):
            converged = True
            stop_reason = "indefinite"
            break
        iters_run += 1
        eig_hist.append(raw_eigs)
        t_eval_new = psd_project(t_new)
        surrogates.append(surrogate_value(spec, t_eval_new))
        iter_times.append(time.perf_counter() - it0)

        u_prev = u
        u, t_eval = u_new, t_eval_new
        if np.all(raw_eigs < DEGENERATE_EIG):
            converged = True
            stop_reason = "degenerate"
            break
        if np.any(u_prev):
            denom = float(np.linalg.norm(u_prev))
            if float(np.linalg.norm(u - u_prev)) <= cfg.rel_tol * denom:
                converged = True
                stop_reason = "rel_change"
                break
        spec = schedule_next(spec)
    else:
        converged = cfg.max_outer_iters == 1  # a single pass is complete by design

    return IcmraResult(
        u=u,
        geom=geom,
        sigma=sigma,
        beta_sq=beta_sq,
        surrogate_trace=surrogates,
        eigen_history=eig_hist,
        iters_run=iters_run,
        converged=converged,
        stop_reason=stop_reason,
        wall_time_s=time.perf_counter() - t_start,
        iter_times_s=iter_times,
    )


def run_icmra(x: np.ndarray, geom: ArrayGeometry, cfg: IcmraConfig = None) -> IcmraResult:
    """Iterated reweighted fit from raw snapshots (columns are snapshots)."""
    x = np.asarray(x, dtype=complex)
    return run_icmra_cov(sample_covariance(x), x.shape[1], geom, cfg)


def cmra_config(beta_sq: float = None, sigma_mode: str = "direct",
                solver: SolverOptions = None) -> IcmraConfig:
    """Single unweighted pass: trace minimization inside the data-fit ball."""
    return IcmraConfig(
        penalty=default_spec("log"),
        backend="constrained",
        max_outer_iters=1,
        beta_sq=beta_sq,
        sigma_mode=sigma_mode,
        solver=solver or SolverOptions(),
    )


def run_cmra(x: np.ndarray, geom: ArrayGeometry, beta_sq: float = None,
             sigma_mode: str = "direct") -> IcmraResult:
    return run_icmra(x, geom, cmra_config(beta_sq=beta_sq, sigma_mode=sigma_mode))


def run_cmra_cov(r_hat: np.ndarray, l_snapshots: int, geom: ArrayGeometry,
                 beta_sq: float = None, sigma_mode: str = "direct",
                 sigma: float = None) -> IcmraResult:
    return run_icmra_cov(r_hat, l_snapshots, geom,
                         cmra_config(beta_sq=beta_sq, sigma_mode=sigma_mode), sigma=sigma)

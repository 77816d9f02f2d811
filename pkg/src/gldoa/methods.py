"""Named estimator registry: one string picks a full snapshot-to-DOA run.

Composite names like ``icmra-log`` pick the loop family and the eigenvalue
penalty in one token; ``cmra`` is the single-pass fit and ``music`` the
grid-search reference. The benchmark engine and the CLI both resolve method
strings here so results are labeled consistently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import sample_covariance
from .driver import IcmraConfig, run_icmra_cov
from .penalties import PENALTY_KINDS, PenaltySpec, default_spec
from .recovery import DoaEstimate, extract_doas, music_estimate
from .solvers import SolverOptions

METHOD_FAMILIES = ("cmra", "icmra", "ficmra", "music")


@dataclass(frozen=True)
class MethodSettings:
    """Knobs shared across methods; fields mirror the CLI flags."""

    sigma_mode: str = "direct"
    max_outer_iters: int = 20
    rel_tol: float = 1e-4
    chi2_p: float = 0.001
    beta_sq: float = None
    lam: float = 0.1
    eta: float = 1e-3
    drop_zero_power: bool = True
    music_grid_step_deg: float = None
    epsilon: float = None  # penalty smoothing override
    delta: float = None  # annealing factor override
    solver: SolverOptions = field(default_factory=SolverOptions)


def parse_method(name: str):
    """Split a method token into (family, penalty kind or None).

    The kind is None for bare ``icmra``/``ficmra`` (caller picks a default)
    and always None for ``cmra`` and ``music``.
    """
    parts = name.strip().lower().split("-")
    family = parts[0]
    if family not in METHOD_FAMILIES:
        raise ValueError(f"unknown method {name!r}; families are {METHOD_FAMILIES}")
    if family in ("cmra", "music"):
        if len(parts) > 1:
            raise ValueError(f"method {family!r} takes no penalty suffix")
        return family, None
    if len(parts) == 1:
        return family, None
    kind = parts[1]
    if len(parts) > 2 or kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty in {name!r}; kinds are {PENALTY_KINDS}")
    return family, kind


def method_label(family: str, kind: str) -> str:
    return family if kind is None else f"{family}-{kind}"


def icmra_config_for(name: str, settings: MethodSettings = None) -> IcmraConfig:
    """Loop configuration for any non-music method token."""
    settings = settings or MethodSettings()
    family, kind = parse_method(name)
    if family == "music":
        raise ValueError("music has no loop configuration")
    if family == "cmra":
        return IcmraConfig(
            penalty=default_spec("log"),
            backend="constrained",
            max_outer_iters=1,
            chi2_p=settings.chi2_p,
            beta_sq=settings.beta_sq,
            sigma_mode=settings.sigma_mode,
            solver=settings.solver,
        )
    kind = kind or "log"
    spec = default_spec(kind)
    if settings.epsilon is not None or settings.delta is not None:
        spec = PenaltySpec(
            kind,
            epsilon=spec.epsilon if settings.epsilon is None else settings.epsilon,
            delta=spec.delta if settings.delta is None else settings.delta,
        )
    return IcmraConfig(
        penalty=spec,
        backend="constrained" if family == "icmra" else "ficmra",
        max_outer_iters=settings.max_outer_iters,
        rel_tol=settings.rel_tol,
        chi2_p=settings.chi2_p,
        beta_sq=settings.beta_sq,
        lam=settings.lam,
        sigma_mode=settings.sigma_mode,
        solver=settings.solver,
    )


def run_method(name: str, x: np.ndarray, geom, settings: MethodSettings = None,
               k_true: int = None, snr_db: float = 0.0):
    """Run one method on raw snapshots; returns (DoaEstimate, extras dict).

    ``extras`` carries a ``converged`` flag and, for the loop methods, the
    full fit result (eigen history, surrogate trace, timings). ``music``
    needs ``k_true``.
    """
    settings = settings or MethodSettings()
    family, _ = parse_method(name)
    x = np.asarray(x, dtype=complex)
    r_hat = sample_covariance(x)
    if family == "music":
        if k_true is None:
            raise ValueError("music requires the source count k")
        est = music_estimate(r_hat, k_true, geom,
                             grid_step_deg=settings.music_grid_step_deg,
                             snr_db=snr_db)
        return est, {"converged": True}
    cfg = icmra_config_for(name, settings)
    result = run_icmra_cov(r_hat, x.shape[1], geom, cfg)
    est = extract_doas(result.u, r_hat, result.sigma, geom,
                       eta=settings.eta, drop_zero_power=settings.drop_zero_power)
    return est, {"converged": result.converged, "result": result}


def method_runner(name: str, settings: MethodSettings = None):
    """Adapter with the (snapshots, geom, scenario) signature the Monte
    Carlo engine expects."""
    settings = settings or MethodSettings()
    parse_method(name)  # fail fast on bad tokens

    def fn(snaps, geom, scenario):
        return run_method(name, snaps.x, geom, settings,
                          k_true=scenario.k_sources, snr_db=scenario.snr_db)

    return fn

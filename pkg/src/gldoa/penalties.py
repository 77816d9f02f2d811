"""Concave sparsity penalties on eigenvalues and their reweighting matrices.

Each penalty g_eps is concave and nondecreasing on [0, inf) and interpolates
between the rank indicator (eps -> 0) and a linear function (eps large):

    log:     g(x) = ln(x + eps)        g'(x) = 1 / (x + eps)
    lp:      g(x) = x ** eps           g'(x) = eps * x ** (eps - 1),  0 < eps < 1
    laplace: g(x) = 1 - exp(-x / eps)  g'(x) = exp(-x / eps) / eps

Applied to a PSD matrix through its eigenvalues, the tangent plane at the
current iterate majorizes the penalty; the gradient matrix is the
reweighting weight of the outer iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .toeplitz import hermitize

PENALTY_KINDS = ("log", "lp", "laplace")

# Gradient clamp: lp has an unbounded derivative at 0, so eigenvalues below
# this floor are lifted to it before the gradient is applied. The same floor
# is used for laplace (harmless there).
X_FLOOR = 1e-10


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty kind with its current smoothing parameter and schedule.

    ``epsilon`` is the active smoothing value (for ``lp`` it is the exponent
    and must stay in (0, 1)); ``delta`` >= 1 divides it between outer
    iterations (1 freezes it); ``epsilon0`` records the starting value.
    """

    kind: str
    epsilon: float
    delta: float
    epsilon0: float = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"kind must be one of {PENALTY_KINDS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.kind == "lp" and not self.epsilon < 1:
            raise ValueError("lp exponent must satisfy 0 < epsilon < 1")
        if not self.delta >= 1:
            raise ValueError("delta must be >= 1")
        if self.epsilon0 is None:
            object.__setattr__(self, "epsilon0", float(self.epsilon))


def default_spec(kind: str) -> PenaltySpec:
    """Published defaults: eps0 = 1 (log, laplace) or exponent 0.5 (lp),
    annealing factor 2 for log and 10 otherwise."""
    if kind == "log":
        return PenaltySpec("log", epsilon=1.0, delta=2.0)
    if kind == "lp":
        return PenaltySpec("lp", epsilon=0.5, delta=10.0)
    if kind == "laplace":
        return PenaltySpec("laplace", epsilon=1.0, delta=10.0)
    raise ValueError(f"kind must be one of {PENALTY_KINDS}")


def schedule_next(spec: PenaltySpec) -> PenaltySpec:
    """Divide the smoothing parameter by delta (no-op when delta == 1)."""
    return replace(spec, epsilon=spec.epsilon / spec.delta)


def _as_nonneg(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("penalty arguments must be >= 0")
    return arr


def penalty_value(spec: PenaltySpec, x):
    """g_eps(x) elementwise; scalar in -> scalar out."""
    arr = _as_nonneg(x)
    eps = spec.epsilon
    if spec.kind == "log":
        out = np.log(arr + eps)
    elif spec.kind == "lp":
        out = arr**eps
    else:
        out = 1.0 - np.exp(-arr / eps)
    return out if isinstance(x, np.ndarray) else float(out)


def penalty_gradient(spec: PenaltySpec, x):
    """g_eps'(x) elementwise, with the X_FLOOR clamp where needed."""
    arr = _as_nonneg(x)
    eps = spec.epsilon
    if spec.kind == "log":
        out = 1.0 / (arr + eps)
    elif spec.kind == "lp":
        out = eps * np.maximum(arr, X_FLOOR) ** (eps - 1.0)
    else:
        out = np.exp(-np.maximum(arr, X_FLOOR) / eps) / eps
    return out if isinstance(x, np.ndarray) else float(out)


def _clipped_eigvals(t: np.ndarray):
    t = hermitize(np.asarray(t, dtype=complex))
    vals, vecs = np.linalg.eigh(t)
    top = max(float(vals[-1]), 0.0)
    raw_min = float(vals[0])
    if raw_min < -max(1e-6 * top, 1e-12):
        raise ValueError(
            f"matrix is strongly indefinite (min eig {raw_min:.3e}, max eig {top:.3e})"
        )
    return np.clip(vals, 0.0, None), vecs, raw_min


def surrogate_value(spec: PenaltySpec, t: np.ndarray) -> float:
    """Sum of g_eps over the (clipped) eigenvalues of a PSD matrix."""
    vals, _, _ = _clipped_eigvals(t)
    return float(np.sum(penalty_value(spec, vals)))


def weight_matrix(spec: PenaltySpec, t: np.ndarray, method: str = "auto") -> np.ndarray:
    """Gradient of the eigenvalue penalty at ``t``: U diag(g'(lam)) U^H.

    For the log penalty this equals ``(t + eps I)^{-1}`` and is computed
    directly unless ``method="eigen"`` forces the spectral route. The result
    is Hermitian PSD.
    """
    if method not in ("auto", "eigen"):
        raise ValueError("method must be 'auto' or 'eigen'")
    vals, vecs, raw_min = _clipped_eigvals(t)
    if (
        method == "auto"
        and spec.kind == "log"
        and spec.epsilon >= 1e-8
        and raw_min > -0.5 * spec.epsilon
    ):
        t = hermitize(np.asarray(t, dtype=complex))
        return hermitize(np.linalg.inv(t + spec.epsilon * np.eye(t.shape[0])))
    grads = penalty_gradient(spec, vals)
    return hermitize((vecs * grads) @ vecs.conj().T)

"""Hermitian Toeplitz parameterization and the whitened covariance misfit.

A Hermitian Toeplitz matrix of size n is parameterized by its first column
``u`` (length n, ``u[0]`` real): ``T(u)[i, j] = u[i - j]`` for ``i >= j`` and
the conjugate above the diagonal. ``toeplitz_adjoint`` is the adjoint of
``u -> T(u)`` under the real trace pairing: it maps a matrix to its 2n-1
diagonal sums ordered by lag (column minus row) from ``-(n-1)`` to ``n-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayGeometry


def check_param(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 1 or u.size < 1:
        raise ValueError("u must be a 1-d vector")
    if abs(u[0].imag) > 1e-9 * max(1.0, float(np.linalg.norm(u))):
        raise ValueError("u[0] must be real")
    return u


def toeplitz_from_param(u: np.ndarray) -> np.ndarray:
    """Hermitian Toeplitz matrix with first column ``u``."""
    u = check_param(u)
    n = u.size
    idx = np.subtract.outer(np.arange(n), np.arange(n))  # row - col
    t = np.where(idx >= 0, u[np.abs(idx)], np.conj(u[np.abs(idx)]))
    t[np.diag_indices(n)] = u[0].real
    return t


def toeplitz_adjoint(v: np.ndarray) -> np.ndarray:
    """Diagonal sums of a square matrix, lags -(n-1) .. n-1 (col - row)."""
    v = np.asarray(v)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValueError("v must be square")
    n = v.shape[0]
    return np.array([v.diagonal(k).sum() for k in range(-(n - 1), n)])


def select(geom: ArrayGeometry, t_full: np.ndarray) -> np.ndarray:
    """Rows/columns of an aperture-sized matrix at the physical sensors."""
    t_full = np.asarray(t_full)
    if t_full.shape != (geom.n_aperture, geom.n_aperture):
        raise ValueError("t_full must be n_aperture x n_aperture")
    idx = geom.indices
    return t_full[np.ix_(idx, idx)]


def lift(geom: ArrayGeometry, s: np.ndarray) -> np.ndarray:
    """Adjoint of ``select``: embed an m x m block into n x n with zeros."""
    s = np.asarray(s)
    if s.shape != (geom.m_sensors, geom.m_sensors):
        raise ValueError("s must be m_sensors x m_sensors")
    idx = geom.indices
    out = np.zeros((geom.n_aperture, geom.n_aperture), dtype=complex)
    out[np.ix_(idx, idx)] = s
    return out


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def psd_project(h: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD matrix: clip negative eigenvalues to 0."""
    h = hermitize(np.asarray(h, dtype=complex))
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    return hermitize((v * w) @ v.conj().T)


def inv_sqrt_psd(w: np.ndarray, floor_rel: float = 1e-12) -> np.ndarray:
    """Hermitian inverse square root with relative eigenvalue flooring."""
    w = hermitize(np.asarray(w, dtype=complex))
    vals, vecs = np.linalg.eigh(w)
    top = float(vals[-1])
    if top <= 0:
        raise ValueError("matrix must have a positive largest eigenvalue")
    vals = np.maximum(vals, floor_rel * top)
    return hermitize((vecs * (1.0 / np.sqrt(vals))) @ vecs.conj().T)


@dataclass(frozen=True)
class WeightedErrorContext:
    """Fixed data for the whitened covariance misfit.

    ``whitener`` is the Hermitian positive definite matrix whose inverse
    square root whitens the residual ``(r_hat - sigma I) - T_sel(u)``. The
    misfit is scaled by the snapshot count.
    """

    r_hat: np.ndarray
    sigma: float
    l_snapshots: int
    whitener: np.ndarray
    _wm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.r_hat, dtype=complex)
        w = np.asarray(self.whitener, dtype=complex)
        if r.shape != w.shape or r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("r_hat and whitener must be square and same size")
        if self.l_snapshots < 1:
            raise ValueError("l_snapshots must be >= 1")
        if float(self.sigma) < 0:
            raise ValueError("sigma must be >= 0")
        object.__setattr__(self, "_wm", inv_sqrt_psd(w))

    @property
    def m_sensors(self) -> int:
        return self.r_hat.shape[0]

    @property
    def wm(self) -> np.ndarray:
        """Inverse square root of the whitener."""
        return self._wm

    def residual(self, u: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
        """(r_hat - sigma I) - T_sel(u), unwhitened."""
        t_sel = select(geom, toeplitz_from_param(u))
        return self.r_hat - self.sigma * np.eye(self.m_sensors) - t_sel


def weighted_error(ctx: WeightedErrorContext, u: np.ndarray, geom: ArrayGeometry) -> float:
    """Snapshot-scaled squared Frobenius norm of the whitened residual.

    Equals ``|| sqrt(L) (W^{-T/2} kron W^{-1/2}) vec(E) ||^2`` with
    ``E = (r_hat - sigma I) - T_sel(u)``, computed without forming the
    Kronecker product.
    """
    e = ctx.residual(u, geom)
    z = ctx.wm @ e @ ctx.wm
    return float(ctx.l_snapshots * np.linalg.norm(z) ** 2)

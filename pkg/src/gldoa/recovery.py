"""Direction and power recovery from a fitted Toeplitz covariance.

The fitted matrix lives on the full aperture, so directions come from
rooting the noise-subspace polynomial (no search grid). Powers are then
refit on the observed sensors by nonnegative least squares, which also
prunes spurious directions whose best fit is zero power. A classical
grid-search subspace estimator is included as an independent reference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .arrays import ArrayGeometry, steering_vector
from .errors import PeakCountError, RootExtractionError
from .toeplitz import hermitize, toeplitz_adjoint, toeplitz_from_param

RANK_ETA = 1e-3
ROOT_RADIUS_TOL = 1e-6
# On-circle roots of the self-reciprocal polynomial are double roots; finite
# precision splits them into twins ~1e-6 rad apart, so the merge tolerance
# must sit well above that and well below any resolvable separation.
ROOT_ANGLE_TOL = 1e-5
BOUNDARY_REL = 1e-9
POWER_FLOOR_REL = 1e-2


@dataclass(frozen=True)
class DoaEstimate:
    thetas_deg: np.ndarray  # ascending
    powers: np.ndarray  # paired with thetas_deg
    rank: int  # subspace rank before any zero-power pruning

    @property
    def k_hat(self) -> int:
        return int(self.thetas_deg.size)


def _sorted_estimate(thetas_deg, powers, rank) -> DoaEstimate:
    t = np.asarray(thetas_deg, dtype=float)
    p = np.asarray(powers, dtype=float)
    order = np.argsort(t)
    return DoaEstimate(thetas_deg=t[order], powers=p[order], rank=int(rank))


def estimate_rank(t_or_eigs, eta: float = RANK_ETA) -> int:
    """Eigenvalues above ``eta`` times the largest, capped one below full."""
    arr = np.asarray(t_or_eigs)
    if arr.ndim == 2:
        eigs = np.linalg.eigvalsh(hermitize(arr.astype(complex)))
    else:
        eigs = np.sort(arr.astype(float))
    n = eigs.size
    top = float(eigs[-1])
    if top <= 0.0:
        return 0
    k = int(np.count_nonzero(eigs > eta * top))
    return min(k, n - 1)


def _noise_polynomial(subspace: np.ndarray) -> np.ndarray:
    # a(z)^H E E^H a(z) as a Laurent polynomial; returns ascending powers of z
    # after multiplying through by z^(n-1)
    c = subspace @ subspace.conj().T
    return toeplitz_adjoint(c)


def vandermonde_decompose(t: np.ndarray, k: int):
    """Directions (degrees, ascending) of the rank-k Vandermonde part of a
    Hermitian Toeplitz matrix, by noise-subspace rooting.

    Admits roots with ``|z| <= 1 + 1e-6``, keeps the k closest to the unit
    circle after merging conjugate-reciprocal twins, and refuses roots that
    land on the +-90 degree boundary. Raises RootExtractionError when fewer
    than ``k`` usable roots remain.
    """
    t = hermitize(np.asarray(t, dtype=complex))
    n = t.shape[0]
    if not 0 <= k < n:
        raise ValueError("k must satisfy 0 <= k < n")
    if k == 0:
        return np.array([])
    _, vecs = np.linalg.eigh(t)
    subspace = vecs[:, : n - k]
    coeffs = _noise_polynomial(subspace)
    roots = np.roots(coeffs[::-1])
    radii = np.abs(roots)
    admitted = roots[radii <= 1.0 + ROOT_RADIUS_TOL]
    if admitted.size == 0:
        raise RootExtractionError(f"no roots inside the admissible disc (k={k})",
                                  roots=roots)

    omegas = np.angle(admitted)
    on_boundary = np.abs(omegas) / np.pi > 1.0 - BOUNDARY_REL
    if np.any(on_boundary):
        warnings.warn("dropping root(s) at the +-90 degree boundary", stacklevel=2)
        admitted = admitted[~on_boundary]
        omegas = omegas[~on_boundary]

    dist = np.abs(np.abs(admitted) - 1.0)
    # merge conjugate-reciprocal twins: same angle, radii straddling the circle
    order = np.argsort(omegas)
    groups = []
    for idx in order:
        if groups and abs(omegas[idx] - omegas[groups[-1][-1]]) <= ROOT_ANGLE_TOL:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    reps = [min(g, key=lambda i: dist[i]) for g in groups]
    if len(reps) < k:
        raise RootExtractionError(
            f"only {len(reps)} distinct admissible roots, need {k}", roots=roots
        )

    c = subspace @ subspace.conj().T
    idx_arr = np.array(reps)

    def null_value(i):
        a = np.exp(1j * np.arange(n) * omegas[i])
        return float((a.conj() @ c @ a).real)

    null_vals = np.array([null_value(i) for i in idx_arr])
    pick = idx_arr[np.lexsort((null_vals, dist[idx_arr]))][:k]
    thetas = np.degrees(np.arcsin(omegas[pick] / np.pi))
    return np.sort(thetas)


def power_least_squares(r_hat: np.ndarray, sigma: float, thetas_deg,
                        geom: ArrayGeometry) -> np.ndarray:
    """Nonnegative least-squares source powers on the observed sensors.

    Fits ``r_hat - sigma I`` by sum_i p_i a(theta_i) a(theta_i)^H with
    p >= 0; spurious directions come back with exactly zero power.
    """
    thetas_deg = np.atleast_1d(np.asarray(thetas_deg, dtype=float))
    if thetas_deg.size == 0:
        return np.array([])
    m = geom.m_sensors
    r = hermitize(np.asarray(r_hat, dtype=complex)) - float(sigma) * np.eye(m)
    a = steering_vector(geom, thetas_deg)
    cols = np.stack([np.outer(a[:, i], a[:, i].conj()).ravel()
                     for i in range(thetas_deg.size)], axis=1)
    design = np.vstack([cols.real, cols.imag])
    if np.linalg.matrix_rank(design) < thetas_deg.size:
        raise ValueError("coalesced directions make the power fit rank-deficient")
    target = np.concatenate([r.ravel().real, r.ravel().imag])
    powers, _ = scipy.optimize.nnls(design, target)
    return powers


def extract_doas(u: np.ndarray, r_hat: np.ndarray, sigma: float,
                 geom: ArrayGeometry, eta: float = RANK_ETA,
                 drop_zero_power: bool = True,
                 power_floor_rel: float = POWER_FLOOR_REL) -> DoaEstimate:
    """Full pipeline from a fitted Toeplitz parameter to a direction estimate.

    Rank from the eigenvalue gap of T(u), directions by rooting, powers by
    nonnegative refit on the observed covariance. With ``drop_zero_power``
    the detected count excludes directions whose fitted power falls below
    ``power_floor_rel`` times the strongest, so a conservative rank estimate
    does not inflate the model order.
    """
    u = np.asarray(u, dtype=complex)
    t = toeplitz_from_param(u)
    rank = estimate_rank(t, eta=eta)
    if rank == 0:
        return DoaEstimate(np.array([]), np.array([]), 0)
    thetas = vandermonde_decompose(t, rank)
    powers = power_least_squares(r_hat, sigma, thetas, geom)
    if drop_zero_power and powers.size:
        keep = powers > power_floor_rel * float(powers.max())
        thetas, powers = thetas[keep], powers[keep]
    return _sorted_estimate(thetas, powers, rank)


def music_estimate(r_hat: np.ndarray, k: int, geom: ArrayGeometry,
                   grid_step_deg: float = None, snr_db: float = 0.0) -> DoaEstimate:
    """Grid-search subspace estimator on the observed covariance.

    The default grid step shrinks with the expected SNR as
    ``10**(-snr_db/20 - 1)`` degrees. Peaks are strict interior local maxima
    of the inverse null-spectrum; raises PeakCountError when fewer than
    ``k`` appear.
    """
    r_hat = hermitize(np.asarray(r_hat, dtype=complex))
    m = geom.m_sensors
    if not 0 <= k < m:
        raise ValueError("k must satisfy 0 <= k < m")
    if k == 0:
        return DoaEstimate(np.array([]), np.array([]), 0)
    if grid_step_deg is None:
        grid_step_deg = 10.0 ** (-snr_db / 20.0 - 1.0)
    vals, vecs = np.linalg.eigh(r_hat)
    subspace = vecs[:, : m - k]
    grid = np.arange(-90.0 + grid_step_deg, 90.0, grid_step_deg)
    a = steering_vector(geom, grid)
    null = np.sum(np.abs(subspace.conj().T @ a) ** 2, axis=0)
    spectrum = 1.0 / np.maximum(null, 1e-300)
    interior = (spectrum[1:-1] > spectrum[:-2]) & (spectrum[1:-1] >= spectrum[2:])
    peak_idx = np.flatnonzero(interior) + 1
    if peak_idx.size < k:
        raise PeakCountError(
            f"found {peak_idx.size} spectrum peaks, need {k}",
            peaks=grid[peak_idx],
        )
    top = peak_idx[np.argsort(spectrum[peak_idx])[::-1][:k]]
    thetas = np.sort(grid[top])
    sigma = float(vals[: m - k].mean())
    powers = power_least_squares(r_hat, sigma, thetas, geom)
    return _sorted_estimate(thetas, powers, k)

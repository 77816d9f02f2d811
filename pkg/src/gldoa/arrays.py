"""Linear array geometry, steering vectors, and snapshot synthesis.

Sensors sit on a half-wavelength grid. A geometry is a 1-based index set
``omega`` into the grid positions ``{1, .., n}``; the first index is always 1
and the last defines the aperture ``n``. A uniform linear array (ULA) uses
every position; a sparse linear array (SLA) omits some.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Sensor positions of a (possibly sparse) linear array.

    Parameters
    ----------
    omega : tuple of int
        Strictly increasing 1-based grid indices. ``omega[0]`` must be 1;
        ``omega[-1]`` equals the aperture ``n`` of the virtual ULA.
    """

    omega: tuple

    def __post_init__(self):
        om = tuple(int(v) for v in self.omega)
        object.__setattr__(self, "omega", om)
        if len(om) == 0:
            raise ValueError("omega must be non-empty")
        if om[0] != 1:
            raise ValueError("omega must start at 1")
        if any(b <= a for a, b in zip(om, om[1:])):
            raise ValueError("omega must be strictly increasing")

    @property
    def m_sensors(self) -> int:
        return len(self.omega)

    @property
    def n_aperture(self) -> int:
        return self.omega[-1]

    @property
    def is_ula(self) -> bool:
        return self.m_sensors == self.n_aperture

    @property
    def indices(self) -> np.ndarray:
        """0-based grid positions, shape (m_sensors,)."""
        return np.asarray(self.omega, dtype=int) - 1

    def selection_matrix(self) -> np.ndarray:
        """Row-selection matrix with shape (m_sensors, n_aperture).

        Row ``k`` has a single 1 in column ``omega[k] - 1``.
        """
        g = np.zeros((self.m_sensors, self.n_aperture))
        g[np.arange(self.m_sensors), self.indices] = 1.0
        return g


def ula(n: int) -> ArrayGeometry:
    """Uniform linear array with ``n`` sensors."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return ArrayGeometry(tuple(range(1, n + 1)))


def sla(omega) -> ArrayGeometry:
    """Sparse linear array from 1-based grid indices."""
    return ArrayGeometry(tuple(omega))


@dataclass(frozen=True)
class Scenario:
    """A ground-truth source configuration plus sampling parameters.

    Parameters
    ----------
    thetas_deg : tuple of float
        Source directions in degrees, distinct, each strictly inside
        (-90, 90).
    powers : tuple of float
        Source powers, one per direction, all > 0.
    snr_db : float
        SNR of the first source relative to the noise floor:
        ``snr_db = 10 log10(powers[0] / sigma)``.
    n_snapshots : int
        Number of array snapshots, >= 1.
    seed : int
        Seed for the snapshot generator.
    """

    thetas_deg: tuple
    powers: tuple
    snr_db: float
    n_snapshots: int
    seed: int = 0

    def __post_init__(self):
        th = tuple(float(t) for t in self.thetas_deg)
        pw = tuple(float(p) for p in self.powers)
        object.__setattr__(self, "thetas_deg", th)
        object.__setattr__(self, "powers", pw)
        if len(th) == 0:
            raise ValueError("at least one source required")
        if len(set(th)) != len(th):
            raise ValueError("thetas_deg must be distinct")
        if any(abs(t) >= 90.0 for t in th):
            raise ValueError("thetas_deg must lie strictly inside (-90, 90)")
        if len(pw) != len(th):
            raise ValueError("powers must match thetas_deg in length")
        if any(p <= 0 for p in pw):
            raise ValueError("powers must be positive")
        if int(self.n_snapshots) < 1:
            raise ValueError("n_snapshots must be >= 1")
        object.__setattr__(self, "n_snapshots", int(self.n_snapshots))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def k_sources(self) -> int:
        return len(self.thetas_deg)

    def noise_power(self) -> float:
        """Noise variance implied by the SNR convention."""
        return self.powers[0] / (10.0 ** (self.snr_db / 10.0))


@dataclass(frozen=True)
class Snapshots:
    """Complex snapshot matrix with the noise level used to generate it."""

    x: np.ndarray  # (m_sensors, n_snapshots) complex
    sigma_true: float

    @property
    def n_snapshots(self) -> int:
        return self.x.shape[1]


def steering_vector(geom: ArrayGeometry, theta_deg) -> np.ndarray:
    """Steering vector(s) for directions in degrees.

    Entry ``k`` is ``exp(1j * pi * (omega[k] - 1) * sin(theta))``. For a
    scalar angle returns shape (m_sensors,); for a length-K sequence returns
    shape (m_sensors, K).

    Raises
    ------
    ValueError
        If any |theta| >= 90.
    """
    th = np.atleast_1d(np.asarray(theta_deg, dtype=float))
    if np.any(np.abs(th) >= 90.0):
        raise ValueError("theta_deg must lie strictly inside (-90, 90)")
    pos = geom.indices[:, None]
    a = np.exp(1j * np.pi * pos * np.sin(np.deg2rad(th))[None, :])
    if np.isscalar(theta_deg) or np.asarray(theta_deg).ndim == 0:
        return a[:, 0]
    return a


def synthesize_snapshots(geom: ArrayGeometry, scenario: Scenario) -> Snapshots:
    """Draw snapshots ``x = A s + w`` with circular Gaussian sources and noise.

    Sources are zero-mean circular complex Gaussian with the scenario powers;
    noise is spatially white with variance ``scenario.noise_power()``. The
    draw order (source real, source imag, noise real, noise imag) is fixed so
    a given seed always produces the same snapshots.
    """
    k = scenario.k_sources
    m = geom.m_sensors
    l = scenario.n_snapshots
    sigma = scenario.noise_power()
    rng = np.random.default_rng(scenario.seed)
    s_re = rng.standard_normal((k, l))
    s_im = rng.standard_normal((k, l))
    w_re = rng.standard_normal((m, l))
    w_im = rng.standard_normal((m, l))
    amps = np.sqrt(np.asarray(scenario.powers) / 2.0)[:, None]
    s = amps * (s_re + 1j * s_im)
    w = np.sqrt(sigma / 2.0) * (w_re + 1j * w_im)
    a = steering_vector(geom, scenario.thetas_deg)
    return Snapshots(x=a @ s + w, sigma_true=sigma)


def sample_covariance(x: np.ndarray) -> np.ndarray:
    """Sample covariance ``x x^H / L`` of an (m, L) snapshot matrix."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("x must be (m, L) with L >= 1")
    return (x @ x.conj().T) / x.shape[1]


def exact_covariance(geom: ArrayGeometry, scenario: Scenario) -> np.ndarray:
    """Ensemble (infinite-snapshot) covariance for a scenario."""
    a = steering_vector(geom, scenario.thetas_deg)
    return (a * np.asarray(scenario.powers)) @ a.conj().T + scenario.noise_power() * np.eye(
        geom.m_sensors
    )


def _check_hermitian(r: np.ndarray, name: str = "r_hat") -> np.ndarray:
    r = np.asarray(r)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.linalg.norm(r), 1.0)
    if np.linalg.norm(r - r.conj().T) > 1e-10 * scale:
        raise ValueError(f"{name} must be Hermitian")
    return 0.5 * (r + r.conj().T)


def fill_missing_lags(r_hat: np.ndarray, geom: ArrayGeometry) -> np.ndarray:
    """Expand an SLA covariance onto the full aperture by diagonal averaging.

    Places ``r_hat`` at the sensor positions of the n x n virtual array and
    fills each structurally missing entry with the mean of the present
    entries on its diagonal (0 if a diagonal has none).
    """
    r = _check_hermitian(r_hat)
    m = geom.m_sensors
    n = geom.n_aperture
    if r.shape[0] != m:
        raise ValueError("r_hat size must match the number of sensors")
    idx = geom.indices
    full = np.zeros((n, n), dtype=complex)
    full[np.ix_(idx, idx)] = r
    present = np.zeros((n, n), dtype=bool)
    present[np.ix_(idx, idx)] = True
    for lag in range(n):
        rows = np.arange(n - lag)
        cols = rows + lag
        have = present[rows, cols]
        if have.any():
            mean = full[rows[have], cols[have]].mean()
        else:
            mean = 0.0
        miss = ~have
        full[rows[miss], cols[miss]] = mean
        full[cols[miss], rows[miss]] = np.conj(mean)
    return 0.5 * (full + full.conj().T)


def estimate_noise_power(r_hat: np.ndarray, geom: ArrayGeometry, mode: str = "direct") -> float:
    """Estimate the noise variance from a sample covariance.

    ``direct`` takes the smallest eigenvalue of ``r_hat`` itself; it needs
    fewer sources than sensors. ``full_fill`` first expands the covariance
    onto the full aperture (see ``fill_missing_lags``) and takes the smallest
    eigenvalue there, which stays usable when the sources fill the physical
    array.
    """
    r = _check_hermitian(r_hat)
    if mode == "direct":
        val = float(np.linalg.eigvalsh(r)[0])
    elif mode == "full_fill":
        val = float(np.linalg.eigvalsh(fill_missing_lags(r, geom))[0])
    else:
        raise ValueError(f"unknown noise estimation mode: {mode!r}")
    return max(val, 0.0)

"""Chi-square thresholds, the stochastic CRLB, and the Monte Carlo engine.

The trial engine runs every method on identical synthesized snapshots,
scores direction estimates against the truth by sorted-order pairing, and
emits per-trial and aggregate tables (CSV or JSON). All randomness is
derived from ``seed0 + trial index`` so a sweep is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.special

from .arrays import ArrayGeometry, Scenario, steering_vector, synthesize_snapshots

SUCCESS_RMSE_DEG = 0.1

TRIAL_CSV_FIELDS = (
    "method",
    "scenario_id",
    "trial",
    "seed",
    "rmse_deg",
    "power_rmse",
    "time_s",
    "converged",
    "k_hat",
)

AGGREGATE_CSV_FIELDS = (
    "method",
    "scenario_id",
    "n_trials",
    "n_detected",
    "rmse_deg",
    "power_rmse",
    "success_rate",
    "mean_time_s",
    "crlb_deg",
)


def chi2_inv(p: float, dof: int) -> float:
    """Inverse chi-square CDF by bracketed root-finding.

    Solves ``regularized_lower_incomplete_gamma(dof/2, x/2) = p`` with a
    bracketing search refined by Brent's method to better than 1e-10
    relative.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    a = 0.5 * dof

    def cdf_minus_p(x):
        return scipy.special.gammainc(a, 0.5 * x) - p

    hi = dof + 10.0 * math.sqrt(2.0 * dof) + 10.0
    while cdf_minus_p(hi) < 0.0:
        hi *= 2.0
    return float(scipy.optimize.brentq(cdf_minus_p, 0.0, hi, xtol=1e-300, rtol=1e-14))


def beta_threshold(m: int, p: float = 0.001) -> float:
    """Squared misfit bound: the (1-p) chi-square quantile at M^2 dof."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return chi2_inv(1.0 - p, m * m)


def _covariance_and_derivatives(geom: ArrayGeometry, thetas_deg, powers, sigma):
    thetas_deg = np.asarray(thetas_deg, dtype=float)
    powers = np.asarray(powers, dtype=float)
    k = thetas_deg.size
    m = geom.m_sensors
    a = steering_vector(geom, thetas_deg)
    r = (a * powers) @ a.conj().T + sigma * np.eye(m)
    pos = geom.indices
    derivs = []
    rad = np.deg2rad(thetas_deg)
    for i in range(k):
        da = 1j * np.pi * pos * np.cos(rad[i]) * a[:, i] * (np.pi / 180.0)
        outer = np.outer(da, a[:, i].conj())
        derivs.append(powers[i] * (outer + outer.conj().T))
    for i in range(k):
        derivs.append(np.outer(a[:, i], a[:, i].conj()))
    derivs.append(np.eye(m, dtype=complex))
    return r, derivs


def crlb_stochastic(geom: ArrayGeometry, scenario: Scenario) -> np.ndarray:
    """Unconditional CRB on the DOAs, in squared degrees.

    Fisher information for circular Gaussian snapshots:
    ``F_ij = L tr(R^{-1} dR_i R^{-1} dR_j)`` over the parameters
    (thetas in degrees, source powers, noise power). Returns the theta block
    of the inverse, a symmetric PSD K x K matrix whose diagonal lower-bounds
    the per-source variance.
    """
    k = scenario.k_sources
    if k >= geom.m_sensors:
        raise ValueError("CRLB requires fewer sources than sensors")
    r, derivs = _covariance_and_derivatives(
        geom, scenario.thetas_deg, scenario.powers, scenario.noise_power()
    )
    r_inv = np.linalg.inv(r)
    n_par = len(derivs)
    fim = np.empty((n_par, n_par))
    pre = [r_inv @ d for d in derivs]
    for i in range(n_par):
        for j in range(i, n_par):
            val = float(np.trace(pre[i] @ pre[j]).real) * scenario.n_snapshots
            fim[i, j] = val
            fim[j, i] = val
    try:
        cov = np.linalg.inv(fim)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular Fisher information") from exc
    if not np.all(np.isfinite(cov)):
        raise ValueError("singular Fisher information")
    block = cov[:k, :k]
    return 0.5 * (block + block.T)


def crlb_rmse_deg(geom: ArrayGeometry, scenario: Scenario) -> float:
    """Root-mean bound over sources, comparable to an RMSE aggregate."""
    return float(np.sqrt(np.mean(np.diag(crlb_stochastic(geom, scenario)))))


# -- Monte Carlo engine ------------------------------------------------------


@dataclass(frozen=True)
class BenchScenario:
    scenario_id: str
    geom: ArrayGeometry
    scenario: Scenario


@dataclass
class TrialRow:
    method: str
    scenario_id: str
    trial: int
    seed: int
    doa_errors_deg: np.ndarray
    power_errors: np.ndarray
    time_s: float
    converged: bool
    k_hat: int
    detected: bool
    failure: str = ""

    @property
    def rmse_deg(self) -> float:
        if self.doa_errors_deg.size == 0:
            return float("nan")
        return float(np.sqrt(np.mean(self.doa_errors_deg**2)))

    @property
    def power_rmse(self) -> float:
        if self.power_errors.size == 0:
            return float("nan")
        return float(np.sqrt(np.mean(self.power_errors**2)))

    @property
    def success(self) -> bool:
        r = self.rmse_deg
        return bool(np.isfinite(r) and r < SUCCESS_RMSE_DEG)


@dataclass
class TrialTable:
    rows: list = field(default_factory=list)
    crlb: dict = field(default_factory=dict)

    def for_method(self, method: str, scenario_id: str = None) -> list:
        return [
            r
            for r in self.rows
            if r.method == method and (scenario_id is None or r.scenario_id == scenario_id)
        ]

    def aggregate(self) -> list:
        keys = []
        for r in self.rows:
            key = (r.method, r.scenario_id)
            if key not in keys:
                keys.append(key)
        out = []
        for method, sid in keys:
            rows = [r for r in self.rows if r.method == method and r.scenario_id == sid]
            scored = [r for r in rows if r.detected and np.isfinite(r.rmse_deg)]
            sq = np.concatenate([r.doa_errors_deg**2 for r in scored]) if scored else np.array([])
            psq = np.concatenate([r.power_errors**2 for r in scored]) if scored else np.array([])
            times = [r.time_s for r in rows if r.converged]
            out.append(
                {
                    "method": method,
                    "scenario_id": sid,
                    "n_trials": len(rows),
                    "n_detected": len(scored),
                    "rmse_deg": float(np.sqrt(sq.mean())) if sq.size else float("nan"),
                    "power_rmse": float(np.sqrt(psq.mean())) if psq.size else float("nan"),
                    "success_rate": float(np.mean([r.success for r in rows])) if rows else 0.0,
                    "mean_time_s": float(np.mean(times)) if times else float("nan"),
                    "crlb_deg": self.crlb.get(sid, float("nan")),
                }
            )
        return out

    # -- serialization -------------------------------------------------------

    def _fmt(self, x, deterministic=False, is_time=False) -> str:
        if is_time and deterministic:
            return "0"
        if isinstance(x, bool):
            return "1" if x else "0"
        if isinstance(x, float):
            return "nan" if not np.isfinite(x) else format(x, ".12g")
        return str(x)

    def trials_csv(self, deterministic: bool = False, timestamp: str = None) -> str:
        buf = io.StringIO()
        if timestamp and not deterministic:
            buf.write(f"# generated {timestamp}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_CSV_FIELDS)
        for r in self.rows:
            w.writerow(
                [
                    r.method,
                    r.scenario_id,
                    r.trial,
                    r.seed,
                    self._fmt(r.rmse_deg),
                    self._fmt(r.power_rmse),
                    self._fmt(float(r.time_s), deterministic, is_time=True),
                    self._fmt(bool(r.converged)),
                    r.k_hat,
                ]
            )
        return buf.getvalue()

    def aggregate_csv(self, deterministic: bool = False, timestamp: str = None) -> str:
        buf = io.StringIO()
        if timestamp and not deterministic:
            buf.write(f"# generated {timestamp}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGGREGATE_CSV_FIELDS)
        for a in self.aggregate():
            w.writerow(
                [
                    a["method"],
                    a["scenario_id"],
                    a["n_trials"],
                    a["n_detected"],
                    self._fmt(a["rmse_deg"]),
                    self._fmt(a["power_rmse"]),
                    self._fmt(a["success_rate"]),
                    self._fmt(a["mean_time_s"], deterministic, is_time=True),
                    self._fmt(a["crlb_deg"]),
                ]
            )
        return buf.getvalue()

    def to_json(self, metadata: dict = None, deterministic: bool = False) -> str:
        def row_obj(r: TrialRow) -> dict:
            return {
                "method": r.method,
                "scenario_id": r.scenario_id,
                "trial": r.trial,
                "seed": r.seed,
                "rmse_deg": None if not np.isfinite(r.rmse_deg) else r.rmse_deg,
                "power_rmse": None if not np.isfinite(r.power_rmse) else r.power_rmse,
                "time_s": 0.0 if deterministic else r.time_s,
                "converged": bool(r.converged),
                "k_hat": r.k_hat,
                "failure": r.failure,
            }

        def agg_obj(a: dict) -> dict:
            out = dict(a)
            if deterministic:
                out["mean_time_s"] = 0.0
            for key in ("rmse_deg", "power_rmse", "mean_time_s", "crlb_deg"):
                if isinstance(out[key], float) and not np.isfinite(out[key]):
                    out[key] = None
            return out

        doc = {
            "metadata": metadata or {},
            "trials": [row_obj(r) for r in self.rows],
            "aggregate": [agg_obj(a) for a in self.aggregate()],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def score_estimate(thetas_true, powers_true, est) -> tuple:
    """Sorted-order pairing of estimates against the truth.

    Pairs the first ``min(k_hat, k_true)`` entries of the two sorted lists
    and returns (doa_errors_deg, power_errors, detected) with
    ``detected = (k_hat == k_true)``.
    """
    t_true = np.sort(np.asarray(thetas_true, dtype=float))
    p_true = np.asarray(powers_true, dtype=float)[np.argsort(np.asarray(thetas_true))]
    t_est = np.asarray(est.thetas_deg, dtype=float)
    p_est = np.asarray(est.powers, dtype=float)
    k = min(t_true.size, t_est.size)
    doa_err = t_est[:k] - t_true[:k]
    pow_err = p_est[:k] - p_true[:k]
    return doa_err, pow_err, t_est.size == t_true.size


def run_monte_carlo(methods, scenarios, n_trials: int, seed0: int,
                    with_crlb: bool = True) -> TrialTable:
    """Run every method over every scenario for ``n_trials`` trials.

    ``methods`` is a list of (name, fn) with
    ``fn(snapshots, geom, scenario) -> (DoaEstimate, extras)`` where extras
    is a dict that may carry a ``converged`` flag. Method failures become
    flagged rows; the sweep never aborts.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    table = TrialTable()
    for bs in scenarios:
        if with_crlb and bs.scenario.k_sources < bs.geom.m_sensors:
            try:
                table.crlb[bs.scenario_id] = crlb_rmse_deg(bs.geom, bs.scenario)
            except ValueError:
                pass
        for trial in range(n_trials):
            seed = seed0 + trial
            scen = Scenario(
                thetas_deg=bs.scenario.thetas_deg,
                powers=bs.scenario.powers,
                snr_db=bs.scenario.snr_db,
                n_snapshots=bs.scenario.n_snapshots,
                seed=seed,
            )
            snaps = synthesize_snapshots(bs.geom, scen)
            for name, fn in methods:
                t0 = time.perf_counter()
                try:
                    est, extras = fn(snaps, bs.geom, scen)
                    elapsed = time.perf_counter() - t0
                    doa_err, pow_err, detected = score_estimate(
                        scen.thetas_deg, scen.powers, est
                    )
                    row = TrialRow(
                        method=name,
                        scenario_id=bs.scenario_id,
                        trial=trial,
                        seed=seed,
                        doa_errors_deg=np.asarray(doa_err, dtype=float),
                        power_errors=np.asarray(pow_err, dtype=float),
                        time_s=elapsed,
                        converged=bool(extras.get("converged", True)),
                        k_hat=est.k_hat,
                        detected=detected,
                    )
                except Exception as exc:  # failures become outlier rows
                    elapsed = time.perf_counter() - t0
                    row = TrialRow(
                        method=name,
                        scenario_id=bs.scenario_id,
                        trial=trial,
                        seed=seed,
                        doa_errors_deg=np.array([]),
                        power_errors=np.array([]),
                        time_s=elapsed,
                        converged=False,
                        k_hat=-1,
                        detected=False,
                        failure=f"{type(exc).__name__}: {exc}",
                    )
                table.rows.append(row)
    return table

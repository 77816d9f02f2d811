"""Self-describing text container for array snapshots.

A short header of ``key value`` lines (dimensions, sensor indices, seed,
noise power, optional ground truth) is followed by a ``data`` line and one
row per snapshot holding ``re im`` pairs, one pair per sensor. Floats are
written with 17 significant digits so a round trip is bit exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import ArrayGeometry, sla

MAGIC = "gldoa-snapshots v1"


@dataclass
class SnapshotFile:
    x: np.ndarray
    geom: ArrayGeometry
    seed: int = None
    sigma_true: float = None
    thetas_deg: np.ndarray = None
    powers: np.ndarray = None
    snr_db: float = None

    @property
    def n_snapshots(self) -> int:
        return self.x.shape[1]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dump_snapshots(doc: SnapshotFile) -> str:
    x = np.asarray(doc.x, dtype=complex)
    m, l = x.shape
    if m != doc.geom.m_sensors:
        raise ValueError("row count does not match the sensor count")
    lines = [
        MAGIC,
        f"sensors {m}",
        f"snapshots {l}",
        "omega " + " ".join(str(i) for i in doc.geom.omega),
    ]
    if doc.seed is not None:
        lines.append(f"seed {int(doc.seed)}")
    if doc.sigma_true is not None:
        lines.append(f"sigma_true {_fmt(doc.sigma_true)}")
    if doc.thetas_deg is not None:
        lines.append("thetas_deg " + " ".join(_fmt(t) for t in doc.thetas_deg))
    if doc.powers is not None:
        lines.append("powers " + " ".join(_fmt(p) for p in doc.powers))
    if doc.snr_db is not None:
        lines.append(f"snr_db {_fmt(doc.snr_db)}")
    lines.append("data")
    for j in range(l):
        pairs = []
        for i in range(m):
            pairs.append(_fmt(x[i, j].real))
            pairs.append(_fmt(x[i, j].imag))
        lines.append(" ".join(pairs))
    return "\n".join(lines) + "\n"


def write_snapshots(path, doc: SnapshotFile) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dump_snapshots(doc))


def parse_snapshots(text: str) -> SnapshotFile:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"not a snapshot file (expected first line {MAGIC!r})")
    header = {}
    data_at = None
    for i, raw in enumerate(lines[1:], start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "data":
            data_at = i + 1
            break
        key, _, rest = line.partition(" ")
        if key in header:
            raise ValueError(f"duplicate header key {key!r}")
        header[key] = rest.split()
    if data_at is None:
        raise ValueError("missing 'data' line")

    known = {"sensors", "snapshots", "omega", "seed", "sigma_true",
             "thetas_deg", "powers", "snr_db"}
    for key in header:
        if key not in known:
            raise ValueError(f"unknown header key {key!r}")
    for key in ("sensors", "snapshots", "omega"):
        if key not in header:
            raise ValueError(f"missing header key {key!r}")

    m = int(header["sensors"][0])
    l = int(header["snapshots"][0])
    geom = sla(int(tok) for tok in header["omega"])
    if geom.m_sensors != m:
        raise ValueError("omega length does not match the sensor count")

    rows = [r.split() for r in lines[data_at:] if r.strip()]
    if len(rows) != l:
        raise ValueError(f"expected {l} data rows, found {len(rows)}")
    x = np.empty((m, l), dtype=complex)
    for j, toks in enumerate(rows):
        if len(toks) != 2 * m:
            raise ValueError(f"data row {j} has {len(toks)} numbers, expected {2 * m}")
        vals = np.array([float(t) for t in toks])
        x[:, j] = vals[0::2] + 1j * vals[1::2]

    def opt_scalar(key, cast):
        return cast(header[key][0]) if key in header else None

    def opt_array(key):
        return np.array([float(t) for t in header[key]]) if key in header else None

    return SnapshotFile(
        x=x,
        geom=geom,
        seed=opt_scalar("seed", int),
        sigma_true=opt_scalar("sigma_true", float),
        thetas_deg=opt_array("thetas_deg"),
        powers=opt_array("powers"),
        snr_db=opt_scalar("snr_db", float),
    )


def read_snapshots(path) -> SnapshotFile:
    with open(path, "r", encoding="ascii") as fh:
        return parse_snapshots(fh.read())

"""Flat key-value run configuration.

One key per line, whitespace-separated values, ``#`` comments. Repeating a
list-valued key extends it, so both ``theta -1 3`` and two ``theta`` lines
spell the same scenario. Every key is checked against the schema by name
and every value is type-checked before any computation starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .arrays import ArrayGeometry, sla, ula
from .errors import ConfigError
from .methods import parse_method
from .penalties import PENALTY_KINDS

FORMATS = ("csv", "json")

# key -> (dest field, element type, is_list)
_SCHEMA = {
    "array": ("array", str, True),
    "theta": ("thetas_deg", float, True),
    "power": ("powers", float, True),
    "snr": ("snr_db", float, False),
    "snapshots": ("n_snapshots", int, False),
    "seed": ("seed", int, False),
    "k": ("k", int, False),
    "method": ("methods", str, True),
    "penalty": ("penalty", str, False),
    "epsilon": ("epsilon", float, False),
    "delta": ("delta", float, False),
    "lam": ("lam", float, False),
    "chi2_p": ("chi2_p", float, False),
    "beta_sq": ("beta_sq", float, False),
    "sigma_mode": ("sigma_mode", str, False),
    "max_outer_iters": ("max_outer_iters", int, False),
    "rel_tol": ("rel_tol", float, False),
    "eta": ("eta", float, False),
    "music_step": ("music_step_deg", float, False),
    "snr_sweep": ("snr_sweep", float, True),
    "sep_sweep": ("sep_sweep", float, True),
    "l_sweep": ("l_sweep", int, True),
    "n_trials": ("n_trials", int, False),
    "seed0": ("seed0", int, False),
    "output": ("output", str, False),
    "format": ("format", str, False),
}

SCHEMA_KEYS = tuple(_SCHEMA)


@dataclass
class RunConfig:
    """Every field optional at parse time; commands check what they need."""

    array: ArrayGeometry = None
    thetas_deg: list = None
    powers: list = None
    snr_db: float = 0.0
    n_snapshots: int = 200
    seed: int = 0
    k: int = None
    methods: list = field(default_factory=list)
    penalty: str = "log"
    epsilon: float = None
    delta: float = None
    lam: float = 0.1
    chi2_p: float = 0.001
    beta_sq: float = None
    sigma_mode: str = "direct"
    max_outer_iters: int = 20
    rel_tol: float = 1e-4
    eta: float = 1e-3
    music_step_deg: float = None
    snr_sweep: list = None
    sep_sweep: list = None
    l_sweep: list = None
    n_trials: int = 20
    seed0: int = 0
    output: str = None
    format: str = "csv"


def parse_config_text(text: str, source: str = "config") -> dict:
    """Tokenize into {key: [raw tokens]}; duplicate list keys extend."""
    mapping = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, vals = parts[0], parts[1:]
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{ln}: unknown config key '{key}'")
        if not vals:
            raise ConfigError(f"{source}:{ln}: key '{key}' has no value")
        _, _, is_list = _SCHEMA[key]
        if key in mapping and not is_list:
            raise ConfigError(f"{source}:{ln}: key '{key}' given more than once")
        mapping.setdefault(key, []).extend(vals)
    return mapping


def _parse_array(tokens) -> ArrayGeometry:
    if not tokens:
        raise ConfigError("key 'array': empty value")
    kind = tokens[0].lower()
    try:
        if kind == "ula":
            if len(tokens) != 2:
                raise ValueError("expected 'ula N'")
            return ula(int(tokens[1]))
        if kind == "sla":
            if len(tokens) < 2:
                raise ValueError("expected 'sla i1 i2 ...'")
            return sla(int(t) for t in tokens[1:])
        raise ValueError("array kind must be 'ula' or 'sla'")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"key 'array': {exc}") from exc


def build_config(mapping: dict) -> RunConfig:
    """Validate a token mapping into a RunConfig; errors name the key."""
    cfg = RunConfig()
    for key, tokens in mapping.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        dest, caster, is_list = _SCHEMA[key]
        if key == "array":
            cfg.array = _parse_array(tokens)
            continue
        try:
            values = [caster(t) for t in tokens]
        except ValueError as exc:
            raise ConfigError(f"key '{key}': {exc}") from exc
        if is_list:
            setattr(cfg, dest, values)
        else:
            if len(values) != 1:
                raise ConfigError(f"key '{key}' expects exactly one value")
            setattr(cfg, dest, values[0])

    if cfg.penalty not in PENALTY_KINDS:
        raise ConfigError(f"key 'penalty': must be one of {PENALTY_KINDS}")
    if cfg.format not in FORMATS:
        raise ConfigError(f"key 'format': must be one of {FORMATS}")
    if cfg.sigma_mode not in ("direct", "full_fill"):
        raise ConfigError("key 'sigma_mode': must be 'direct' or 'full_fill'")
    for name in cfg.methods:
        try:
            parse_method(name)
        except ValueError as exc:
            raise ConfigError(f"key 'method': {exc}") from exc
    if cfg.thetas_deg is not None and cfg.powers is not None:
        if len(cfg.powers) != len(cfg.thetas_deg):
            raise ConfigError("key 'power': needs one value per theta")
    if cfg.n_trials < 1:
        raise ConfigError("key 'n_trials': must be >= 1")
    if cfg.n_snapshots < 1:
        raise ConfigError("key 'snapshots': must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read(), source=str(path)))

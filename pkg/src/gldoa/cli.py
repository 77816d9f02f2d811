"""Command line front end: ``simulate | estimate | bench``.

All angles on this interface are degrees and all powers are linear. Flags
mirror the config-file keys one to one; a flag wins over the file when both
set the same key. Exit codes: 0 success, 1 runtime or numeric failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arrays import Scenario, sample_covariance, synthesize_snapshots
from .bench import BenchScenario, run_monte_carlo
from .config import FORMATS, SCHEMA_KEYS, RunConfig, build_config, parse_config_text
from .driver import run_icmra_cov
from .errors import ConfigError, GldoaError
from .methods import MethodSettings, icmra_config_for, method_runner, parse_method
from .recovery import extract_doas, music_estimate
from .snapfile import SnapshotFile, read_snapshots, write_snapshots

_EPILOG = """config keys (file: one 'key value...' per line; flags mirror them):
  array "ula N" | "sla i1 i2 ..."   sensor grid, 1-based indices
  theta / power                     source directions (deg) and linear powers
  snr (dB)  snapshots  seed  k      scenario fields
  method                            cmra | icmra | ficmra | music
                                    (icmra/ficmra take an optional -log/-lp/-laplace
                                    suffix; otherwise the 'penalty' key applies)
  penalty epsilon delta             eigenvalue penalty and annealing
  lam chi2_p beta_sq sigma_mode     fit knobs (sigma_mode: direct | full_fill)
  max_outer_iters rel_tol eta       loop and rank-detection knobs
  music_step                        search grid step (deg)
  snr_sweep sep_sweep l_sweep       bench sweep axes
  n_trials seed0 output format      bench output control (format: csv | json)
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gldoa",
        description="Gridless DOA estimation via reweighted Toeplitz covariance fitting.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"gldoa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", metavar="PATH", help="key-value config file")
        for key in SCHEMA_KEYS:
            p.add_argument(
                f"--{key.replace('_', '-')}",
                dest=f"cfg_{key}",
                metavar="V",
                help=f"set config key '{key}' (space-separated values in one string)",
            )

    p_sim = sub.add_parser("simulate", help="synthesize snapshots into a file",
                           epilog=_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    add_common(p_sim)

    p_est = sub.add_parser("estimate", help="run one method on a snapshot file "
                           "or an inline scenario", epilog=_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    add_common(p_est)
    p_est.add_argument("--input", metavar="PATH", help="snapshot file from 'simulate'")

    p_bench = sub.add_parser("bench", help="Monte Carlo sweep with CSV/JSON tables",
                             epilog=_EPILOG,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    add_common(p_bench)
    p_bench.add_argument("--deterministic", action="store_true",
                         help="suppress timestamps and zero timing columns "
                              "so reruns are byte-identical")
    return parser


def _config_from_args(args):
    """Returns (RunConfig, merged raw mapping); flags win over the file."""
    mapping = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        mapping = parse_config_text(text, source=args.config)
    for key in SCHEMA_KEYS:
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            tokens = raw.split()
            if not tokens:
                raise ConfigError(f"key '{key}' has no value")
            mapping[key] = tokens
    return build_config(mapping), mapping


def _require(cfg: RunConfig, names) -> None:
    labels = {"array": "array", "thetas_deg": "theta", "output": "output",
              "methods": "method"}
    for attr in names:
        val = getattr(cfg, attr)
        if val is None or (isinstance(val, list) and not val):
            raise ConfigError(f"missing required config key '{labels.get(attr, attr)}'")


def _scenario_from(cfg: RunConfig) -> Scenario:
    powers = cfg.powers if cfg.powers is not None else [1.0] * len(cfg.thetas_deg)
    if len(powers) != len(cfg.thetas_deg):
        raise ConfigError("key 'power': needs one value per theta")
    try:
        return Scenario(
            thetas_deg=tuple(cfg.thetas_deg),
            powers=tuple(powers),
            snr_db=cfg.snr_db,
            n_snapshots=cfg.n_snapshots,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _method_settings(cfg: RunConfig) -> MethodSettings:
    return MethodSettings(
        sigma_mode=cfg.sigma_mode,
        max_outer_iters=cfg.max_outer_iters,
        rel_tol=cfg.rel_tol,
        chi2_p=cfg.chi2_p,
        beta_sq=cfg.beta_sq,
        lam=cfg.lam,
        eta=cfg.eta,
        music_grid_step_deg=cfg.music_step_deg,
        epsilon=cfg.epsilon,
        delta=cfg.delta,
    )


def _full_method_token(name: str, cfg: RunConfig) -> str:
    family, kind = parse_method(name)
    if family in ("icmra", "ficmra") and kind is None:
        return f"{family}-{cfg.penalty}"
    return name.strip().lower()


def cmd_simulate(cfg: RunConfig) -> int:
    _require(cfg, ("array", "thetas_deg", "output"))
    scen = _scenario_from(cfg)
    snaps = synthesize_snapshots(cfg.array, scen)
    doc = SnapshotFile(
        x=snaps.x,
        geom=cfg.array,
        seed=cfg.seed,
        sigma_true=snaps.sigma_true,
        thetas_deg=np.asarray(scen.thetas_deg),
        powers=np.asarray(scen.powers),
        snr_db=scen.snr_db,
    )
    write_snapshots(cfg.output, doc)
    m, l = snaps.x.shape
    print(f"wrote {cfg.output}: {m} sensors x {l} snapshots")
    print(f"sigma_true {snaps.sigma_true:.12g}")
    print(f"seed {cfg.seed}")
    return 0


def _json_ready(obj):
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


def _emit_estimate_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_ready(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_estimate(cfg: RunConfig, input_path: str) -> int:
    if not cfg.methods:
        raise ConfigError("missing required config key 'method'")
    if len(cfg.methods) != 1:
        raise ConfigError("estimate takes exactly one method")
    token = _full_method_token(cfg.methods[0], cfg)
    family, _ = parse_method(token)

    k_hint = None
    snr_hint = cfg.snr_db
    if input_path:
        try:
            filed = read_snapshots(input_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read snapshots: {exc}") from exc
        x, geom = filed.x, filed.geom
        if filed.thetas_deg is not None:
            k_hint = filed.thetas_deg.size
        if filed.snr_db is not None:
            snr_hint = filed.snr_db
    else:
        _require(cfg, ("array", "thetas_deg"))
        scen = _scenario_from(cfg)
        x = synthesize_snapshots(cfg.array, scen).x
        geom = cfg.array
        k_hint = scen.k_sources

    settings = _method_settings(cfg)
    doc = {"version": __version__, "method": token, "error": None}
    r_hat = sample_covariance(x)
    print(f"method {token}")

    if family == "music":
        k = cfg.k if cfg.k is not None else k_hint
        if k is None:
            raise ConfigError("method 'music' requires the 'k' key")
        try:
            est = music_estimate(r_hat, k, geom,
                                 grid_step_deg=settings.music_grid_step_deg,
                                 snr_db=snr_hint)
        except GldoaError as exc:
            print(f"estimate failed: {exc}", file=sys.stderr)
            doc["error"] = str(exc)
            if cfg.output:
                _emit_estimate_json(cfg.output, doc)
            return 1
    else:
        loop_cfg = icmra_config_for(token, settings)
        try:
            result = run_icmra_cov(r_hat, x.shape[1], geom, loop_cfg)
        except GldoaError as exc:
            print(f"fit failed: {exc}", file=sys.stderr)
            doc["error"] = str(exc)
            if cfg.output:
                _emit_estimate_json(cfg.output, doc)
            return 1
        doc.update(
            sigma=result.sigma,
            beta_sq=result.beta_sq,
            iters_run=result.iters_run,
            converged=result.converged,
            stop_reason=result.stop_reason,
            wall_time_s=result.wall_time_s,
            iter_times_s=list(result.iter_times_s),
            surrogate_trace=list(result.surrogate_trace),
            eigen_history=[list(e) for e in result.eigen_history],
        )
        print(f"sigma {result.sigma:.12g}")
        print(f"iterations {result.iters_run} ({result.stop_reason}), "
              f"time {result.wall_time_s:.3f}s")
        print("surrogate " + " ".join(f"{v:.6g}" for v in result.surrogate_trace))
        print("eigenvalues " + " ".join(f"{v:.6g}" for v in result.final_eigs))
        try:
            est = extract_doas(result.u, r_hat, result.sigma, geom,
                               eta=settings.eta,
                               drop_zero_power=settings.drop_zero_power)
        except GldoaError as exc:
            print(f"direction extraction failed: {exc}", file=sys.stderr)
            doc["error"] = str(exc)
            if cfg.output:
                _emit_estimate_json(cfg.output, doc)
            return 1

    doc.update(
        k_hat=est.k_hat,
        thetas_deg=list(est.thetas_deg),
        powers=list(est.powers),
        rank=est.rank,
    )
    print(f"k_hat {est.k_hat}")
    for theta, power in zip(est.thetas_deg, est.powers):
        print(f"doa_deg {theta:+.6f}  power {power:.6g}")
    if cfg.output:
        _emit_estimate_json(cfg.output, doc)
        print(f"wrote {cfg.output}")
    return 0


def _bench_scenarios(cfg: RunConfig):
    base = _scenario_from(cfg)
    snrs = cfg.snr_sweep if cfg.snr_sweep else [base.snr_db]
    seps = cfg.sep_sweep if cfg.sep_sweep else [None]
    lens = cfg.l_sweep if cfg.l_sweep else [base.n_snapshots]
    if cfg.sep_sweep and len(base.thetas_deg) != 2:
        raise ConfigError("key 'sep_sweep': needs a two-source base scenario")
    out = []
    for snr in snrs:
        for sep in seps:
            for l in lens:
                thetas = base.thetas_deg
                if sep is not None:
                    center = float(np.mean(base.thetas_deg))
                    thetas = (center - sep / 2.0, center + sep / 2.0)
                sid = f"snr{snr:g}_L{l}" + ("" if sep is None else f"_sep{sep:g}")
                try:
                    scen = Scenario(thetas_deg=thetas, powers=base.powers,
                                    snr_db=snr, n_snapshots=int(l), seed=0)
                except ValueError as exc:
                    raise ConfigError(f"sweep point {sid}: {exc}") from exc
                out.append(BenchScenario(scenario_id=sid, geom=cfg.array, scenario=scen))
    return out


def cmd_bench(cfg: RunConfig, deterministic: bool, config_echo: dict) -> int:
    _require(cfg, ("array", "thetas_deg", "methods"))
    scenarios = _bench_scenarios(cfg)
    settings = _method_settings(cfg)
    methods = []
    for name in cfg.methods:
        token = _full_method_token(name, cfg)
        methods.append((token, method_runner(token, settings)))

    table = run_monte_carlo(methods, scenarios, cfg.n_trials, cfg.seed0)
    timestamp = None
    if not deterministic:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()

    failures = [r for r in table.rows if r.failure]
    if cfg.format == "json":
        metadata = {
            "config": {k: " ".join(v) for k, v in sorted(config_echo.items())},
            "version": __version__,
            "seed0": cfg.seed0,
            "n_trials": cfg.n_trials,
            "rmse_definition": "joint over sources and trials",
        }
        if timestamp:
            metadata["generated"] = timestamp
        text = table.to_json(metadata=metadata, deterministic=deterministic)
        if cfg.output:
            Path(cfg.output).write_text(text, encoding="utf-8")
            print(f"wrote {cfg.output}")
        else:
            sys.stdout.write(text)
    else:
        agg_text = table.aggregate_csv(deterministic=deterministic, timestamp=timestamp)
        if cfg.output:
            out = Path(cfg.output)
            out.write_text(agg_text, encoding="utf-8")
            trials_path = out.with_name(out.stem + "_trials" + (out.suffix or ".csv"))
            trials_path.write_text(
                table.trials_csv(deterministic=deterministic, timestamp=timestamp),
                encoding="utf-8",
            )
            print(f"wrote {out} and {trials_path}")
        else:
            sys.stdout.write(agg_text)

    if failures:
        print(f"warning: {len(failures)} of {len(table.rows)} trials failed",
              file=sys.stderr)
    if len(failures) == len(table.rows):
        print("all trials failed", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, mapping = _config_from_args(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.input)
        return cmd_bench(cfg, args.deterministic, mapping)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GldoaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``gamris <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench
from ._io import pairs_to_complex
from .corrchan import (
    EquivalentChannel,
    build_correlation_matrix,
    channel_from_json,
    channel_to_json,
    reduce_to_equivalent,
    sample_channel,
)
from .echelon import Method, decompose, decomposition_from_json, decomposition_to_json
from .errors import ConfigError, GamrisError, InputError

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (a run manifest also works)")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--preset", choices=sorted(bench.PRESETS), help="start from a named preset")
    parser.add_argument("--threads", type=int, help="cap on worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamris", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser)
    # subparser copies default to SUPPRESS so flags given before the subcommand survive
    shared = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _common(shared)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rre-bench", parents=[shared], help="residual error sweep over n, d and methods")
    p.add_argument("--timing", dest="record_timing", action="store_true", default=None,
                   help="fill seconds_mean (makes the CSV run-dependent)")
    p.add_argument("--realizations", type=int)
    p.add_argument("--rr-trials", dest="rr_trials", type=int)

    p = sub.add_parser("ser-sim", parents=[shared], help="Monte Carlo SER of GAM and QR-SIC")
    p.add_argument("--frames", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--channel-seed", dest="channel_seed", type=int)

    p = sub.add_parser("constellation-dump", parents=[shared], help="constellations for one pinned channel")
    p.add_argument("--channel-seed", dest="channel_seed", type=int)

    p = sub.add_parser("decompose", parents=[shared], help="decompose a matrix from a JSON file")
    p.add_argument("matrix_file")
    p.add_argument("--method", default="cp", choices=[m.value for m in Method])
    p.add_argument("--rr-trials", dest="rr_trials", type=int)

    p = sub.add_parser("channel-gen", parents=[shared], help="draw one channel realization")
    p.add_argument("--channel-seed", dest="channel_seed", type=int)
    return parser


_OVERRIDES = ("seed", "out", "threads", "record_timing", "realizations", "rr_trials", "frames", "channel_seed")


def resolve_config(args) -> bench.ExperimentConfig:
    values = dict(bench.PRESETS[args.preset]) if getattr(args, "preset", None) else {}
    if getattr(args, "config", None):
        values.update(bench.load_config(args.config))
    for key in _OVERRIDES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return bench.ExperimentConfig.from_dict(values)


def _read_matrix(path) -> np.ndarray:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}:1:1: expected a JSON object")
    if {"H", "g", "d"} <= set(obj):
        return reduce_to_equivalent(channel_from_json(obj)).Hcheck
    if {"B", "C", "P"} <= set(obj):
        return decomposition_from_json(obj).reconstruct()
    if "matrix" in obj:
        shape = obj.get("shape")
        return np.atleast_2d(pairs_to_complex(obj["matrix"], tuple(shape) if shape else None))
    raise ConfigError(f"{path}:1:1: expected a channel dump, a decomposition dump or a 'matrix' entry")


def _cmd_decompose(args, cfg) -> int:
    H = EquivalentChannel.from_matrix(_read_matrix(args.matrix_file)).Hcheck
    kw = {}
    if Method(args.method) is Method.RANDOM_ROTATION:
        kw = dict(trials=cfg.rr_trials, seed=bench.derive_seed(cfg.seed, 1))
    dec = decompose(H, args.method, **kw)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"decomposition_{dec.method.value}.json"
    path.write_text(json.dumps(decomposition_to_json(dec), indent=2) + "\n")
    print(f"rre {dec.rre:.6e}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_channel_gen(args, cfg) -> int:
    seed = cfg.channel_seed if cfg.channel_seed is not None else bench.derive_seed(cfg.seed, 2, 0)
    ch = sample_channel(cfg.grid, cfg.attenuation, cfg.n_r, build_correlation_matrix(cfg.grid), seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "channel.json"
    path.write_text(json.dumps(channel_to_json(ch)) + "\n")
    eq = reduce_to_equivalent(ch)
    bench.write_manifest(out / "manifest.json", cfg, "channel-gen", [path], {"channel": str(seed)})
    print(f"tau {eq.tau}, n_check {eq.n_check}, seed {seed}")
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log = lambda msg: print(msg, flush=True)  # noqa: E731
    try:
        cfg = resolve_config(args)
        if args.command == "rre-bench":
            report = bench.run_rre_bench(cfg, log)
            for c in report.cells:
                print(f"n={c.n} d={c.spacing:g} {c.method}: median rre {np.median(c.values):.3e}")
        elif args.command == "ser-sim":
            bench.run_ser_sim(cfg, log)
        elif args.command == "constellation-dump":
            bench.run_constellation_dump(cfg, cfg.channel_seed, log)
        elif args.command == "decompose":
            return _cmd_decompose(args, cfg)
        elif args.command == "channel-gen":
            return _cmd_channel_gen(args, cfg)
        print(f"wrote results to {cfg.out}")
    except (ConfigError, InputError) as exc:
        print(f"gamris: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"gamris: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GamrisError as exc:
        print(f"gamris: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

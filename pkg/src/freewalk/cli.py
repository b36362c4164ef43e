"""Command line front end: one subcommand per experiment, plus validate.

Every run verb reads one JSON config (a file path or the name of a
shipped config), executes, and writes artifacts plus a manifest into the
output directory.  Exit codes are stable so scripts can branch on them:

    0  success
    2  config rejected (every schema error is printed, one per line)
    3  an enumeration budget was exhausted
    4  a cross-check failed (routes to the same number disagree)
    1  cache I/O failure or any unexpected error
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .groups import BudgetExceededError
from .experiments import (
    CacheError,
    ConfigError,
    InconsistencyError,
    canned_config,
    experiment_kinds,
    list_canned,
    parse_config_dict,
    run,
)

_DEFAULT_CANNED = {
    "spectral-report": "f2",
    "green-table": "f2",
    "ratio-limit": "f2_lazy",
    "ray-scan": "f2",
    "ancona": "f2",
    "llt-fit": "f2_lazy",
    "radical": "f2_lazy",
    "reproduce-z5z": "z5z",
    "selftest": "f2",
}

_EXIT_CONFIG = 2
_EXIT_BUDGET = 3
_EXIT_INCONSISTENT = 4


def _load_raw(config_arg: Optional[str], verb: str) -> dict:
    """Resolve --config to a raw dict: a file path or a shipped name."""
    if config_arg is None:
        return canned_config(_DEFAULT_CANNED[verb])
    path = Path(config_arg)
    if path.exists():
        import json

        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(
                [f"{path}: invalid JSON at line {exc.lineno}, "
                 f"column {exc.colno}: {exc.msg}"]
            ) from exc
    if config_arg in list_canned():
        return canned_config(config_arg)
    raise ConfigError(
        [f"--config: {config_arg!r} is neither a file nor a shipped config "
         f"(shipped: {', '.join(list_canned())})"]
    )


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        help="config file path, or the name of a shipped config "
             "(default: a shipped config suited to the subcommand)",
    )
    parser.add_argument(
        "--out",
        help="output directory (default: freewalk-out/<subcommand>)",
    )
    parser.add_argument(
        "--cache",
        help="cache directory for heavy intermediates (default: no cache)",
    )
    parser.add_argument(
        "--seed", type=int, help="override the config's random seed"
    )
    parser.add_argument(
        "--strict", action="store_true",
        help="treat config warnings (unknown keys, renormalized weights) as errors",
    )
    parser.add_argument(
        "--jobs", type=int, default=1,
        help="worker threads for independent grid points (default 1)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freewalk",
        description="Green-function and ratio-limit experiments on free products "
                    "of lattices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser(
        "validate", help="check a config and print its canonical hash"
    )
    p_val.add_argument("--config", help="config file path or shipped config name")
    p_val.add_argument(
        "--kind", choices=experiment_kinds(),
        help="validate the experiment parameters for this subcommand",
    )
    p_val.add_argument("--strict", action="store_true",
                       help="treat warnings as errors")

    for verb in experiment_kinds():
        p = sub.add_parser(verb, help=f"run the {verb} experiment")
        _add_common(p)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            raw = _load_raw(args.config, args.kind or "selftest")
            config = parse_config_dict(raw, strict=args.strict, kind=args.kind)
            for w in config.warnings:
                print(f"warning: {w}", file=sys.stderr)
            print(f"ok: config hash {config.config_hash}")
            if config.kind:
                print(f"experiment: {config.kind}")
            return 0

        verb = args.command
        raw = _load_raw(args.config, verb)
        if args.seed is not None:
            raw = dict(raw)
            raw["seed"] = args.seed
        config = parse_config_dict(raw, strict=args.strict, kind=verb)
        for w in config.warnings:
            print(f"warning: {w}", file=sys.stderr)
        out_dir = Path(args.out) if args.out else Path("freewalk-out") / verb
        manifest = run(config, out_dir, cache_dir=args.cache, jobs=args.jobs)
        for name in manifest.artifacts:
            print(f"wrote {out_dir / name}")
        print(f"wrote {out_dir / 'manifest.json'}")
        return 0
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return _EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return _EXIT_BUDGET
    except InconsistencyError as exc:
        print(f"inconsistency: {exc}", file=sys.stderr)
        return _EXIT_INCONSISTENT
    except CacheError as exc:
        print(f"cache failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

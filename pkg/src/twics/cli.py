"""Command line: ``twics run|presets|validate|version``.

Exit codes: 0 success, 1 invalid config, 2 runtime or estimation failure.
Only the worker count comes from the environment (``TWICS_WORKERS``);
everything else lives in the config file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ScenarioFailure, TwicsError
from .scenario import (
    ConfigValidationError,
    emit_reports,
    load_and_validate_config,
    preset,
    preset_catalog,
    run_scenario,
    validate_config_dict,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

PRESET_PREFIX = "preset:"


def _load(source: str):
    if source.startswith(PRESET_PREFIX):
        try:
            return preset(source[len(PRESET_PREFIX):])
        except KeyError as exc:
            raise ConfigValidationError([exc.args[0]]) from None
    try:
        return load_and_validate_config(source)
    except FileNotFoundError:
        raise ConfigValidationError([f"config file not found: {source}"]) from None


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.out is not None:
        overrides["outputs"] = args.out
    if overrides:
        cfg = validate_config_dict({**cfg.model_dump(mode="json"), **overrides})
    result = run_scenario(cfg)
    paths = emit_reports(result, Path(cfg.outputs))
    for e in result.estimates:
        print(
            f"{e.label:16s} mean={e.mean_point:+.4f} truth={e.truth:+.4f} bias={e.bias:+.4f} "
            f"coverage={e.coverage:.3f} reps={e.n_reps}"
        )
    for note in result.notes:
        print(f"note: {note}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_presets(args) -> int:
    if args.name is None:
        for name, cfg in preset_catalog().items():
            print(f"{name:14s} target_n={cfg.design.target_n:<5d} {cfg.description}")
        return EXIT_OK
    try:
        cfg = preset(args.name)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_INVALID
    sys.stdout.write(cfg.to_json())
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"valid: {cfg.name} ({cfg.replications} replications, analyses {', '.join(a.value for a in cfg.analyses)})")
    return EXIT_OK


def _cmd_version(args) -> int:
    print(__version__)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twics", description="Simulate trials embedded in cohorts.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config and write reports")
    run.add_argument("config", help=f"path to a JSON config, or {PRESET_PREFIX}NAME")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--reps", type=int, help="override replications")
    run.add_argument("--out", help="override the output directory")
    run.set_defaults(func=_cmd_run)

    pre = sub.add_parser("presets", help="list presets or print one as JSON")
    pre.add_argument("name", nargs="?")
    pre.set_defaults(func=_cmd_presets)

    val = sub.add_parser("validate", help="check a config and report every problem")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)

    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=_cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioFailure, TwicsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

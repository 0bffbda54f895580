"""Command line interface.

    ergolab run <experiment> [--config FILE] [--seed U64] [--out DIR]
                [--format json|csv|markdown]
    ergolab spec validate FILE

Exit codes: 0 all checks pass, 2 at least one check failed, 3 config error.
The master seed comes from --seed, else the config file, else ERGOLAB_SEED.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ergolab.core import ErgolabError, SystemSpec, build_system
from ergolab.experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    emit_report,
    run_experiment,
)
from ergolab.joinings import JoiningSpec, build_joining

EXIT_OK = 0
EXIT_CHECK_FAILURE = 2
EXIT_CONFIG_ERROR = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergolab",
        description="computational laboratory for measure-preserving systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="JSON config file with knob overrides")
    run.add_argument("--seed", type=int, help="master seed (overrides config/env)")
    run.add_argument("--out", default="ergolab-out", help="output directory")
    run.add_argument("--format", default="json", choices=("json", "csv", "markdown"))

    spec = sub.add_parser("spec", help="spec file utilities")
    spec_sub = spec.add_subparsers(dest="spec_command", required=True)
    validate = spec_sub.add_parser("validate", help="validate a system or joining spec")
    validate.add_argument("file")
    return parser


def _resolve_seed(args, config_doc: dict) -> int | None:
    if args.seed is not None:
        return args.seed
    if "seed" in config_doc:
        return int(config_doc["seed"])
    env = os.environ.get("ERGOLAB_SEED")
    if env is not None:
        return int(env)
    return None


def _cmd_run(args) -> int:
    config_doc: dict = {}
    if args.config:
        try:
            with open(args.config) as handle:
                config_doc = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        declared = config_doc.get("experiment")
        if declared is not None and declared != args.experiment:
            print(
                f"config error: config is for {declared!r}, not {args.experiment!r}",
                file=sys.stderr,
            )
            return EXIT_CONFIG_ERROR
    seed = _resolve_seed(args, config_doc)
    if seed is None:
        print(
            "config error: seed is mandatory (--seed, config 'seed', or ERGOLAB_SEED)",
            file=sys.stderr,
        )
        return EXIT_CONFIG_ERROR
    try:
        config = ExperimentConfig.resolve(args.experiment, seed,
                                          config_doc.get("knobs", {}))
        report = run_experiment(config)
    except (ErgolabError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    paths = emit_report(report, args.format, args.out)
    for check in report.checks:
        status = "pass" if check.passed else "FAIL"
        print(f"[{status}] {check.check_id}: {check.observed}")
    print(f"report written to {paths[0]}")
    if report.passed:
        print(f"{args.experiment}: all {len(report.checks)} checks passed")
        return EXIT_OK
    failing = ", ".join(report.failing_check_ids)
    print(f"{args.experiment}: failing checks: {failing}", file=sys.stderr)
    return EXIT_CHECK_FAILURE


def _cmd_validate(args) -> int:
    try:
        with open(args.file) as handle:
            doc = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: cannot read {args.file}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        if "system" in doc:
            build_system(SystemSpec.from_json(doc["system"]))
            kind = doc["system"].get("kind")
        elif "joining" in doc:
            build_joining(JoiningSpec.from_json(doc["joining"]))
            kind = doc["joining"].get("kind")
        else:
            build_system(SystemSpec.from_json(doc))
            kind = doc.get("kind")
    except (ErgolabError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    print(f"valid {kind} spec: {args.file}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "spec":
        return _cmd_validate(args)
    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())

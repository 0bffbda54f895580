#!/usr/bin/env python3
"""Run every named experiment and write reports in all three formats.

Usage:
    python scripts/run_all_experiments.py --seed 2024 --out runs/
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ergolab.experiments import (  # noqa: E402
    EXPERIMENTS,
    ExperimentConfig,
    emit_report,
    run_experiment,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--experiments", nargs="*", default=list(EXPERIMENTS),
                        choices=EXPERIMENTS)
    args = parser.parse_args()

    failures = []
    for name in args.experiments:
        started = time.perf_counter()
        report = run_experiment(ExperimentConfig.resolve(name, args.seed))
        for fmt in ("json", "csv", "markdown"):
            emit_report(report, fmt, Path(args.out) / name)
        status = "ok" if report.passed else "FAILED"
        print(f"{name:18s} {status:6s} {len(report.checks)} checks "
              f"{time.perf_counter() - started:6.1f}s")
        if not report.passed:
            failures.append((name, report.failing_check_ids))
    if failures:
        for name, ids in failures:
            print(f"{name}: failing checks {ids}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Sweep rank-one parameters: dichotomy table and Wiener masses per parameter.

Prints, for a grid of parameters, the family verdict against the first
parameter and the Wiener atomic mass of a mid-stage level indicator.

The masses come out identical across parameters, and that is a fact, not a
bug: the two spacer placements produce copy offsets {0, L+1, 2L+1} and
{0, L, 2L+1}, whose pairwise-difference multisets coincide, so level-indicator
autocorrelations agree for every parameter.  The family's members are
separated by the arithmetic of the parameter difference, not by these
spectral statistics.

Usage:
    python scripts/rank1_parameter_sweep.py --depth 10 --stage 3 --N 1024 \
        --parameters 1/4 3/4 1/3 2/3 1/5
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ergolab.core import LevelIndicator  # noqa: E402
from ergolab.exact import parse_scalar  # noqa: E402
from ergolab.rank1 import Rank1Spec, build_rank1_system, dyadic_equivalence  # noqa: E402
from ergolab.spectral import correlation_sequence, wiener_atomic_mass  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--parameters", nargs="+",
                        default=["1/4", "3/4", "1/3", "2/3", "1/5"])
    parser.add_argument("--depth", type=int, default=10)
    parser.add_argument("--stage", type=int, default=3)
    parser.add_argument("--N", type=int, default=1024)
    args = parser.parse_args()

    specs = [Rank1Spec.from_rational(parse_scalar(p), args.depth)
             for p in args.parameters]
    reference = specs[0]
    print(f"{'a':>8s} {'vs ' + args.parameters[0]:>22s} {'wiener mass':>12s}")
    for label, spec in zip(args.parameters, specs):
        verdict = dyadic_equivalence(reference, spec).verdict
        system = build_rank1_system(spec)
        seq = correlation_sequence(
            system, LevelIndicator(stage=args.stage, level=0), args.N)
        mass = wiener_atomic_mass(seq, grid_max_denominator=1).total_atomic_mass
        print(f"{label:>8s} {verdict:>22s} {mass:12.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""ergolab: a computational laboratory for measure-preserving dynamical systems.

Builds explicit systems (rotations, twists, skew products, products, rank-one
cutting-and-stacking maps), computes spectral invariants exactly where the
parameters allow it (correlation sequences, Wiener atomic mass, eigenvalue
detection), constructs joinings with prescribed marginals, and wires everything
into seeded, reproducible experiments with machine-readable reports.
"""

from ergolab.exact import PhaseSum, parse_scalar, scalar_str

__all__ = ["PhaseSum", "parse_scalar", "scalar_str"]

__version__ = "0.1.0"

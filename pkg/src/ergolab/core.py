"""Measure-preserving systems with exact character integrals and seeded samplers.

A system bundles a declarative spec, a point map (exact on rational points), an
invariant measure handle, and -- for the affine families -- a *character
pullback*: composing the character with frequency vector k with the map yields
a constant unit phase times another character.  That single fact is what makes
correlation sequences, eigenvalue detection and joining checks exact.

Measures are finite mixtures of Haar factors and rational Dirac atoms (plus a
sampled-only continuous family for statistical runs).  Character integrals
against them are `PhaseSum`s; sampling is seeded and deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from ergolab.exact import PhaseSum, parse_scalar

TWO64 = 2**64

Point = tuple[Fraction, ...]
FreqVector = tuple[int, ...]


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

class ErgolabError(Exception):
    """Base class for all package errors."""


class SpecValidationError(ErgolabError):
    """A malformed spec or argument; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DepthExceededError(ErgolabError):
    """A rank-one map was applied beyond its constructed depth."""


class UnsupportedOperationError(ErgolabError):
    """The requested exact operation is not available for this object."""


class UndecidableInputError(ErgolabError):
    """Finite input cannot certify the requested verdict."""

    def __init__(self, message: str, stages_agreeing: int | None = None):
        self.stages_agreeing = stages_agreeing
        super().__init__(message)


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coord:
    """One coordinate of a product space.

    kind "circle" is the unit circle written additively as [0, 1); "cyclic" is
    the finite cyclic group of the given order embedded as {j/order}; and
    "interval" is [0, 1) *without* wrap-around (rank-one tower realizations).
    """

    kind: str
    order: int | None = None

    def label(self) -> str:
        return f"cyclic({self.order})" if self.kind == "cyclic" else self.kind


CIRCLE = Coord("circle")
INTERVAL = Coord("interval")

Space = tuple[Coord, ...]


def validate_point(space: Space, point: Sequence[Fraction], *, field: str = "point") -> Point:
    if len(point) != len(space):
        raise SpecValidationError(
            field, f"expected {len(space)} coordinates, got {len(point)}"
        )
    out = []
    for i, (coord, value) in enumerate(zip(space, point)):
        value = Fraction(value)
        if not (0 <= value < 1):
            raise SpecValidationError(f"{field}[{i}]", f"{value} is outside [0, 1)")
        if coord.kind == "cyclic" and (value * coord.order).denominator != 1:
            raise SpecValidationError(
                f"{field}[{i}]",
                f"{value} is not an element of the cyclic group of order {coord.order}",
            )
        out.append(value)
    return tuple(out)


def validate_frequencies(space: Space, k: Sequence[int], *, field: str = "k") -> FreqVector:
    if len(k) != len(space):
        raise SpecValidationError(
            field, f"frequency vector has arity {len(k)}, space has arity {len(space)}"
        )
    if not all(isinstance(v, (int, np.integer)) for v in k):
        raise SpecValidationError(field, "frequencies must be integers")
    return tuple(int(v) for v in k)


def character_at(k: FreqVector, point: Point) -> PhaseSum:
    """Exact value of e^(2*pi*i*<k, point>)."""
    angle = sum((Fraction(ki) * ti for ki, ti in zip(k, point)), Fraction(0))
    return PhaseSum.unit(angle)


def character_array(k: FreqVector, points: np.ndarray) -> np.ndarray:
    """Values of the character on an (n, arity) float array."""
    kv = np.asarray(k, dtype=np.float64)
    return np.exp(2j * np.pi * (points @ kv))


def frequency_box(arity: int, max_abs: int, *, skip_zero: bool = False) -> list[FreqVector]:
    """All integer frequency vectors with sup-norm <= max_abs."""
    out: list[FreqVector] = []
    radius = range(-max_abs, max_abs + 1)
    def rec(prefix):
        if len(prefix) == arity:
            out.append(tuple(prefix))
            return
        for v in radius:
            rec(prefix + [v])
    rec([])
    if skip_zero:
        out = [k for k in out if any(k)]
    return out


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master: int, label: str) -> int:
    """Per-task seed derived from a master seed by hashing the task label."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _draw_units(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, TWO64, size=n, dtype=np.uint64)


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

class MeasureHandle:
    """A probability measure: optional exact character integrator plus a sampler.

    Subclasses set ``space`` and ``description`` and implement
    ``integrate_character`` (returning None when no exact value exists),
    ``sample_rationals`` and ``sample_floats``.  Both sampling paths are
    deterministic given the generator state; they are *separate* streams.
    """

    space: Space
    description: str

    @property
    def arity(self) -> int:
        return len(self.space)

    @property
    def exact(self) -> bool:
        return self.integrate_character((0,) * self.arity) is not None and \
            self._fully_exact()

    def _fully_exact(self) -> bool:
        return True

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        raise NotImplementedError

    def sample_rationals(self, rng: np.random.Generator, n: int) -> list[Point]:
        raise NotImplementedError

    def sample_floats(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def split(self, coords: tuple[int, ...]) -> "MeasureSplit":
        """Disintegrate over the given coordinates; see MeasureSplit."""
        if coords == ():
            return MeasureSplit(PointMeasure(), IndependentFiber(self), ())
        if coords == tuple(range(self.arity)):
            return MeasureSplit(self, IndependentFiber(PointMeasure()), coords)
        raise UnsupportedOperationError(
            f"{type(self).__name__} cannot be disintegrated over coordinates {coords}"
        )

    def enumerate_atoms(self) -> Optional[list[tuple[Fraction, Point]]]:
        """(weight, point) pairs when the measure has finite support, else None."""
        return None


@dataclass
class MeasureSplit:
    """A disintegration: base marginal over `coords` plus a fiber model."""

    base: MeasureHandle
    fiber: "IndependentFiber | ConditionalAtomsFiber"
    coords: tuple[int, ...]


@dataclass
class IndependentFiber:
    """Fiber measure that does not depend on the base point (product structure)."""

    measure: MeasureHandle

    def at(self, base_point: Point) -> MeasureHandle:
        return self.measure


@dataclass
class ConditionalAtomsFiber:
    """Fiber measures looked up per base atom (finite-support bases only)."""

    table: dict[Point, MeasureHandle]

    def at(self, base_point: Point) -> MeasureHandle:
        try:
            return self.table[tuple(base_point)]
        except KeyError:
            raise SpecValidationError(
                "base_point", f"{base_point} is not an atom of the disintegrated base"
            ) from None


class PointMeasure(MeasureHandle):
    """The unique measure on the zero-arity space (used for trivial factors)."""

    def __init__(self):
        self.space = ()
        self.description = "point"

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        validate_frequencies(self.space, k)
        return PhaseSum.one()

    def sample_rationals(self, rng, n):
        return [() for _ in range(n)]

    def sample_floats(self, rng, n):
        return np.zeros((n, 0))

    def enumerate_atoms(self):
        return [(Fraction(1), ())]


class HaarMeasure(MeasureHandle):
    """Haar (Lebesgue) measure on a torus factor or interval coordinates."""

    def __init__(self, space: Space | int, description: str = "haar"):
        if isinstance(space, int):
            space = (CIRCLE,) * space
        self.space = space
        self.description = description

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        k = validate_frequencies(self.space, k)
        return PhaseSum.one() if not any(k) else PhaseSum.zero()

    def sample_rationals(self, rng, n):
        units = _draw_units(rng, n * self.arity).reshape(n, self.arity)
        return [
            tuple(Fraction(int(u), TWO64) for u in row) for row in units
        ]

    def sample_floats(self, rng, n):
        units = _draw_units(rng, n * self.arity).reshape(n, self.arity)
        return units.astype(np.float64) / float(TWO64)

    def split(self, coords):
        coords = tuple(coords)
        rest = tuple(i for i in range(self.arity) if i not in coords)
        base = HaarMeasure(tuple(self.space[i] for i in coords))
        fiber = HaarMeasure(tuple(self.space[i] for i in rest))
        if not coords:
            base = PointMeasure()
        if not rest:
            return MeasureSplit(base, IndependentFiber(PointMeasure()), coords)
        return MeasureSplit(base, IndependentFiber(fiber), coords)


class DiracMixture(MeasureHandle):
    """A finite mixture of Dirac atoms at rational points."""

    def __init__(self, space: Space, atoms: Sequence[tuple[Fraction, Point]],
                 description: str = "atoms"):
        self.space = space
        self.description = description
        if not atoms:
            raise SpecValidationError("atoms", "atom list must be nonempty")
        total = sum((w for w, _ in atoms), Fraction(0))
        if total != 1:
            raise SpecValidationError("atoms", f"weights sum to {total}, expected 1")
        if any(w < 0 for w, _ in atoms):
            raise SpecValidationError("atoms", "weights must be nonnegative")
        self.atoms = [
            (Fraction(w), validate_point(space, p, field=f"atoms[{i}].point"))
            for i, (w, p) in enumerate(atoms)
        ]
        # integer thresholds on the raw 64-bit draw; shared by both sample paths
        cum = Fraction(0)
        thresholds = []
        for w, _ in self.atoms[:-1]:
            cum += w
            thresholds.append(int(cum * TWO64))
        self._thresholds = np.asarray(thresholds, dtype=np.uint64)

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        k = validate_frequencies(self.space, k)
        total = PhaseSum.zero()
        for w, p in self.atoms:
            total = total + character_at(k, p) * w
        return total

    def _choose(self, units: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._thresholds, units, side="right")

    def enumerate_atoms(self):
        return list(self.atoms)

    def sample_rationals(self, rng, n):
        idx = self._choose(_draw_units(rng, n))
        return [self.atoms[i][1] for i in idx]

    def sample_floats(self, rng, n):
        idx = self._choose(_draw_units(rng, n))
        table = np.asarray(
            [[float(c) for c in p] for _, p in self.atoms], dtype=np.float64
        )
        return table[idx]

    def split(self, coords):
        coords = tuple(coords)
        if coords == ():
            return super().split(coords)
        rest = tuple(i for i in range(self.arity) if i not in coords)
        base_space = tuple(self.space[i] for i in coords)
        grouped: dict[Point, list[tuple[Fraction, Point]]] = {}
        weights: dict[Point, Fraction] = {}
        for w, p in self.atoms:
            bp = tuple(p[i] for i in coords)
            fp = tuple(p[i] for i in rest)
            grouped.setdefault(bp, []).append((w, fp))
            weights[bp] = weights.get(bp, Fraction(0)) + w
        base = DiracMixture(
            base_space, [(w, bp) for bp, w in weights.items()],
            description=f"{self.description}|base",
        )
        fiber_space = tuple(self.space[i] for i in rest)
        table = {}
        for bp, items in grouped.items():
            wb = weights[bp]
            if fiber_space:
                table[bp] = DiracMixture(
                    fiber_space, [(w / wb, fp) for w, fp in items],
                    description=f"{self.description}|fiber",
                )
            else:
                table[bp] = PointMeasure()
        return MeasureSplit(base, ConditionalAtomsFiber(table), coords)


def cyclic_uniform(order: int) -> DiracMixture:
    """Haar measure on the cyclic group of the given order, embedded in the circle."""
    if order < 1:
        raise SpecValidationError("order", f"cyclic order must be >= 1, got {order}")
    space = (Coord("cyclic", order),)
    w = Fraction(1, order)
    return DiracMixture(
        space, [(w, (Fraction(j, order),)) for j in range(order)],
        description=f"cyclic-uniform({order})",
    )


class ProductMeasure(MeasureHandle):
    """Product of independent factor measures."""

    def __init__(self, factors: Sequence[MeasureHandle], description: str | None = None):
        if not factors:
            raise SpecValidationError("factors", "product requires at least one factor")
        self.factors = list(factors)
        self.space = tuple(c for f in self.factors for c in f.space)
        self.description = description or " (x) ".join(f.description for f in self.factors)
        self._slices = []
        lo = 0
        for f in self.factors:
            self._slices.append(slice(lo, lo + f.arity))
            lo += f.arity

    def _fully_exact(self) -> bool:
        return all(f.exact for f in self.factors)

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        k = validate_frequencies(self.space, k)
        total = PhaseSum.one()
        for f, sl in zip(self.factors, self._slices):
            part = f.integrate_character(k[sl])
            if part is None:
                return None
            total = total * part
        return total

    def sample_rationals(self, rng, n):
        cols = [f.sample_rationals(rng, n) for f in self.factors]
        return [tuple(c for col in row for c in col) for row in zip(*cols)]

    def sample_floats(self, rng, n):
        blocks = [f.sample_floats(rng, n) for f in self.factors]
        return np.concatenate(blocks, axis=1)

    def enumerate_atoms(self):
        per_factor = [f.enumerate_atoms() for f in self.factors]
        if any(a is None for a in per_factor):
            return None
        combos: list[tuple[Fraction, Point]] = [(Fraction(1), ())]
        for atoms in per_factor:
            combos = [(w * wf, p + pf) for w, p in combos for wf, pf in atoms]
        return combos

    def split(self, coords):
        coords = tuple(coords)
        if sorted(coords) != list(coords):
            raise UnsupportedOperationError("factor coordinates must be increasing")
        bases: list[MeasureHandle] = []
        fibers: list[MeasureHandle] = []
        lo = 0
        for f in self.factors:
            local = tuple(c - lo for c in coords if lo <= c < lo + f.arity)
            if local == tuple(range(f.arity)):
                bases.append(f)
            elif not local:
                fibers.append(f)
            else:
                sub = f.split(local)
                if not isinstance(sub.fiber, IndependentFiber):
                    raise UnsupportedOperationError(
                        f"coordinates {coords} require a conditional split inside a "
                        "product factor; only independent splits compose"
                    )
                bases.append(sub.base)
                fibers.append(sub.fiber.measure)
            lo += f.arity
        def assemble(parts: list[MeasureHandle]) -> MeasureHandle:
            parts = [p for p in parts if p.arity]
            if not parts:
                return PointMeasure()
            return parts[0] if len(parts) == 1 else ProductMeasure(parts)
        return MeasureSplit(assemble(bases), IndependentFiber(assemble(fibers)), coords)


class MixtureMeasure(MeasureHandle):
    """A convex mixture of measures on one common space."""

    def __init__(self, components: Sequence[tuple[Fraction, MeasureHandle]],
                 description: str | None = None):
        if not components:
            raise SpecValidationError("components", "mixture requires components")
        total = sum((w for w, _ in components), Fraction(0))
        if total != 1:
            raise SpecValidationError("components", f"weights sum to {total}, expected 1")
        space = components[0][1].space
        for i, (_, m) in enumerate(components):
            if m.space != space:
                raise SpecValidationError(
                    f"components[{i}]", "all mixture components must share one space"
                )
        self.components = [(Fraction(w), m) for w, m in components]
        self.space = space
        self.description = description or " + ".join(
            f"{w}*{m.description}" for w, m in self.components
        )
        cum = Fraction(0)
        thresholds = []
        for w, _ in self.components[:-1]:
            cum += w
            thresholds.append(int(cum * TWO64))
        self._thresholds = np.asarray(thresholds, dtype=np.uint64)

    def _fully_exact(self) -> bool:
        return all(m.exact for _, m in self.components)

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        k = validate_frequencies(self.space, k)
        total = PhaseSum.zero()
        for w, m in self.components:
            part = m.integrate_character(k)
            if part is None:
                return None
            total = total + part * w
        return total

    def sample_rationals(self, rng, n):
        idx = np.searchsorted(self._thresholds, _draw_units(rng, n), side="right")
        return [self.components[i][1].sample_rationals(rng, 1)[0] for i in idx]

    def sample_floats(self, rng, n):
        idx = np.searchsorted(self._thresholds, _draw_units(rng, n), side="right")
        out = np.empty((n, self.arity), dtype=np.float64)
        for j, (_, m) in enumerate(self.components):
            rows = np.nonzero(idx == j)[0]
            if rows.size:
                out[rows] = m.sample_floats(rng, rows.size)
        return out

    def enumerate_atoms(self):
        merged: list[tuple[Fraction, Point]] = []
        for w, m in self.components:
            atoms = m.enumerate_atoms()
            if atoms is None:
                return None
            merged.extend((w * wa, p) for wa, p in atoms)
        return merged


class SampledPowerMeasure(MeasureHandle):
    """The pushforward of Lebesgue on [0,1) under u -> u^exponent.

    Continuous and atomless for every exponent >= 1, with no exact character
    integrals for exponent > 1: this is the statistical-path stand-in for a
    general continuous distribution.
    """

    def __init__(self, exponent: int):
        if exponent < 1:
            raise SpecValidationError("exponent", "exponent must be >= 1")
        self.exponent = int(exponent)
        self.space = (CIRCLE,)
        self.description = f"pushforward of haar under u^{self.exponent}"

    def _fully_exact(self) -> bool:
        return self.exponent == 1

    def integrate_character(self, k: FreqVector) -> Optional[PhaseSum]:
        k = validate_frequencies(self.space, k)
        if not any(k):
            return PhaseSum.one()
        if self.exponent == 1:
            return PhaseSum.zero()
        return None

    def sample_rationals(self, rng, n):
        units = _draw_units(rng, n)
        return [(Fraction(int(u), TWO64) ** self.exponent,) for u in units]

    def sample_floats(self, rng, n):
        units = _draw_units(rng, n)
        return ((units.astype(np.float64) / float(TWO64)) ** self.exponent)[:, None]


# ---------------------------------------------------------------------------
# cocycles
# ---------------------------------------------------------------------------

class Cocycle:
    """A measurable map from a base space into the circle (written additively)."""

    def __call__(self, point: Point) -> Fraction:
        raise NotImplementedError

    def evaluate_array(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def frequency_shift(self, kg: int) -> Optional[tuple[dict[int, int], Fraction]]:
        """If e^(2*pi*i*kg*phi(x)) is a character times a constant phase, return
        ({coord: added frequency}, phase); otherwise None."""
        return None


@dataclass(frozen=True)
class AffineCocycle(Cocycle):
    """phi(x) = slope * x[coord] + intercept, reduced mod 1.

    A non-integer slope is evaluated on the fundamental-domain representative
    (a perfectly good measurable cocycle, but not continuous on the circle);
    exact character pullbacks are only available when slope * kg is an integer.
    """

    slope: Fraction
    intercept: Fraction
    coord: int = 0

    def __call__(self, point: Point) -> Fraction:
        return (self.slope * point[self.coord] + self.intercept) % 1

    def evaluate_array(self, points: np.ndarray) -> np.ndarray:
        return (float(self.slope) * points[:, self.coord] + float(self.intercept)) % 1.0

    def frequency_shift(self, kg: int):
        shift = self.slope * kg
        if shift.denominator != 1:
            return None
        return {self.coord: int(shift)}, (self.intercept * kg) % 1


@dataclass(frozen=True)
class TableCocycle(Cocycle):
    """A lookup cocycle on a finite set of base points."""

    table: tuple[tuple[Point, Fraction], ...]

    def __post_init__(self):
        object.__setattr__(self, "_map", dict(self.table))
        object.__setattr__(
            self,
            "_float_map",
            {tuple(float(c) for c in p): float(v) for p, v in self.table},
        )

    def __call__(self, point: Point) -> Fraction:
        try:
            return self._map[tuple(point)] % 1
        except KeyError:
            raise SpecValidationError(
                "point", f"{point} is outside the cocycle's finite support"
            ) from None

    def evaluate_array(self, points: np.ndarray) -> np.ndarray:
        out = np.empty(points.shape[0])
        for i, row in enumerate(points):
            key = tuple(float(c) for c in row)
            try:
                out[i] = self._float_map[key]
            except KeyError:
                raise SpecValidationError(
                    "point", f"{row} is outside the cocycle's finite support"
                ) from None
        return out


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

class System:
    """A measure-preserving transformation together with its invariant measure."""

    spec: "SystemSpec | None" = None
    space: Space
    measure: MeasureHandle

    @property
    def exact_integrals_available(self) -> bool:
        return self.measure.exact

    def apply(self, point: Point) -> Point:
        raise NotImplementedError

    def apply_array(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def char_pullback(self, k: FreqVector) -> Optional[tuple[FreqVector, Fraction]]:
        """(k', phase) with char_k(T x) = e^(2*pi*i*phase) * char_k'(x), or None."""
        return None

    def inverse(self) -> "System":
        raise UnsupportedOperationError(
            f"{type(self).__name__} does not expose an inverse map"
        )

    def pullback_power(self, k: FreqVector, n: int) -> Optional[tuple[FreqVector, Fraction]]:
        """char_k composed with the n-th forward iterate, as (k', phase)."""
        if n < 0:
            raise SpecValidationError("n", "power must be >= 0 here; use inverse()")
        current, phase = tuple(k), Fraction(0)
        for _ in range(n):
            step = self.char_pullback(current)
            if step is None:
                return None
            current, extra = step
            phase = (phase + extra) % 1
        return current, phase


class IdentitySystem(System):
    def __init__(self, measure: MeasureHandle, spec=None):
        self.measure = measure
        self.space = measure.space
        self.spec = spec

    def apply(self, point):
        return validate_point(self.space, point)

    def apply_array(self, points):
        return points

    def char_pullback(self, k):
        return validate_frequencies(self.space, k), Fraction(0)

    def inverse(self):
        return self


class RotationSystem(System):
    """x -> x + angle on the circle with Haar measure."""

    def __init__(self, angle: Fraction, measure: MeasureHandle | None = None, spec=None):
        self.angle = Fraction(angle) % 1
        self.measure = measure if measure is not None else HaarMeasure(1)
        if self.measure.arity != 1:
            raise SpecValidationError("measure", "rotation acts on one circle coordinate")
        self.space = self.measure.space
        self.spec = spec

    def apply(self, point):
        (x,) = validate_point(self.space, point)
        return ((x + self.angle) % 1,)

    def apply_array(self, points):
        return (points + float(self.angle)) % 1.0

    def char_pullback(self, k):
        k = validate_frequencies(self.space, k)
        return k, (k[0] * self.angle) % 1

    def inverse(self):
        return RotationSystem(-self.angle, self.measure)


class SkewProductSystem(System):
    """T(x, g) = (B x, g + phi(x)) over a base system B with cocycle phi.

    Covers the torus twist (identity base, affine cocycle, circle group), the
    shifted twist, and finite cyclic group extensions.  The invariant measure
    is base measure (x) Haar on the group coordinate.
    """

    def __init__(self, base: System, cocycle: Cocycle, group: Coord = CIRCLE, spec=None):
        self.base = base
        self.cocycle = cocycle
        self.group = group
        if group.kind == "cyclic":
            group_measure: MeasureHandle = cyclic_uniform(group.order)
        elif group.kind == "circle":
            group_measure = HaarMeasure(1)
        else:
            raise SpecValidationError("group", f"unsupported group {group.kind!r}")
        self.measure = ProductMeasure([base.measure, group_measure])
        self.space = base.space + (group,)
        self.spec = spec

    @property
    def base_arity(self) -> int:
        return len(self.base.space)

    def apply(self, point):
        point = validate_point(self.space, point)
        b = self.base_arity
        new_base = self.base.apply(point[:b])
        shift = self.cocycle(point[:b])
        if self.group.kind == "cyclic" and (shift * self.group.order).denominator != 1:
            raise SpecValidationError(
                "cocycle", f"value {shift} is not in the cyclic group of order {self.group.order}"
            )
        return new_base + ((point[b] + shift) % 1,)

    def apply_array(self, points):
        b = self.base_arity
        new_base = self.base.apply_array(points[:, :b])
        shift = self.cocycle.evaluate_array(points[:, :b])
        new_g = (points[:, b] + shift) % 1.0
        return np.concatenate([new_base, new_g[:, None]], axis=1)

    def char_pullback(self, k):
        k = validate_frequencies(self.space, k)
        b = self.base_arity
        kb, kg = list(k[:b]), k[b]
        shift = self.cocycle.frequency_shift(kg)
        if shift is None:
            return None
        added, phase = shift
        base_step = self.base.char_pullback(tuple(kb))
        if base_step is None:
            return None
        kb2, base_phase = base_step
        kb2 = list(kb2)
        for coord, extra in added.items():
            kb2[coord] += extra
        return tuple(kb2) + (kg,), (phase + base_phase) % 1

    def inverse(self):
        base_inv = self.base.inverse()
        cocycle = self.cocycle

        class _InverseShift(Cocycle):
            def __call__(self, point):
                return (-cocycle(base_inv.apply(point))) % 1

            def evaluate_array(self, points):
                return (-cocycle.evaluate_array(base_inv.apply_array(points))) % 1.0

            def frequency_shift(self, kg):
                # only valid when the base is the identity
                return None

        if isinstance(self.base, IdentitySystem):
            if isinstance(self.cocycle, AffineCocycle):
                inv_cocycle: Cocycle = AffineCocycle(
                    -self.cocycle.slope, -self.cocycle.intercept, self.cocycle.coord
                )
            elif isinstance(self.cocycle, TableCocycle):
                inv_cocycle = TableCocycle(
                    tuple((p, (-v) % 1) for p, v in self.cocycle.table)
                )
            else:
                inv_cocycle = _InverseShift()
            return SkewProductSystem(self.base, inv_cocycle, self.group)
        return SkewProductSystem(base_inv, _InverseShift(), self.group)


class ProductSystem(System):
    def __init__(self, factors: Sequence[System], spec=None):
        if not factors:
            raise SpecValidationError("factors", "product requires at least one factor")
        self.factors = list(factors)
        self.space = tuple(c for f in self.factors for c in f.space)
        self.measure = ProductMeasure([f.measure for f in self.factors])
        self.spec = spec
        self._slices = []
        lo = 0
        for f in self.factors:
            self._slices.append(slice(lo, lo + len(f.space)))
            lo += len(f.space)

    def apply(self, point):
        point = validate_point(self.space, point)
        out: tuple[Fraction, ...] = ()
        for f, sl in zip(self.factors, self._slices):
            out += f.apply(point[sl])
        return out

    def apply_array(self, points):
        return np.concatenate(
            [f.apply_array(points[:, sl]) for f, sl in zip(self.factors, self._slices)],
            axis=1,
        )

    def char_pullback(self, k):
        k = validate_frequencies(self.space, k)
        out: tuple[int, ...] = ()
        phase = Fraction(0)
        for f, sl in zip(self.factors, self._slices):
            step = f.char_pullback(k[sl])
            if step is None:
                return None
            kf, ph = step
            out += kf
            phase = (phase + ph) % 1
        return out, phase

    def inverse(self):
        return ProductSystem([f.inverse() for f in self.factors])


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Character:
    """The observable e^(2*pi*i*<freqs, .>); optionally replaced by its
    mean-centered version f - integral(f)."""

    freqs: tuple[int, ...]
    centered: bool = False

    def label(self) -> str:
        base = "e(" + ",".join(str(v) for v in self.freqs) + ")"
        return f"centered {base}" if self.centered else base


@dataclass(frozen=True)
class LevelIndicator:
    """Indicator of one tower level of a rank-one map at the given stage,
    mean-centered and normalized to unit variance (exact simple function)."""

    stage: int
    level: int = 0
    centered: bool = True

    def label(self) -> str:
        return f"level({self.stage},{self.level})"


Observable = Character | LevelIndicator


# ---------------------------------------------------------------------------
# fibered view
# ---------------------------------------------------------------------------

@dataclass
class FiberedSystem:
    """A system presented through its space of ergodic components.

    ``fiber`` maps a base point to the system living on that fiber; the
    optional flat view is the same dynamics on the total space.
    """

    base_measure: MeasureHandle
    fiber: Callable[[Point], System]
    description: str
    flat: System | None = None
    fiber_observable: object | None = None
    flat_observable: object | None = None

    def sample_fibers(self, seed: int, n: int) -> list[tuple[Point, System]]:
        rng = rng_from_seed(seed)
        points = self.base_measure.sample_rationals(rng, n)
        return [(p, self.fiber(p)) for p in points]

    def integrate_product_character(self, k: FreqVector) -> Optional[PhaseSum]:
        """Exact integral of a product character via the fiber decomposition.

        Available when the base measure has finite support: the total integral
        is the weighted sum over base atoms of (base character value) times the
        fiber measure's integral.
        """
        if not isinstance(self.base_measure, DiracMixture):
            return None
        b = self.base_measure.arity
        kb, kf = k[:b], k[b:]
        total = PhaseSum.zero()
        for w, p in self.base_measure.atoms:
            fib = self.fiber(p)
            part = fib.measure.integrate_character(kf)
            if part is None:
                return None
            total = total + character_at(kb, p) * part * w
        return total


# ---------------------------------------------------------------------------
# declarative specs
# ---------------------------------------------------------------------------

SYSTEM_KINDS = (
    "rotation",
    "identity",
    "twist",
    "group-extension",
    "product",
    "fibered",
    "rank1-family",
)


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of a system; serializable as JSON.

    ``params`` is a plain JSON-able dict whose rational entries are "p/q" or
    decimal strings; ``precision`` records the declared decimal precision used
    when parameters were derived by truncation.
    """

    kind: str
    params: dict
    precision: int | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params,
            **({"precision": self.precision} if self.precision is not None else {}),
        }

    @classmethod
    def from_json(cls, doc: dict, *, field: str = "system") -> "SystemSpec":
        if not isinstance(doc, dict):
            raise SpecValidationError(field, "spec document must be an object")
        kind = doc.get("kind")
        if kind not in SYSTEM_KINDS:
            raise SpecValidationError(
                f"{field}.kind", f"unknown kind {kind!r}; expected one of {SYSTEM_KINDS}"
            )
        params = doc.get("params", {})
        if not isinstance(params, dict):
            raise SpecValidationError(f"{field}.params", "params must be an object")
        precision = doc.get("precision")
        if precision is not None and (not isinstance(precision, int) or precision < 1):
            raise SpecValidationError(f"{field}.precision", "precision must be a positive int")
        return cls(kind=kind, params=params, precision=precision)

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True).encode()


def build_measure(doc: dict, *, field: str = "measure") -> MeasureHandle:
    """Build a MeasureHandle from its JSON description."""
    if isinstance(doc, MeasureHandle):
        return doc
    if not isinstance(doc, dict):
        raise SpecValidationError(field, "measure spec must be an object")
    kind = doc.get("kind")
    if kind == "haar":
        arity = doc.get("arity", 1)
        if not isinstance(arity, int) or arity < 1:
            raise SpecValidationError(f"{field}.arity", "arity must be a positive int")
        return HaarMeasure(arity)
    if kind == "atoms":
        entries = doc.get("atoms")
        if not isinstance(entries, list) or not entries:
            raise SpecValidationError(f"{field}.atoms", "atoms must be a nonempty list")
        parsed = []
        arity = None
        for i, entry in enumerate(entries):
            point = tuple(
                parse_scalar(c, field=f"{field}.atoms[{i}].point")
                for c in entry.get("point", ())
            )
            if arity is None:
                arity = len(point)
            weight = parse_scalar(entry.get("weight", "1"), field=f"{field}.atoms[{i}].weight")
            parsed.append((weight, point))
        space = (CIRCLE,) * (arity or 1)
        return DiracMixture(space, parsed)
    if kind == "cyclic-uniform":
        return cyclic_uniform(doc.get("order", 0))
    if kind == "product":
        factors = doc.get("factors")
        if not isinstance(factors, list) or not factors:
            raise SpecValidationError(f"{field}.factors", "factors must be a nonempty list")
        return ProductMeasure(
            [build_measure(f, field=f"{field}.factors[{i}]") for i, f in enumerate(factors)]
        )
    if kind == "mixture":
        comps = doc.get("components")
        if not isinstance(comps, list) or not comps:
            raise SpecValidationError(f"{field}.components", "components must be a nonempty list")
        return MixtureMeasure(
            [
                (
                    parse_scalar(c.get("weight", "0"), field=f"{field}.components[{i}].weight"),
                    build_measure(c.get("measure"), field=f"{field}.components[{i}].measure"),
                )
                for i, c in enumerate(comps)
            ]
        )
    if kind == "power-law-sampled":
        return SampledPowerMeasure(doc.get("exponent", 0))
    raise SpecValidationError(f"{field}.kind", f"unknown measure kind {kind!r}")


def build_cocycle(doc: dict, *, field: str = "cocycle") -> Cocycle:
    if isinstance(doc, Cocycle):
        return doc
    if not isinstance(doc, dict):
        raise SpecValidationError(field, "cocycle spec must be an object")
    kind = doc.get("kind")
    if kind == "affine":
        return AffineCocycle(
            slope=parse_scalar(doc.get("slope", "1"), field=f"{field}.slope"),
            intercept=parse_scalar(doc.get("intercept", "0"), field=f"{field}.intercept"),
            coord=int(doc.get("coord", 0)),
        )
    if kind == "table":
        entries = doc.get("entries")
        if not isinstance(entries, list) or not entries:
            raise SpecValidationError(f"{field}.entries", "entries must be a nonempty list")
        table = tuple(
            (
                tuple(parse_scalar(c, field=f"{field}.entries[{i}].point") for c in e["point"]),
                parse_scalar(e.get("value", "0"), field=f"{field}.entries[{i}].value"),
            )
            for i, e in enumerate(entries)
        )
        return TableCocycle(table)
    raise SpecValidationError(f"{field}.kind", f"unknown cocycle kind {kind!r}")


def build_system(spec: SystemSpec | dict) -> System:
    """Realize a SystemSpec as an executable System.

    The point map matches the declared formula exactly on rational points;
    exact character integrals are available whenever the invariant measure is a
    finite mixture of Haar and Dirac components.
    """
    if isinstance(spec, dict):
        spec = SystemSpec.from_json(spec)
    params = spec.params
    kind = spec.kind
    if kind == "rotation":
        angle = parse_scalar(params.get("angle", "0"), field="params.angle")
        measure = build_measure(params["measure"], field="params.measure") if "measure" in params \
            else HaarMeasure(1)
        return RotationSystem(angle, measure, spec=spec)
    if kind == "identity":
        measure = build_measure(params.get("measure", {"kind": "haar", "arity": 1}),
                                field="params.measure")
        return IdentitySystem(measure, spec=spec)
    if kind == "twist":
        base_measure = build_measure(params.get("base_measure", {"kind": "haar", "arity": 1}),
                                     field="params.base_measure")
        cocycle = build_cocycle(params.get("cocycle", {"kind": "affine"}),
                                field="params.cocycle")
        shift = params.get("shift")
        if shift is not None:
            shift_value = parse_scalar(shift, field="params.shift")
            if isinstance(cocycle, AffineCocycle):
                cocycle = AffineCocycle(cocycle.slope,
                                        (cocycle.intercept + shift_value) % 1, cocycle.coord)
            else:
                raise SpecValidationError("params.shift", "shift requires an affine cocycle")
        return SkewProductSystem(IdentitySystem(base_measure), cocycle, CIRCLE, spec=spec)
    if kind == "group-extension":
        base = build_system(SystemSpec.from_json(params["base"], field="params.base"))
        cocycle = build_cocycle(params.get("cocycle", {"kind": "affine"}),
                                field="params.cocycle")
        group_doc = params.get("group", {"kind": "circle"})
        gkind = group_doc.get("kind")
        if gkind == "circle":
            group = CIRCLE
        elif gkind == "cyclic":
            order = group_doc.get("order")
            if not isinstance(order, int) or order < 1:
                raise SpecValidationError("params.group.order", "order must be a positive int")
            group = Coord("cyclic", order)
        else:
            raise SpecValidationError("params.group.kind", f"unknown group {gkind!r}")
        return SkewProductSystem(base, cocycle, group, spec=spec)
    if kind == "product":
        factors = params.get("factors")
        if not isinstance(factors, list) or not factors:
            raise SpecValidationError("params.factors", "factors must be a nonempty list")
        return ProductSystem(
            [build_system(SystemSpec.from_json(f, field=f"params.factors[{i}]"))
             for i, f in enumerate(factors)],
            spec=spec,
        )
    if kind == "fibered":
        base_measure = build_measure(params.get("base_measure", {"kind": "haar", "arity": 1}),
                                     field="params.base_measure")
        fiber_doc = params.get("fiber", {})
        fkind = fiber_doc.get("kind")
        if fkind == "rotation":
            cocycle = build_cocycle(fiber_doc.get("angle", {"kind": "affine"}),
                                    field="params.fiber.angle")
            return SkewProductSystem(IdentitySystem(base_measure), cocycle, CIRCLE, spec=spec)
        if fkind == "rank1-parameter":
            from ergolab.rank1 import make_Sa_system

            depth = fiber_doc.get("depth", 8)
            return make_Sa_system(base_measure, depth).flat
        raise SpecValidationError("params.fiber.kind", f"unknown fiber kind {fkind!r}")
    if kind == "rank1-family":
        from ergolab.rank1 import Rank1Spec, build_rank1_system

        return build_rank1_system(Rank1Spec.from_params(params), spec=spec)
    raise SpecValidationError("kind", f"unknown kind {kind!r}")


def as_fibered(system: System) -> FiberedSystem:
    """The structural ergodic-component view of a skew product over an identity base."""
    if isinstance(system, SkewProductSystem) and isinstance(system.base, IdentitySystem) \
            and system.group.kind == "circle":
        cocycle = system.cocycle

        def fiber(base_point: Point) -> System:
            return RotationSystem(cocycle(base_point))

        return FiberedSystem(
            base_measure=system.base.measure,
            fiber=fiber,
            description="skew-rotation fibers over base points",
            flat=system,
            fiber_observable=Character((1,)),
            flat_observable=Character((0,) * system.base_arity + (1,)),
        )
    raise UnsupportedOperationError(
        "only skew products over an identity base expose fibers structurally"
    )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def orbit(system: System, start: Sequence, n: int) -> list[Point]:
    """[start, T start, ..., T^(n-1) start], coordinates reduced mod 1."""
    if n < 0:
        raise SpecValidationError("n", f"orbit length must be >= 0, got {n}")
    point = validate_point(
        system.space,
        tuple(c if isinstance(c, Fraction) else parse_scalar(c, field="start") for c in start),
        field="start",
    )
    out = []
    for i in range(n):
        out.append(point)
        if i + 1 < n:
            point = system.apply(point)
    return out


@dataclass
class IntegralEstimate:
    """Exact value or Monte Carlo estimate of a character integral."""

    value: complex
    exact: bool
    phase_sum: PhaseSum | None = None
    n_samples: int = 0
    std_error: float = 0.0


def integrate_character(measure: MeasureHandle, k: Sequence[int], *,
                        seed: int | None = None, samples: int = 4096) -> IntegralEstimate:
    """Integrate e^(2*pi*i*<k, .>) against the measure.

    Exact when the measure carries an exact integrator; otherwise a seeded
    Monte Carlo estimate with its standard error.
    """
    k = validate_frequencies(measure.space, k)
    exact = measure.integrate_character(k)
    if exact is not None:
        return IntegralEstimate(value=exact.value(), exact=True, phase_sum=exact)
    if seed is None:
        raise UnsupportedOperationError(
            "measure has no exact integrator; pass a seed for a sampled estimate"
        )
    rng = rng_from_seed(seed)
    points = measure.sample_floats(rng, samples)
    values = character_array(k, points)
    est = complex(values.mean())
    se = float(np.sqrt(max(0.0, 1.0 - abs(est) ** 2) / samples))
    return IntegralEstimate(value=est, exact=False, n_samples=samples, std_error=se)

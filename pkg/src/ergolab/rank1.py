"""Rank-one cutting-and-stacking maps steered by a binary parameter.

Each stage cuts the current tower into three equal-width columns and inserts a
single spacer level: above the first column when the current binary digit of
the parameter is 0, above the second when it is 1.  The stage-n tower therefore
has L_n = 3*L_{n-1} + 1 levels, of which h_n = 3^n carry the original base
mass.

Bookkeeping is purely integral: at depth d every level is one unit of width
3^(-d) in a raw space of exactly L_d units, so the normalized space is [0, 1)
with levels [j/L_d, (j+1)/L_d).  The map is the translation sending level i to
level i+1; the top level stays undefined at a finite stage.

The binary-parameter dichotomy: two parameters whose difference is a dyadic
rational give towers whose digit streams eventually agree, hence eventually
identical stage words (one family up to stage bookkeeping); a non-dyadic
difference makes the streams disagree infinitely often (separate families).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from ergolab.core import (
    INTERVAL,
    DepthExceededError,
    FiberedSystem,
    HaarMeasure,
    LevelIndicator,
    MeasureHandle,
    Point,
    ProductMeasure,
    SpecValidationError,
    System,
    UndecidableInputError,
)
from ergolab.exact import parse_scalar, scalar_str

__all__ = [
    "Rank1Spec",
    "TowerStage",
    "Rank1Map",
    "rank1_word",
    "rank1_map",
    "binary_digits",
    "dyadic_equivalence",
    "DichotomyVerdict",
    "agreement_stage",
    "AgreementReport",
    "make_Sa_system",
    "build_rank1_system",
    "Rank1System",
    "stage_level_positions",
]


# ---------------------------------------------------------------------------
# parameter and digits
# ---------------------------------------------------------------------------

def binary_digits(a: Fraction, n: int) -> tuple[int, ...]:
    """First n binary digits of a in [0, 1], ties broken toward the expansion
    that does not end in all ones (the greedy expansion; dyadic rationals
    terminate in zeros).  The endpoint 1 only has the all-ones expansion."""
    if not (0 <= a <= 1):
        raise SpecValidationError("a", f"parameter {a} is outside [0, 1]")
    if a == 1:
        return (1,) * n
    digits = []
    x = a
    for _ in range(n):
        x *= 2
        d = int(x)  # floor for x in [0, 2)
        digits.append(d)
        x -= d
    return tuple(digits)


@dataclass(frozen=True)
class Rank1Spec:
    """Parameter of one member of the rank-one family.

    Exactly one of ``a`` (exact rational in [0,1]) and ``digits`` (an explicit
    finite binary stream a_1 a_2 ...) is set.  ``depth`` is the construction
    stage up to which words and maps may be requested.
    """

    a: Fraction | None
    digits: tuple[int, ...] | None
    depth: int

    def __post_init__(self):
        if (self.a is None) == (self.digits is None):
            raise SpecValidationError("a", "give exactly one of 'a' and 'digits'")
        if self.depth < 0:
            raise SpecValidationError("depth", f"depth must be >= 0, got {self.depth}")
        if self.digits is not None:
            if any(d not in (0, 1) for d in self.digits):
                raise SpecValidationError("digits", "digits must be 0 or 1")
            if self.depth > len(self.digits):
                raise SpecValidationError(
                    "depth", f"depth {self.depth} exceeds the {len(self.digits)} declared digits"
                )
        if self.a is not None and not (0 <= self.a <= 1):
            raise SpecValidationError("a", f"parameter {self.a} is outside [0, 1]")

    @classmethod
    def from_rational(cls, a, depth: int) -> "Rank1Spec":
        return cls(a=parse_scalar(a, field="a"), digits=None, depth=depth)

    @classmethod
    def from_digits(cls, digits: Sequence[int], depth: int | None = None) -> "Rank1Spec":
        digits = tuple(int(d) for d in digits)
        return cls(a=None, digits=digits, depth=len(digits) if depth is None else depth)

    @classmethod
    def from_params(cls, params: dict) -> "Rank1Spec":
        depth = params.get("depth", 8)
        if not isinstance(depth, int) or depth < 0:
            raise SpecValidationError("params.depth", "depth must be a nonnegative int")
        if "digits" in params:
            return cls.from_digits(params["digits"], depth)
        return cls.from_rational(parse_scalar(params.get("a", "0"), field="params.a"), depth)

    def digit_stream(self, n: int) -> tuple[int, ...]:
        """Digits a_1 .. a_n."""
        if self.digits is not None:
            if n > len(self.digits):
                raise DepthExceededError(
                    f"requested {n} digits but only {len(self.digits)} are declared"
                )
            return self.digits[:n]
        return binary_digits(self.a, n)

    def to_params(self) -> dict:
        if self.digits is not None:
            return {"digits": list(self.digits), "depth": self.depth}
        return {"a": scalar_str(self.a), "depth": self.depth}


# ---------------------------------------------------------------------------
# words
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TowerStage:
    """Stage-n tower word over {T, s}: T marks base mass, s marks spacer mass."""

    stage: int
    word: str
    height: int  # number of T letters
    length: int  # total number of levels


def word_lengths(n: int) -> int:
    """L_n = 3 L_{n-1} + 1 with L_0 = 1, i.e. (3^(n+1) - 1) / 2."""
    return (3 ** (n + 1) - 1) // 2


def rank1_word(spec: Rank1Spec, n: int) -> TowerStage:
    """The stage-n word: B_0 = "T"; B_{k+1} = B_k s B_k B_k when a_{k+1} = 0,
    B_k B_k s B_k when a_{k+1} = 1."""
    if n < 0:
        raise SpecValidationError("n", f"stage must be >= 0, got {n}")
    if n > spec.depth:
        raise DepthExceededError(f"stage {n} exceeds constructed depth {spec.depth}")
    digits = spec.digit_stream(n)
    word = "T"
    for d in digits:
        word = word + "s" + word + word if d == 0 else word + word + "s" + word
    return TowerStage(stage=n, word=word, height=word.count("T"), length=len(word))


def copy_offsets(prev_length: int, digit: int) -> tuple[int, int, int]:
    """Level offsets of the three stage-n copies inside the stage-(n+1) tower."""
    if digit == 0:
        return (0, prev_length + 1, 2 * prev_length + 1)
    return (0, prev_length, 2 * prev_length + 1)


def stage_level_positions(spec: Rank1Spec, stage: int, level: int, depth: int) -> np.ndarray:
    """Indices of the depth-d levels that make up the given stage-k level."""
    if not 0 <= level < word_lengths(stage):
        raise SpecValidationError("level", f"stage {stage} has levels 0..{word_lengths(stage)-1}")
    if depth < stage:
        raise SpecValidationError("depth", "depth must be >= stage")
    if depth > spec.depth:
        raise DepthExceededError(f"depth {depth} exceeds constructed depth {spec.depth}")
    digits = spec.digit_stream(depth)
    positions = np.array([level], dtype=np.int64)
    length = word_lengths(stage)
    for d in digits[stage:]:
        offs = np.array(copy_offsets(length, d), dtype=np.int64)
        positions = (positions[:, None] + offs[None, :]).ravel()
        length = 3 * length + 1
    positions.sort()
    return positions


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

@dataclass
class Rank1Map:
    """Stage-d tower realized as a piecewise translation of [0, 1).

    ``level_starts[i]`` is the raw unit index of level i (bottom to top); raw
    unit j is the normalized interval [j/L, (j+1)/L).  The map translates level
    i onto level i+1 and is undefined on the top level.
    """

    depth: int
    level_starts: np.ndarray  # int64, length L_d
    word: str

    def __post_init__(self):
        self.length = len(self.level_starts)
        # raw unit index -> level index
        self._level_of_unit = np.empty(self.length, dtype=np.int64)
        self._level_of_unit[self.level_starts] = np.arange(self.length)
        self._translations = self.level_starts[1:] - self.level_starts[:-1]

    @property
    def total_units(self) -> int:
        return self.length

    @property
    def undefined_measure(self) -> Fraction:
        """Normalized measure of the top level, where the map is not yet defined."""
        return Fraction(1, self.length)

    def level_interval(self, i: int) -> tuple[Fraction, Fraction]:
        lo = Fraction(int(self.level_starts[i]), self.length)
        return lo, lo + Fraction(1, self.length)

    def level_of(self, x: Fraction) -> int:
        if not 0 <= x < 1:
            raise SpecValidationError("x", f"{x} is outside [0, 1)")
        unit = int(x * self.length)
        return int(self._level_of_unit[unit])

    def apply(self, x: Fraction) -> Fraction:
        level = self.level_of(x)
        if level == self.length - 1:
            raise DepthExceededError(
                f"point {x} lies in the top level of the depth-{self.depth} tower"
            )
        return x + Fraction(int(self._translations[level]), self.length)

    def apply_array(self, xs: np.ndarray) -> np.ndarray:
        units = np.floor(xs * self.length).astype(np.int64)
        levels = self._level_of_unit[units]
        if np.any(levels == self.length - 1):
            raise DepthExceededError("some points lie in the top level of the tower")
        return xs + self._translations[levels] / self.length

    def pieces(self) -> list[tuple[Fraction, Fraction, Fraction]]:
        """(source lo, source hi, translation) triples in normalized coordinates,
        ordered by source position."""
        out = []
        for i in range(self.length - 1):
            lo, hi = self.level_interval(i)
            out.append((lo, hi, Fraction(int(self._translations[i]), self.length)))
        out.sort()
        return out

    def pieces_csv(self) -> str:
        lines = ["source_lo,source_hi,translation"]
        for lo, hi, t in self.pieces():
            lines.append(f"{scalar_str(lo)},{scalar_str(hi)},{scalar_str(t)}")
        return "\n".join(lines) + "\n"


def rank1_map(spec: Rank1Spec, depth: int | None = None) -> Rank1Map:
    """Build the stage-``depth`` tower map with exact rational bookkeeping.

    Spacers are drawn from a reserve beyond the current space and the final
    space is renormalized to total measure one, so the invariant measure stays
    a probability measure at every depth.
    """
    depth = spec.depth if depth is None else depth
    if depth < 1:
        raise SpecValidationError("depth", f"depth must be >= 1, got {depth}")
    if depth > spec.depth:
        raise DepthExceededError(f"depth {depth} exceeds constructed depth {spec.depth}")
    digits = spec.digit_stream(depth)
    starts = np.array([0], dtype=np.int64)
    word = "T"
    units = 1
    for d in digits:
        scaled = starts * 3
        spacer = np.array([units * 3], dtype=np.int64)
        cols = [scaled, scaled + 1, scaled + 2]
        if d == 0:
            starts = np.concatenate([cols[0], spacer, cols[1], cols[2]])
            word = word + "s" + word + word
        else:
            starts = np.concatenate([cols[0], cols[1], spacer, cols[2]])
            word = word + word + "s" + word
        units = units * 3 + 1
    return Rank1Map(depth=depth, level_starts=starts, word=word)


# ---------------------------------------------------------------------------
# dichotomy and continuity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DichotomyVerdict:
    verdict: str  # "isomorphic-family" | "disjoint-family"
    difference: Fraction
    reason: str

    @property
    def isomorphic(self) -> bool:
        return self.verdict == "isomorphic-family"


def _is_dyadic(x: Fraction) -> bool:
    den = x.denominator
    return den & (den - 1) == 0


def dyadic_equivalence(a: Rank1Spec, b: Rank1Spec) -> DichotomyVerdict:
    """Exact dichotomy on the parameter difference.

    The two maps belong to one isomorphism family exactly when |a - b| is a
    dyadic rational k/2^l (equivalently: the binary digit streams eventually
    agree under the fixed expansion convention); otherwise they are disjoint.
    """
    if a.a is None or b.a is None:
        declared = min(
            len(s.digits) for s in (a, b) if s.digits is not None
        )
        stages = agreement_stage(a, b, declared).agrees_through
        raise UndecidableInputError(
            "digit streams of finite declared length cannot certify the dichotomy: "
            f"the expansions agree through stage {stages} but say nothing beyond",
            stages_agreeing=stages,
        )
    diff = abs(a.a - b.a)
    if _is_dyadic(diff):
        return DichotomyVerdict(
            verdict="isomorphic-family",
            difference=diff,
            reason=(
                f"|a-b| = {diff} is dyadic, so the digit streams eventually agree "
                "and the constructions coincide from some stage on"
            ),
        )
    return DichotomyVerdict(
        verdict="disjoint-family",
        difference=diff,
        reason=(
            f"|a-b| = {diff} is not of the form k/2^l, so the spacer placements "
            "differ at infinitely many stages: the two maps are disjoint"
        ),
    )


@dataclass(frozen=True)
class AgreementReport:
    first_disagreement: int | None  # 1-based digit index, None = agree through max_stage
    max_stage: int

    @property
    def agrees_through(self) -> int:
        return self.max_stage if self.first_disagreement is None \
            else self.first_disagreement - 1


def agreement_stage(a: Rank1Spec, b: Rank1Spec, max_stage: int) -> AgreementReport:
    """First digit index where the expansions differ (exact comparison).

    Continuity of the construction in the parameter shows up as: agreement of
    the digit streams through stage n forces identical stage-n words and maps.
    """
    def digits_upto(s: Rank1Spec) -> tuple[int, ...]:
        if s.digits is not None:
            return s.digits[: min(max_stage, len(s.digits))]
        return binary_digits(s.a, max_stage)

    da, db = digits_upto(a), digits_upto(b)
    upto = min(len(da), len(db))
    for i in range(upto):
        if da[i] != db[i]:
            return AgreementReport(first_disagreement=i + 1, max_stage=max_stage)
    # agreement certified only as far as both streams reach
    return AgreementReport(first_disagreement=None, max_stage=upto)


# ---------------------------------------------------------------------------
# system wrapper and fibered family
# ---------------------------------------------------------------------------

class Rank1System(System):
    """The stage-d tower map as a System over Lebesgue measure on [0, 1).

    The map is a partial bijection at a finite stage (undefined on the top
    level, measure 1/L_d); points escaping through the top raise
    DepthExceededError rather than silently wrapping.
    """

    def __init__(self, r1spec: Rank1Spec, spec=None):
        self.r1spec = r1spec
        self.map = rank1_map(r1spec)
        self.space = (INTERVAL,)
        self.measure = HaarMeasure((INTERVAL,), description="lebesgue on [0,1)")
        self.spec = spec

    def apply(self, point: Point) -> Point:
        (x,) = point
        return (self.map.apply(Fraction(x)),)

    def apply_array(self, points: np.ndarray) -> np.ndarray:
        return self.map.apply_array(points[:, 0])[:, None]


def build_rank1_system(r1spec: Rank1Spec, spec=None) -> Rank1System:
    return Rank1System(r1spec, spec=spec)


def make_Sa_system(base: MeasureHandle, depth: int) -> FiberedSystem:
    """The parameterized family a -> T_a as a fibered system over the base measure.

    The flat view acts on (a, x) by (a, T_a x); fibers are the individual
    rank-one systems at the requested depth.
    """
    if base.arity != 1:
        raise SpecValidationError("base", "the parameter space has one coordinate")

    @lru_cache(maxsize=256)
    def fiber_for(a: Fraction) -> Rank1System:
        return Rank1System(Rank1Spec.from_rational(a, depth))

    def fiber(point: Point) -> System:
        return fiber_for(point[0])

    class _FlatSa(System):
        def __init__(self):
            self.space = (base.space[0], INTERVAL)
            self.measure = ProductMeasure([base, HaarMeasure((INTERVAL,))])
            self.spec = None

        def apply(self, point):
            a, x = point
            return (a, fiber_for(a).map.apply(Fraction(x)))

        def apply_array(self, points):
            # floats from our samplers are exact dyadics, so Fraction(float) is lossless
            out = points.copy()
            for i in range(points.shape[0]):
                a = Fraction(points[i, 0])
                out[i, 1] = float(fiber_for(a).map.apply(Fraction(points[i, 1])))
            return out

    return FiberedSystem(
        base_measure=base,
        fiber=fiber,
        description=f"rank-one family at depth {depth} over {base.description}",
        flat=_FlatSa(),
        fiber_observable=LevelIndicator(stage=min(3, depth), level=0),
        flat_observable=None,
    )

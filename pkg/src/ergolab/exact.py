"""Exact scalars: rationals parsed from strings, and finite sums of unit phases.

Every quantity this package calls "exact" is a finite sum

    sum_j  w_j * e^(2*pi*i*t_j)

with rational weights ``w_j`` and rational angles ``t_j``.  ``PhaseSum`` stores
that form literally, so sums, products, conjugation and equality are decided in
exact arithmetic.  Floats only appear when a caller asks for ``value()``.

Zero-testing is exact whenever the common denominator of the angles is small
enough for cyclotomic reduction (a vanishing rational combination of q-th roots
of unity is exactly a multiple of the q-th cyclotomic polynomial).  For huge
denominators (e.g. forty-digit decimal parameters) a 60-digit numeric fallback
is used; in practice those sums only ever cancel at the rational-angle level,
which the merge step on construction already catches exactly.
"""

from __future__ import annotations

import cmath
from fractions import Fraction
from functools import lru_cache
from math import lcm
from typing import Iterable, Union

__all__ = [
    "PhaseSum",
    "parse_scalar",
    "scalar_str",
    "parse_point",
    "point_str",
]

#: Largest angle denominator for which zero tests run exact cyclotomic reduction.
CYCLOTOMIC_LIMIT = 2048

ScalarLike = Union[int, str, Fraction]


def parse_scalar(value: ScalarLike, *, field: str = "value") -> Fraction:
    """Parse an exact scalar: an int, a ``Fraction``, ``"p/q"``, or a decimal string.

    Floats are rejected on purpose: every parameter must be finitely
    representable, and a decimal string states its own precision.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise _value_error(field, f"expected a rational scalar, got bool {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise _value_error(
            field,
            f"got float {value!r}; pass an exact string such as '1/3' or '0.25'",
        )
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise _value_error(field, f"cannot parse {value!r} as a rational") from exc
    raise _value_error(field, f"cannot parse {type(value).__name__} as a rational")


def _value_error(field: str, message: str) -> ValueError:
    err = ValueError(f"{field}: {message}")
    err.field = field  # type: ignore[attr-defined]
    return err


def scalar_str(x: Fraction) -> str:
    """Serialize a rational as ``"p/q"`` (or ``"p"`` for integers)."""
    return str(x)


def parse_point(values: Iterable[ScalarLike], *, field: str = "point") -> tuple[Fraction, ...]:
    return tuple(parse_scalar(v, field=f"{field}[{i}]") for i, v in enumerate(values))


def point_str(point: tuple[Fraction, ...]) -> list[str]:
    return [scalar_str(c) for c in point]


@lru_cache(maxsize=None)
def _cyclotomic_coeffs(q: int) -> tuple[int, ...]:
    """Ascending integer coefficients of the q-th cyclotomic polynomial."""
    from sympy import Symbol, cyclotomic_poly

    poly = cyclotomic_poly(q, Symbol("x"))
    return tuple(int(c) for c in reversed(poly.as_poly().all_coeffs()))


def _reduce_mod_cyclotomic(coeffs: list[Fraction], q: int) -> list[Fraction]:
    """Remainder of sum(coeffs[a] * x^a) modulo the q-th cyclotomic polynomial."""
    phi = _cyclotomic_coeffs(q)
    deg = len(phi) - 1  # phi is monic of degree deg
    work = list(coeffs)
    for i in range(len(work) - 1, deg - 1, -1):
        c = work[i]
        if c:
            for j, pj in enumerate(phi):
                work[i - deg + j] -= c * pj
    return work[:deg]


class PhaseSum:
    """A finite sum of rational multiples of unit phases e^(2*pi*i*t), t rational.

    Immutable.  Angles are stored mod 1 and equal angles are merged on
    construction, so e.g. ``unit(t) * unit(-t)`` collapses to the rational 1
    without any root-of-unity reasoning.
    """

    __slots__ = ("_terms", "_cached_value")

    def __init__(self, terms: Iterable[tuple[Fraction, Fraction]] = ()):
        merged: dict[Fraction, Fraction] = {}
        for angle, weight in terms:
            if not weight:
                continue
            angle = angle % 1
            acc = merged.get(angle)
            merged[angle] = weight if acc is None else acc + weight
        self._terms: tuple[tuple[Fraction, Fraction], ...] = tuple(
            sorted((a, w) for a, w in merged.items() if w)
        )
        self._cached_value: complex | None = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "PhaseSum":
        return cls()

    @classmethod
    def one(cls) -> "PhaseSum":
        return cls([(Fraction(0), Fraction(1))])

    @classmethod
    def unit(cls, angle: Fraction) -> "PhaseSum":
        """The unimodular value e^(2*pi*i*angle)."""
        return cls([(Fraction(angle), Fraction(1))])

    @classmethod
    def from_rational(cls, w) -> "PhaseSum":
        return cls([(Fraction(0), Fraction(w))])

    # -- structure ---------------------------------------------------------

    @property
    def terms(self) -> tuple[tuple[Fraction, Fraction], ...]:
        return self._terms

    def __repr__(self) -> str:
        if not self._terms:
            return "PhaseSum(0)"
        bits = " + ".join(f"{w}*e(2pi*i*{a})" for a, w in self._terms)
        return f"PhaseSum({bits})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "PhaseSum":
        if isinstance(other, PhaseSum):
            return other
        if isinstance(other, (int, Fraction)):
            return PhaseSum.from_rational(other)
        return NotImplemented  # type: ignore[return-value]

    def __add__(self, other) -> "PhaseSum":
        rhs = self._coerce(other)
        if rhs is NotImplemented:
            return NotImplemented
        return PhaseSum(self._terms + rhs._terms)

    __radd__ = __add__

    def __neg__(self) -> "PhaseSum":
        return PhaseSum((a, -w) for a, w in self._terms)

    def __sub__(self, other) -> "PhaseSum":
        rhs = self._coerce(other)
        if rhs is NotImplemented:
            return NotImplemented
        return self + (-rhs)

    def __rsub__(self, other) -> "PhaseSum":
        rhs = self._coerce(other)
        if rhs is NotImplemented:
            return NotImplemented
        return rhs + (-self)

    def __mul__(self, other) -> "PhaseSum":
        if isinstance(other, (int, Fraction)):
            w0 = Fraction(other)
            return PhaseSum((a, w * w0) for a, w in self._terms)
        if isinstance(other, PhaseSum):
            return PhaseSum(
                (a1 + a2, w1 * w2)
                for a1, w1 in self._terms
                for a2, w2 in other._terms
            )
        return NotImplemented

    __rmul__ = __mul__

    def conjugate(self) -> "PhaseSum":
        return PhaseSum((-a, w) for a, w in self._terms)

    def rotated(self, angle: Fraction) -> "PhaseSum":
        """Multiply by the unit phase e^(2*pi*i*angle)."""
        return PhaseSum((a + angle, w) for a, w in self._terms)

    def abs2(self) -> "PhaseSum":
        """|self|^2 as an exact (real) PhaseSum."""
        return self * self.conjugate()

    # -- evaluation ----------------------------------------------------------

    def value(self) -> complex:
        if self._cached_value is None:
            acc = 0j
            for a, w in self._terms:
                acc += float(w) * cmath.exp(2j * cmath.pi * float(a))
            self._cached_value = acc
        return self._cached_value

    def __complex__(self) -> complex:
        return self.value()

    def abs_value(self) -> float:
        return abs(self.value())

    # -- exact predicates ------------------------------------------------------

    def is_zero(self) -> bool:
        if not self._terms:
            return True
        q = lcm(*(a.denominator for a, _ in self._terms))
        if q <= CYCLOTOMIC_LIMIT:
            coeffs = [Fraction(0)] * q
            for a, w in self._terms:
                coeffs[a.numerator * (q // a.denominator)] += w
            return not any(_reduce_mod_cyclotomic(coeffs, q))
        # Denominator too large for exact reduction: high-precision numeric test.
        import mpmath

        with mpmath.workdps(60):
            total = mpmath.mpc(0)
            for a, w in self._terms:
                total += mpmath.mpf(w.numerator) / w.denominator * mpmath.expjpi(
                    2 * mpmath.mpf(a.numerator) / a.denominator
                )
            return bool(mpmath.fabs(total) < mpmath.mpf(10) ** -45)

    def __eq__(self, other) -> bool:
        rhs = self._coerce(other)
        if rhs is NotImplemented:
            return NotImplemented
        return (self - rhs).is_zero()

    __hash__ = None  # type: ignore[assignment]

    def as_rational(self) -> Fraction | None:
        """The exact rational value of this sum, or None if it is not rational."""
        if not self._terms:
            return Fraction(0)
        if len(self._terms) == 1 and self._terms[0][0] == 0:
            return self._terms[0][1]
        q = lcm(*(a.denominator for a, _ in self._terms))
        if q > CYCLOTOMIC_LIMIT:
            return None
        coeffs = [Fraction(0)] * q
        for a, w in self._terms:
            coeffs[a.numerator * (q // a.denominator)] += w
        reduced = _reduce_mod_cyclotomic(coeffs, q)
        if any(reduced[1:]):
            return None
        return reduced[0] if reduced else Fraction(0)

"""Rank-one cutting-and-stacking: words, maps, dichotomy, continuity."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergolab.core import (
    CIRCLE,
    DepthExceededError,
    DiracMixture,
    HaarMeasure,
    SpecValidationError,
    UndecidableInputError,
    orbit,
)
from ergolab.rank1 import (
    Rank1Spec,
    agreement_stage,
    binary_digits,
    build_rank1_system,
    dyadic_equivalence,
    make_Sa_system,
    rank1_map,
    rank1_word,
    stage_level_positions,
    word_lengths,
)

F = Fraction


# ---------------------------------------------------------------------------
# digits
# ---------------------------------------------------------------------------

def test_binary_digit_examples():
    assert binary_digits(F(1, 4), 4) == (0, 1, 0, 0)
    assert binary_digits(F(3, 4), 4) == (1, 1, 0, 0)
    assert binary_digits(F(1, 3), 8) == (0, 1, 0, 1, 0, 1, 0, 1)
    assert binary_digits(F(0), 3) == (0, 0, 0)
    assert binary_digits(F(1), 3) == (1, 1, 1)


@given(num=st.integers(min_value=0, max_value=999), den=st.integers(min_value=1, max_value=999))
@settings(max_examples=60, deadline=None)
def test_binary_digits_reconstruct_the_number(num, den):
    """Oracle: the digit prefix reconstructs a up to 2^-n."""
    a = F(num % (den + 1), den + 1) if num % (den + 1) <= den + 1 else F(0)
    a = a if a <= 1 else F(1)
    digits = binary_digits(a, 20)
    partial = sum(F(d, 2 ** (i + 1)) for i, d in enumerate(digits))
    assert partial <= a < partial + F(1, 2**20) or a == 1


def test_dyadic_rationals_terminate_in_zeros():
    # the convention bans expansions ending in all ones
    assert binary_digits(F(3, 8), 8) == (0, 1, 1, 0, 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# words
# ---------------------------------------------------------------------------

def test_word_stage_zero():
    spec = Rank1Spec.from_rational("2/3", 4)
    stage = rank1_word(spec, 0)
    assert stage.word == "T" and stage.height == 1 and stage.length == 1


def test_word_lengths_and_heights_table():
    spec = Rank1Spec.from_rational("1/3", 6)
    lengths = [rank1_word(spec, n).length for n in range(4)]
    heights = [rank1_word(spec, n).height for n in range(4)]
    assert lengths == [1, 4, 13, 40]
    assert heights == [1, 3, 9, 27]


def test_word_first_stage_by_digit():
    assert rank1_word(Rank1Spec.from_digits([0]), 1).word == "TsTT"
    assert rank1_word(Rank1Spec.from_digits([1]), 1).word == "TTsT"


@given(digits=st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=9))
@settings(max_examples=40, deadline=None)
def test_word_recursion_invariants(digits):
    spec = Rank1Spec.from_digits(digits)
    prev = rank1_word(spec, 0)
    for n in range(1, len(digits) + 1):
        cur = rank1_word(spec, n)
        assert cur.length == 3 * prev.length + 1
        assert cur.height == 3 * prev.height
        assert cur.word.count("s") == cur.length - cur.height
        # exactly three block copies of the previous word plus one new spacer
        if digits[n - 1] == 0:
            assert cur.word == prev.word + "s" + prev.word + prev.word
        else:
            assert cur.word == prev.word + prev.word + "s" + prev.word
        prev = cur


def test_word_depth_exceeded():
    spec = Rank1Spec.from_rational("1/3", 3)
    with pytest.raises(DepthExceededError):
        rank1_word(spec, 4)


def test_word_stage_max_14():
    spec = Rank1Spec.from_rational("1/3", 14)
    stage = rank1_word(spec, 14)
    assert stage.length == word_lengths(14) == (3**15 - 1) // 2
    assert stage.height == 3**14


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

def test_depth1_map_structure():
    m = rank1_map(Rank1Spec.from_digits([0]))
    assert m.length == 4
    assert m.undefined_measure == F(1, 4)
    pieces = m.pieces()
    assert len(pieces) == 3
    total = sum(hi - lo for lo, hi, _ in pieces)
    assert total == F(3, 4)


def test_map_pieces_partition_support_exactly():
    for depth in range(1, 13):
        m = rank1_map(Rank1Spec.from_rational("1/3", depth))
        starts = sorted(int(s) for s in m.level_starts)
        assert starts == list(range(m.length))  # unit intervals tile the space
        sources = sorted(int(s) for s in m.level_starts[:-1])
        images = sorted(int(s) for s in m.level_starts[1:])
        assert len(set(sources)) == m.length - 1
        assert len(set(images)) == m.length - 1
        # translations preserve piece lengths by construction (all one unit)
        assert m.undefined_measure <= F(1, 3) ** (depth - 1) * F(1, 3)


def test_map_measure_preservation_is_translation():
    m = rank1_map(Rank1Spec.from_rational("2/5", 6))
    for lo, hi, t in m.pieces():
        assert hi - lo == F(1, m.length)
        assert 0 <= lo + t and hi + t <= 1


def test_map_word_coherence():
    """The level order of the constructed tower spells exactly the stage word."""
    for depth in (1, 2, 3, 6, 9, 12):
        spec = Rank1Spec.from_rational("1/3", depth)
        assert rank1_map(spec, depth).word == rank1_word(spec, depth).word


def test_itinerary_spells_word_small_depth():
    spec = Rank1Spec.from_digits([0, 1, 0])
    m = rank1_map(spec)
    word = rank1_word(spec, 3).word
    x = m.level_interval(0)[0] + F(1, 3 * m.length)
    letters = []
    for step in range(m.length):
        level = m.level_of(x)
        assert level == step
        letters.append(word[level])
        if step < m.length - 1:
            x = m.apply(x)
    assert "".join(letters) == word


def test_map_apply_exact_and_depth_exceeded():
    m = rank1_map(Rank1Spec.from_digits([0]))
    # depth-1, digit 0 tower: levels are [0,1/4) -> [1,5/4)/raw... normalized:
    # level order is starts [0, 3, 1, 2] / 4
    assert m.apply(F(0)) == F(3, 4)
    assert m.apply(F(3, 4)) == F(1, 4)
    assert m.apply(F(1, 4)) == F(2, 4)
    with pytest.raises(DepthExceededError):
        m.apply(F(2, 4))  # top level
    with pytest.raises(SpecValidationError):
        m.apply(F(3, 2))


def test_system_wrapper_orbit_and_depth_error():
    sys_ = build_rank1_system(Rank1Spec.from_digits([0]))
    path = orbit(sys_, ("0",), 4)
    assert [p[0] for p in path] == [F(0), F(3, 4), F(1, 4), F(1, 2)]
    with pytest.raises(DepthExceededError):
        orbit(sys_, ("0",), 5)


def test_map_array_path_matches_exact():
    m = rank1_map(Rank1Spec.from_rational("1/3", 5))
    xs = np.array([0.0, 1 / 8, 1 / 2, 5 / 8])
    out = m.apply_array(xs)
    for x, y in zip(xs, out):
        assert m.apply(F(x)) == pytest.approx(y)


def test_stage_level_positions_consistency():
    """Oracle: positions of stage-k levels inside the depth-d word are exactly
    the letter positions of the corresponding block copies."""
    spec = Rank1Spec.from_rational("1/3", 6)
    for stage in (0, 1, 2):
        width = 3 ** (6 - stage)
        seen = set()
        for level in range(word_lengths(stage)):
            pos = stage_level_positions(spec, stage, level, 6)
            assert pos.size == width
            assert len(set(pos.tolist())) == width
            seen.update(pos.tolist())
        # stage-k levels cover exactly the levels whose mass predates stage k+1
        assert len(seen) == word_lengths(stage) * width


def test_level_zero_positions_are_base_mass():
    spec = Rank1Spec.from_digits([0, 0])
    pos = stage_level_positions(spec, 0, 0, 2)
    word = rank1_word(spec, 2).word
    assert all(word[p] == "T" for p in pos)
    assert pos.size == 9


def test_pieces_csv_is_exact_rationals():
    m = rank1_map(Rank1Spec.from_digits([1]))
    csv = m.pieces_csv()
    assert csv.splitlines()[0] == "source_lo,source_hi,translation"
    assert "1/4" in csv or "1/2" in csv


# ---------------------------------------------------------------------------
# dichotomy and continuity
# ---------------------------------------------------------------------------

def test_dichotomy_table():
    a = Rank1Spec.from_rational("1/4", 4)
    b = Rank1Spec.from_rational("3/4", 4)
    c = Rank1Spec.from_rational("1/3", 4)
    assert dyadic_equivalence(a, b).verdict == "isomorphic-family"
    assert dyadic_equivalence(a, c).verdict == "disjoint-family"
    assert dyadic_equivalence(b, c).verdict == "disjoint-family"
    assert dyadic_equivalence(a, a).verdict == "isomorphic-family"


def test_dichotomy_zero_vs_third():
    zero = Rank1Spec.from_rational("0", 4)
    third = Rank1Spec.from_rational("1/3", 4)
    verdict = dyadic_equivalence(zero, third)
    assert verdict.verdict == "disjoint-family"
    assert verdict.difference == F(1, 3)


@given(
    num=st.integers(min_value=0, max_value=63),
    den_pow=st.integers(min_value=0, max_value=6),
    base_num=st.integers(min_value=0, max_value=30),
    base_den=st.integers(min_value=1, max_value=30),
)
@settings(max_examples=60, deadline=None)
def test_dichotomy_dyadic_shift_is_isomorphic(num, den_pow, base_num, base_den):
    base = F(base_num % (base_den + 1), base_den)
    base = base if base <= 1 else base % 1
    shift = F(num, 2**den_pow) % 1
    other = (base + shift)
    if other > 1:
        other -= 1
    a = Rank1Spec.from_rational(base, 2)
    b = Rank1Spec.from_rational(other, 2)
    assert dyadic_equivalence(a, b).isomorphic


def test_dichotomy_rejects_digit_streams():
    a = Rank1Spec.from_digits([0, 1, 0, 1])
    b = Rank1Spec.from_digits([0, 1, 1, 0])
    with pytest.raises(UndecidableInputError) as err:
        dyadic_equivalence(a, b)
    assert err.value.stages_agreeing == 2


def test_agreement_stage_examples():
    quarter = Rank1Spec.from_rational("1/4", 8)
    three_q = Rank1Spec.from_rational("3/4", 8)
    assert agreement_stage(quarter, three_q, 8).first_disagreement == 1
    third = Rank1Spec.from_rational("1/3", 8)
    five_tw = Rank1Spec.from_rational("5/12", 8)
    assert agreement_stage(third, five_tw, 8).first_disagreement == 3
    same = agreement_stage(third, third, 8)
    assert same.first_disagreement is None and same.agrees_through == 8


def test_continuity_prefix_agreement_forces_identical_stages():
    """Exhaustive over digit prefixes of length <= 6."""
    for plen in range(1, 7):
        for bits in range(2**plen):
            digits = tuple((bits >> i) & 1 for i in range(plen))
            s1 = Rank1Spec.from_digits(digits + (0,))
            s2 = Rank1Spec.from_digits(digits + (1,))
            assert rank1_word(s1, plen).word == rank1_word(s2, plen).word
            m1 = rank1_map(s1, plen)
            m2 = rank1_map(s2, plen)
            assert np.array_equal(m1.level_starts, m2.level_starts)


# ---------------------------------------------------------------------------
# the parameterized family
# ---------------------------------------------------------------------------

def test_make_sa_haar_base_fiber_invariants():
    fibered = make_Sa_system(HaarMeasure(1), depth=4)
    for point, fiber in fibered.sample_fibers(seed=9, n=3):
        m = fiber.map
        assert sorted(int(s) for s in m.level_starts) == list(range(m.length))
        assert m.undefined_measure == F(1, m.length)


def test_make_sa_dirac_base_single_fiber():
    base = DiracMixture((CIRCLE,), [(F(1), (F(1, 3),))])
    fibered = make_Sa_system(base, depth=6)
    direct = rank1_map(Rank1Spec.from_rational("1/3", 6))
    _, fiber = fibered.sample_fibers(seed=0, n=1)[0]
    assert np.array_equal(fiber.map.level_starts, direct.level_starts)


def test_make_sa_sampled_fibers_nondyadic_difference_disjoint():
    base = DiracMixture((CIRCLE,), [
        (F(1, 2), (F(1, 3),)),
        (F(1, 2), (F(1, 4),)),
    ])
    fibered = make_Sa_system(base, depth=4)
    fibers = fibered.sample_fibers(seed=3, n=16)
    params = {p[0] for p, _ in fibers}
    assert params == {F(1, 3), F(1, 4)}
    verdict = dyadic_equivalence(Rank1Spec.from_rational(F(1, 3), 4),
                                 Rank1Spec.from_rational(F(1, 4), 4))
    assert verdict.verdict == "disjoint-family"


def test_make_sa_flat_system_applies_fiberwise():
    fibered = make_Sa_system(HaarMeasure(1), depth=3)
    flat = fibered.flat
    a = F(1, 3)
    m = rank1_map(Rank1Spec.from_rational(a, 3))
    out = flat.apply((a, F(0)))
    assert out == (a, m.apply(F(0)))

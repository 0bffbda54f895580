"""The joining zoo: construction, marginals, invariance, product consistency."""

import cmath
from fractions import Fraction

import numpy as np
import pytest

from ergolab.core import (
    Character,
    HaarMeasure,
    IdentitySystem,
    SpecValidationError,
    build_measure,
    build_system,
    frequency_box,
)
from ergolab.exact import PhaseSum
from ergolab.joinings import (
    JoiningConstructionError,
    JoiningSpec,
    build_joining,
    custom_joining,
    invariance_check,
    product_consistency_test,
    product_joining,
    rel_indep_joining,
    sample_joining,
)
from ergolab.spectral import correlation_sequence, detect_eigenvalue

F = Fraction

ROT_THIRD = {"kind": "rotation", "params": {"angle": "1/3"}}
TWIST = {"kind": "twist", "params": {}}
MIX_HALVES = {
    "kind": "atoms",
    "atoms": [
        {"point": ["0"], "weight": "1/2"},
        {"point": ["1/2"], "weight": "1/2"},
    ],
}


def diag_third():
    return build_joining({"kind": "diagonal", "params": {"component": ROT_THIRD}})


def product_third_pair():
    return build_joining({"kind": "product",
                          "params": {"components": [ROT_THIRD, ROT_THIRD]}})


# ---------------------------------------------------------------------------
# construction and integrators
# ---------------------------------------------------------------------------

def test_product_of_rotation_with_itself():
    assert product_third_pair().integrate((1, -1)).is_zero()


def test_diagonal_of_rotation():
    assert diag_third().integrate((1, -1)).as_rational() == 1


def test_diagonal_samples_have_equal_coordinates():
    pts = sample_joining(diag_third(), seed=4, count=50, rationals=True)
    assert all(p[0] == p[1] for p in pts)
    floats = sample_joining(diag_third(), seed=4, count=50)
    assert np.array_equal(floats[:, 0], floats[:, 1])


def test_graph_joining_with_commuting_rotation():
    joining = build_joining({
        "kind": "graph",
        "params": {"component": ROT_THIRD,
                   "map": {"kind": "rotation", "params": {"angle": "1/7"}}},
    })
    # integral of e(x - y) over (x, x + 1/7) is e(-1/7)
    value = joining.integrate((1, -1))
    assert (value - PhaseSum.unit(F(-1, 7))).is_zero()


def test_graph_joining_rejects_non_preserving_map():
    with pytest.raises((JoiningConstructionError, SpecValidationError)):
        build_joining({
            "kind": "graph",
            "params": {
                "component": {"kind": "identity",
                              "params": {"measure": MIX_HALVES}},
                # a rotation by 1/3 does not preserve the two-atom measure
                "map": ROT_THIRD,
            },
        })


def test_graph_joining_rejects_non_commuting_map():
    # the twist does not commute with rotating only the base coordinate
    base_rot = {
        "kind": "product",
        "params": {"factors": [
            {"kind": "rotation", "params": {"angle": "1/5"}},
            {"kind": "identity", "params": {"measure": {"kind": "haar", "arity": 1}}},
        ]},
    }
    with pytest.raises(JoiningConstructionError) as err:
        build_joining({"kind": "graph",
                       "params": {"component": TWIST, "map": base_rot}})
    assert err.value.character is not None


def test_off_diagonal_zero_equals_diagonal():
    off0 = build_joining({"kind": "off-diagonal",
                          "params": {"component": ROT_THIRD, "power": 0}})
    diag = diag_third()
    for k in frequency_box(2, 4):
        assert (off0.integrate(k) - diag.integrate(k)).is_zero()


def test_off_diagonal_powers_and_negative_powers():
    for power in (1, 2, -1):
        off = build_joining({"kind": "off-diagonal",
                             "params": {"component": ROT_THIRD, "power": power}})
        expected = PhaseSum.unit(F(-power, 3))  # integral of e(x - y), y = x + p/3
        assert (off.integrate((1, -1)) - expected).is_zero()


def test_joining_spec_round_trip_and_validation():
    spec = JoiningSpec.from_json({"kind": "diagonal", "params": {"component": ROT_THIRD}})
    assert JoiningSpec.from_json(spec.to_json()) == spec
    with pytest.raises(SpecValidationError):
        JoiningSpec.from_json({"kind": "nope", "params": {}})
    with pytest.raises(SpecValidationError):
        build_joining({"kind": "custom-sampler", "params": {}})


# ---------------------------------------------------------------------------
# marginals
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("builder", [
    diag_third,
    product_third_pair,
    lambda: build_joining({"kind": "example1-triple", "params": {"angle": "1/5"}}),
])
def test_marginal_exactness(builder):
    joining = builder()
    lo = 0
    for i, comp in enumerate(joining.components):
        arity = len(comp.space)
        for k in frequency_box(arity, 3):
            joint_k = [0] * len(joining.space)
            joint_k[lo:lo + arity] = list(k)
            joint = joining.integrate(tuple(joint_k))
            marginal = joining.marginal_integrate(i, k)
            assert (joint - marginal).is_zero(), f"component {i}, character {k}"
        lo += arity


def test_sampled_marginals_within_4_sigma():
    joining = product_third_pair()
    n = 1000
    pts = sample_joining(joining, seed=8, count=n)
    emp = np.exp(2j * np.pi * pts[:, 0]).mean()
    assert abs(emp - 0) <= 4 / np.sqrt(n)


# ---------------------------------------------------------------------------
# rel-indep
# ---------------------------------------------------------------------------

def test_rel_indep_over_trivial_factor_equals_product_exactly():
    identity = IdentitySystem(build_measure(MIX_HALVES))
    rotation = build_system(ROT_THIRD)
    rel = rel_indep_joining([identity, rotation], [[], []], {"kind": "product"})
    prod = product_joining([identity, rotation])
    for k in frequency_box(2, 8):
        assert (rel.integrate(k) - prod.integrate(k)).is_zero(), k


def test_rel_indep_trivial_factor_sampled_cross_average():
    identity = IdentitySystem(HaarMeasure(1))
    rotation = build_system(ROT_THIRD)
    rel = rel_indep_joining([identity, rotation], [[], []], {"kind": "product"})
    n = 4096
    pts = sample_joining(rel, seed=13, count=n)
    emp = np.exp(2j * np.pi * (pts[:, 0] - pts[:, 1])).mean()
    assert abs(emp) <= 4 / np.sqrt(n)


def test_rel_indep_over_twist_bases_diagonal_coupling():
    """Coupling the bases diagonally leaves fiber coordinates independent."""
    t1 = build_system(TWIST)
    t2 = build_system(TWIST)
    rel = rel_indep_joining([t1, t2], [[0], [0]], {"kind": "diagonal"})
    # base coordinates coupled: e(x1 - x2) integrates to 1
    assert rel.integrate((1, 0, -1, 0)).as_rational() == 1
    # fiber coordinates independent Haar: e(y1 - y2) integrates to 0
    assert rel.integrate((0, 1, 0, -1)).is_zero()
    pts = sample_joining(rel, seed=2, count=32, rationals=True)
    assert all(p[0] == p[2] for p in pts)


def test_rel_indep_conditional_atom_fibers():
    atoms = {
        "kind": "atoms",
        "atoms": [
            {"point": ["0", "0"], "weight": "1/2"},
            {"point": ["1/2", "1/4"], "weight": "1/2"},
        ],
    }
    ident = IdentitySystem(build_measure(atoms))
    other = IdentitySystem(build_measure(MIX_HALVES))
    rel = rel_indep_joining([ident, other], [[0], []], {"kind": "product"})
    # marginal on the first component must reproduce the atom coupling
    for k in frequency_box(2, 2):
        joint = rel.integrate(tuple(k) + (0,))
        marginal = ident.measure.integrate_character(k)
        assert (joint - marginal).is_zero()


# ---------------------------------------------------------------------------
# invariance
# ---------------------------------------------------------------------------

def test_invariance_diagonal_exact():
    report = invariance_check(diag_third(), [(1, -1), (2, 0), (1, 1)])
    assert report.passed and report.mode == "exact"


def test_invariance_product_exact():
    report = invariance_check(product_third_pair(), frequency_box(2, 3, skip_zero=True))
    assert report.passed and report.mode == "exact"


def test_invariance_example1_modulus_preserved():
    triple = build_joining({"kind": "example1-triple", "params": {"angle": "1/5"}})
    report = invariance_check(triple, [(0, -1, 0, 1)])
    assert report.passed
    step = triple.system.char_pullback((0, -1, 0, 1))
    assert step is not None
    k2, phase = step
    assert k2 == (1, -1, -1, 1) or k2  # pullback exists
    before = triple.integrate((0, -1, 0, 1))
    after = triple.integrate(k2).rotated(phase)
    assert (before.abs2() - after.abs2()).is_zero()


def test_invariance_sampled_path():
    identity = IdentitySystem(HaarMeasure(1))
    rotation = build_system(ROT_THIRD)
    sampled = custom_joining(
        [identity, rotation],
        sample_rationals_fn=lambda rng, n: [
            p + q for p, q in zip(identity.measure.sample_rationals(rng, n),
                                  rotation.measure.sample_rationals(rng, n))],
        sample_floats_fn=lambda rng, n: np.concatenate(
            [identity.measure.sample_floats(rng, n),
             rotation.measure.sample_floats(rng, n)], axis=1),
    )
    report = invariance_check(sampled, [(1, 0), (0, 1), (1, -1)],
                              seed=21, samples=8192)
    assert report.passed and report.mode == "sampled"


# ---------------------------------------------------------------------------
# product consistency
# ---------------------------------------------------------------------------

def test_consistency_graph_of_rotation_refuted_with_witness():
    outcome = product_consistency_test(diag_third(), degree=1)
    assert outcome.refuted
    assert outcome.witness in ((1, -1), (-1, 1))
    row = next(r for r in outcome.rows if r.character == (1, -1))
    assert row.joint == pytest.approx(1.0)
    assert row.product == pytest.approx(0.0)


def test_consistency_product_passes():
    outcome = product_consistency_test(product_third_pair(), degree=2)
    assert outcome.verdict == "consistent-with-product"
    assert "one-sided" in outcome.note


def test_consistency_sampled_mode():
    identity = IdentitySystem(HaarMeasure(1))
    rotation = build_system(ROT_THIRD)
    prod = product_joining([identity, rotation])
    outcome = product_consistency_test(prod, degree=2, mode="sampled",
                                       samples=4096, seed=77)
    assert outcome.verdict == "consistent-with-product"
    assert all(r.sigma == pytest.approx(1 / np.sqrt(4096)) for r in outcome.rows)


def test_consistency_sampled_detects_diagonal():
    outcome = product_consistency_test(diag_third(), degree=1, mode="sampled",
                                       samples=4096, seed=5)
    assert outcome.refuted


def test_consistency_csv_row_count():
    outcome = product_consistency_test(diag_third(), degree=1)
    csv = outcome.to_csv()
    assert len(csv.splitlines()) == len(outcome.rows) + 1


# ---------------------------------------------------------------------------
# the coupled triple
# ---------------------------------------------------------------------------

def test_example1_triple_z_evolution_exact_at_declared_precision():
    angle = "0.7071067811865475244008443621048490392848"
    triple = build_joining({"kind": "example1-triple", "params": {"angle": angle}})
    pts = sample_joining(triple, seed=31, count=4, rationals=True)
    alpha = F(7071067811865475244008443621048490392848, 10**40)
    for p in pts:
        q = triple.system.apply(p)
        assert q[3] == (p[3] + p[0] + alpha) % 1
        assert q[1] == (p[1] + p[0]) % 1
        assert q[0] == p[0] and q[2] == p[2]


def test_example1_time_zero_factor_integral_vanishes():
    triple = build_joining({"kind": "example1-triple", "params": {"angle": "1/5"}})
    assert triple.integrate((0, -1, 0, 1)).is_zero()


def test_example1_eigenvalue_route_refutes_product():
    """The factor observable has full eigenvalue mass on the coupled triple and
    none on the product: the refutation route for the coupled joining."""
    triple = build_joining({"kind": "example1-triple", "params": {"angle": "1/5"}})
    F_obs = Character((0, -1, 0, 1))
    mass_triple = detect_eigenvalue(triple.system, F_obs, "1/5", 4096)
    assert mass_triple.mass_squared_exact == 1 and mass_triple.witnessed
    prod = product_joining(triple.components)
    mass_prod = detect_eigenvalue(prod.system, F_obs, "1/5", 4096)
    assert mass_prod.mass <= 2 / 4096
    assert not mass_prod.witnessed


def test_example1_correlation_sequence_is_rotation_like():
    triple = build_joining({"kind": "example1-triple", "params": {"angle": "1/5"}})
    seq = correlation_sequence(triple.system, Character((0, -1, 0, 1)), 10)
    for n in range(11):
        assert seq.value(n) == pytest.approx(
            cmath.exp(-2j * cmath.pi * n / 5), abs=1e-12)


def test_example1_statistical_base_sampler():
    triple = build_joining({
        "kind": "example1-triple",
        "params": {"base_measure": {"kind": "power-law-sampled", "exponent": 2},
                   "angle": "1/5"},
    })
    assert not triple.exact
    pts = sample_joining(triple, seed=11, count=100)
    assert np.array_equal(pts[:, 0], pts[:, 2])
    report = invariance_check(triple, [(1, 0, -1, 0), (0, 1, 0, -1)],
                              seed=3, samples=8192)
    assert report.passed

"""Spectral engine: correlation sequences, Wiener averaging, eigenvalue detection.

Oracles: correlation values are cross-checked against midpoint quadrature on a
grid (exact for trigonometric polynomials up to the grid size) and rotated
averages against direct summation, both computed independently of the
pullback machinery.
"""

import cmath
from fractions import Fraction

import numpy as np
import pytest

from ergolab.core import (
    Character,
    DiracMixture,
    IdentitySystem,
    LevelIndicator,
    SpecValidationError,
    as_fibered,
    build_measure,
    build_system,
)
from ergolab.rank1 import Rank1Spec, build_rank1_system, make_Sa_system
from ergolab.spectral import (
    correlation_sequence,
    detect_eigenvalue,
    fiber_eigenvalue_scan,
    weak_mixing_test,
    wiener_atomic_mass,
)

F = Fraction


def rotation(angle, measure=None):
    params = {"angle": angle}
    if measure is not None:
        params["measure"] = measure
    return build_system({"kind": "rotation", "params": params})


def twist():
    return build_system({"kind": "twist", "params": {}})


MIX_HALVES = {
    "kind": "atoms",
    "atoms": [
        {"point": ["0"], "weight": "1/2"},
        {"point": ["1/2"], "weight": "1/2"},
    ],
}


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def quadrature_correlation(apply_n, freqs, n, grid=64):
    """<f o T^(-n), f> by midpoint quadrature: exact for trig polynomials of
    degree < grid because the midpoint sums of e^(2*pi*i*m*x) vanish unless
    grid | m.  ``apply_n(point, n)`` must return T^n(point)."""
    arity = len(freqs)
    axes = [(np.arange(grid) + 0.5) / grid for _ in range(arity)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    forward = np.array([apply_n(p, n) for p in points])
    f_fwd = np.exp(2j * np.pi * (forward @ np.array(freqs)))
    f0 = np.exp(2j * np.pi * (points @ np.array(freqs)))
    # <f o T^(-n), f> = conj(<f o T^n, f>)
    return complex((f_fwd * np.conj(f0)).mean()).conjugate()


def direct_rotated_sum(values, angle, N):
    """Oracle for eigenvalue mass: plain python summation of values(n) * alpha^n."""
    total = 0j
    for n in range(N):
        total += values[n] * cmath.exp(2j * cmath.pi * float(angle) * n)
    return abs(total) / N


# ---------------------------------------------------------------------------
# correlation sequences
# ---------------------------------------------------------------------------

def test_rotation_correlation_closed_form_and_quadrature():
    angle = F(1, 3)
    sys_ = rotation("1/3")
    seq = correlation_sequence(sys_, Character((1,)), 8)
    assert seq.exact

    def apply_n(p, n):
        return [(p[0] + n * float(angle)) % 1.0]

    for n in range(9):
        expected = cmath.exp(-2j * cmath.pi * n / 3)
        assert seq.value(n) == pytest.approx(expected, abs=1e-12)
        assert seq.value(n) == pytest.approx(
            quadrature_correlation(apply_n, (1,), n), abs=1e-12)
        assert seq.value(-n) == pytest.approx(expected.conjugate(), abs=1e-12)


def test_rotation_correlation_frozen_values():
    # frozen from the quadrature oracle at angle 1/3, k = 1
    frozen = [
        1.0 + 0.0j,
        -0.5 - 0.8660254037844386j,
        -0.5 + 0.8660254037844386j,
        1.0 + 0.0j,
    ]
    seq = correlation_sequence(rotation("1/3"), Character((1,)), 4)
    for n, expected in enumerate(frozen):
        assert seq.value(n) == pytest.approx(expected, abs=1e-12)


def test_twist_correlation_is_base_fourier():
    seq = correlation_sequence(twist(), Character((0, 1)), 16)
    assert seq.exact
    assert seq.phase_value(0).as_rational() == 1
    for n in range(1, 17):
        assert seq.phase_value(n).is_zero()

    def apply_n(p, n):
        return [p[0], (p[1] + n * p[0]) % 1.0]

    for n in range(4):
        assert seq.value(n) == pytest.approx(
            quadrature_correlation(apply_n, (0, 1), n, grid=32), abs=1e-12)


def test_identity_correlation_is_constant_one():
    sys_ = IdentitySystem(build_measure(MIX_HALVES))
    seq = correlation_sequence(sys_, Character((3,)), 8)
    for n in range(-8, 9):
        assert seq.value(n) == pytest.approx(1.0, abs=1e-14)


def test_centered_correlation_subtracts_squared_mean():
    sys_ = IdentitySystem(build_measure(MIX_HALVES))
    seq = correlation_sequence(sys_, Character((2,)), 8, center=True)
    # e(2x) has mean 1 on the two-atom mixture, so the centered sequence vanishes
    for n in range(9):
        assert seq.phase_value(n).is_zero()
    seq1 = correlation_sequence(sys_, Character((1,)), 8, center=True)
    # e(x) has mean 0 there, so centering changes nothing
    for n in range(9):
        assert seq1.value(n) == pytest.approx(1.0, abs=1e-14)


def test_finite_support_path_matches_pullback_path():
    sys_ = rotation("1/2", measure=MIX_HALVES)
    via_pullback = correlation_sequence(sys_, Character((1,)), 8)
    atoms = sys_.measure.enumerate_atoms()
    assert atoms is not None
    for n in range(9):
        points = [p for _, p in atoms]
        for _ in range(n):
            points = [sys_.apply(p) for p in points]
        c_n = sum(
            float(w) * cmath.exp(2j * cmath.pi * float(q[0] - p[0]))
            for (w, p), q in zip(atoms, points)
        )
        assert via_pullback.value(n) == pytest.approx(
            complex(c_n).conjugate(), abs=1e-12)


def test_sampled_correlation_tracks_exact():
    from ergolab.spectral import _sampled_sequence

    sys_ = twist()
    exact = correlation_sequence(sys_, Character((0, 1)), 8)
    seq = _sampled_sequence(sys_, (0, 1), 8, False, seed=3, samples=20000)
    assert not seq.exact and seq.std_errors is not None
    for n in range(9):
        assert abs(seq.value(n) - exact.value(n)) < 4 * seq.std_errors[n] + 1e-3


def test_hermitian_symmetry_and_cauchy_schwarz():
    for sys_, f in [
        (rotation("2/7"), Character((1,))),
        (twist(), Character((1, 1))),
        (IdentitySystem(build_measure(MIX_HALVES)), Character((1,))),
    ]:
        seq = correlation_sequence(sys_, f, 32)
        for n in range(33):
            assert seq.value(-n) == pytest.approx(seq.value(n).conjugate(), abs=1e-14)
            assert abs(seq.value(n)) <= abs(seq.value(0)) + 1e-12


@pytest.mark.parametrize("system_builder, f", [
    (lambda: rotation("1/3"), Character((1,))),
    (lambda: rotation("2/7"), Character((2,))),
    (lambda: twist(), Character((1, 1))),
    (lambda: IdentitySystem(build_measure(MIX_HALVES)), Character((1,))),
])
def test_toeplitz_positive_semidefinite(system_builder, f):
    seq = correlation_sequence(system_builder(), f, 64)
    assert seq.toeplitz_min_eigenvalue(64) >= -1e-9


def test_mixture_affinity_of_coefficients():
    """Coefficients are exactly affine in the mixture weight (shared dynamics)."""
    haar = {"kind": "haar", "arity": 1}
    seq_ends = {}
    for w in (F(0), F(1, 4), F(1, 2), F(1)):
        if w == 0:
            measure = MIX_HALVES
        elif w == 1:
            measure = haar
        else:
            measure = {"kind": "mixture", "components": [
                {"weight": str(w), "measure": haar},
                {"weight": str(1 - w), "measure": MIX_HALVES},
            ]}
        sys_ = rotation("1/2", measure=measure)
        seq_ends[w] = correlation_sequence(sys_, Character((2,)), 16)
    for n in range(17):
        p0 = seq_ends[F(0)].phase_value(n)
        p1 = seq_ends[F(1)].phase_value(n)
        for w in (F(1, 4), F(1, 2)):
            pw = seq_ends[w].phase_value(n)
            assert (pw - (p1 * w + p0 * (1 - w))).is_zero()


# ---------------------------------------------------------------------------
# Wiener averaging
# ---------------------------------------------------------------------------

def test_wiener_identity_mass_one():
    seq = correlation_sequence(IdentitySystem(build_measure(MIX_HALVES)),
                               Character((1,)), 64)
    report = wiener_atomic_mass(seq, grid_max_denominator=4)
    assert report.total_exact == 1


def test_wiener_rotation_mass_one_with_flat_trace():
    seq = correlation_sequence(rotation("1/3"), Character((1,)), 64)
    report = wiener_atomic_mass(seq, grid_max_denominator=8)
    assert report.total_exact == 1
    assert [m for _, m in report.trace] == pytest.approx([1.0, 1.0, 1.0])
    # the spectral atom of the rotation by a sits at e(-a): angle 2/3 here
    assert report.atoms[0]["angle"] == "2/3"
    assert report.atoms[0]["weight"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("N", [256, 1024, 4096])
def test_wiener_twist_mass_is_one_over_N(N):
    seq = correlation_sequence(twist(), Character((0, 1)), N)
    report = wiener_atomic_mass(seq, grid_max_denominator=1)
    assert report.total_exact == F(1, N)
    assert report.total_atomic_mass <= 2 / N
    expected_trace = [F(4, N), F(2, N), F(1, N)]
    assert [m for _, m in report.trace] == pytest.approx(
        [float(t) for t in expected_trace])


def test_wiener_requires_minimum_order():
    seq = correlation_sequence(rotation("1/3"), Character((1,)), 8)
    with pytest.raises(SpecValidationError):
        wiener_atomic_mass(seq)


def test_atom_masses_bounded_by_total():
    seq = correlation_sequence(rotation("1/3"), Character((1,)), 256)
    report = wiener_atomic_mass(seq, grid_max_denominator=16)
    assert -1e-9 <= report.total_atomic_mass <= abs(seq.value(0)) ** 2 + 1e-9
    for atom in report.atoms:
        assert atom["squared_weight"] <= report.total_atomic_mass + 1e-9


# ---------------------------------------------------------------------------
# eigenvalue detection
# ---------------------------------------------------------------------------

def test_detect_eigenvalue_rotation_true_angle():
    verdict = detect_eigenvalue(rotation("1/3"), Character((1,)), "1/3", 64)
    assert verdict.mass == pytest.approx(1.0, abs=1e-12)
    assert verdict.mass_squared_exact == 1
    assert verdict.witnessed


def test_detect_eigenvalue_rotation_wrong_angles():
    seq = correlation_sequence(rotation("1/3"), Character((1,)), 4096)
    values = [seq.value(n) for n in range(4096)]
    for angle in (F(0), F(1, 2), F(2, 3), F(1, 5)):
        verdict = detect_eigenvalue(rotation("1/3"), Character((1,)), angle, 4096,
                                    seq=seq)
        oracle = direct_rotated_sum(values, angle, 4096)
        assert verdict.mass == pytest.approx(oracle, abs=1e-9)
        assert not verdict.witnessed
        # sharp geometric bound 1 / (N |sin(pi delta)|), delta the angle offset
        delta = float(angle - F(1, 3))
        bound = 1.0 / (4096 * abs(np.sin(np.pi * delta)))
        assert verdict.mass <= bound + 1e-12
        if abs(np.sin(np.pi * delta)) >= 0.5:
            assert verdict.mass <= 2 / 4096


def test_detect_eigenvalue_via_second_frequency():
    # e(2x) witnesses the eigenvalue at angle 2a
    verdict = detect_eigenvalue(rotation("1/3"), Character((2,)), "2/3", 64)
    assert verdict.mass == pytest.approx(1.0, abs=1e-12)
    assert verdict.witnessed


def test_detect_eigenvalue_reports_exactness():
    verdict = detect_eigenvalue(rotation("1/3"), Character((1,)), "1/3", 64)
    assert verdict.exact
    assert verdict.to_json()["mass_squared_exact"] == "1"


# ---------------------------------------------------------------------------
# weak mixing probe
# ---------------------------------------------------------------------------

def test_weak_mixing_identity_detects_atoms():
    """Centered characters on an identity have constant correlation, hence mass.

    Oracle: the centered sequence is values(n) = 1 - |mean|^2, so the Wiener
    average equals (1 - |mean|^2)^2.
    """
    sys_ = IdentitySystem(build_measure({
        "kind": "atoms",
        "atoms": [{"point": ["0"], "weight": "1/2"},
                  {"point": ["1/3"], "weight": "1/2"}],
    }))
    report = weak_mixing_test(sys_, [Character((1,))], N=64)
    assert not report.no_atoms_detected
    mean = 0.5 + 0.5 * cmath.exp(2j * cmath.pi / 3)
    assert report.masses[0][1] == pytest.approx((1 - abs(mean) ** 2) ** 2, abs=1e-12)
    assert report.verdict == "atoms-detected"


def test_weak_mixing_identity_on_lebesgue():
    # e(x) is already mean-zero on Haar, so its centered correlation is
    # constantly one: full atomic mass, not weakly mixing
    sys_ = IdentitySystem(build_measure({"kind": "haar", "arity": 1}))
    report = weak_mixing_test(sys_, [Character((1,))], N=64)
    assert report.verdict == "atoms-detected"
    assert report.masses[0][1] == pytest.approx(1.0, abs=1e-12)


def test_weak_mixing_rotation_not_weakly_mixing():
    report = weak_mixing_test(rotation("1/3"), [Character((1,)), Character((2,))], N=256)
    assert report.verdict == "atoms-detected"
    assert all(m == pytest.approx(1.0, abs=1e-12) for _, m in report.masses)


def test_weak_mixing_rank1_probe():
    sys_ = build_rank1_system(Rank1Spec.from_rational("1/3", 12))
    family = [LevelIndicator(stage=s, level=0) for s in (3, 4, 5)]
    report = weak_mixing_test(sys_, family, N=4096)
    assert report.no_atoms_detected
    assert all(m < 0.05 for _, m in report.masses)
    assert "finite" in report.caveat


def test_weak_mixing_caveat_serialized():
    report = weak_mixing_test(rotation("1/3"), [Character((1,))], N=64)
    assert "does not certify" in report.to_json()["caveat"]


# ---------------------------------------------------------------------------
# fiber scans
# ---------------------------------------------------------------------------

def test_fiber_scan_twist_over_haar_measure_zero_witness():
    fibered = as_fibered(twist())
    report = fiber_eigenvalue_scan(fibered, "1/7", samples=20, N=64, seed=101)
    assert report.witness_fraction == 0.0
    assert report.flat_verdict is not None and not report.flat_verdict.witnessed
    assert report.coherent


def test_fiber_scan_constant_fiber():
    sys_ = build_system({
        "kind": "fibered",
        "params": {
            "base_measure": {"kind": "haar", "arity": 1},
            "fiber": {"kind": "rotation",
                      "angle": {"kind": "affine", "slope": "0", "intercept": "1/3"}},
        },
    })
    report = fiber_eigenvalue_scan(as_fibered(sys_), "1/3", samples=10, N=64, seed=5)
    assert report.witness_fraction == 1.0
    assert report.flat_verdict.witnessed and report.coherent


def test_fiber_scan_dirac_base():
    sys_ = build_system({
        "kind": "twist",
        "params": {"base_measure": {
            "kind": "atoms", "atoms": [{"point": ["1/3"], "weight": "1"}]}},
    })
    report = fiber_eigenvalue_scan(as_fibered(sys_), "1/3", samples=10, N=64, seed=5)
    assert report.witness_fraction == 1.0
    assert report.flat_verdict.witnessed


def test_fiber_scan_rank1_family():
    from ergolab.core import CIRCLE

    base = DiracMixture((CIRCLE,), [(F(1), (F(1, 3),))])
    fibered = make_Sa_system(base, depth=8)
    point, fiber = fibered.sample_fibers(seed=1, n=1)[0]
    assert point == (F(1, 3),)
    # single fiber equals the rank-one map at the same parameter
    direct = build_rank1_system(Rank1Spec.from_rational("1/3", 8))
    assert np.array_equal(fiber.map.level_starts, direct.map.level_starts)

"""Spectral invariants: correlation sequences, Wiener averaging, eigenvalue detection.

The correlation sequence of an observable f under a system T is

    values(n) = <f o T^(-n), f>_{L^2(mu)}      for n in [-N, N],

the Fourier transform of the spectral measure sigma_f on the unit circle.  Sign
convention, fixed once: with this transform an eigenfunction f o T = c * f puts
the atom of sigma_f at conj(c).  ``detect_eigenvalue`` therefore asks about the
*eigenvalue* c directly via (1/N) |sum_n values(n) * c^n|, which converges to
sigma_f({conj(c)}) -- mass 1 exactly when f witnesses the eigenvalue c.
``wiener_atomic_mass`` reports the classical one-sided Cesaro average of
|values|^2, which converges to the total squared atomic mass of sigma_f.

Exactness: affine systems with exact measures go through character pullback;
finite-support measures go through direct orbit summation; rank-one level
indicators go through tower-level counting on the cyclic closure of the finite
tower (a genuine periodic system, so positive-definiteness is exact); anything
else is seeded Monte Carlo with per-entry standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from ergolab.core import (
    Character,
    FiberedSystem,
    FreqVector,
    LevelIndicator,
    SpecValidationError,
    System,
    UnsupportedOperationError,
    character_array,
    character_at,
    rng_from_seed,
    validate_frequencies,
)
from ergolab.exact import PhaseSum, parse_scalar, scalar_str

DEFAULT_ORDER = 4096
EIGENVALUE_THRESHOLD = 0.5
WEAK_MIXING_THRESHOLD = 0.05
ATOM_GRID_MAX_DENOMINATOR = 64
PSD_TOLERANCE = 1e-9

FINITE_FAMILY_CAVEAT = (
    "finite-family, finite-N approximation: absence of detected atoms among the "
    "tested observables does not certify that every spectral measure is continuous"
)


# ---------------------------------------------------------------------------
# correlation sequences
# ---------------------------------------------------------------------------

@dataclass
class CorrelationSeq:
    """values(n) = <f o T^(-n), f> for n in [-N, N], with conjugate symmetry.

    Entries for n >= 0 are stored; negative indices are served by conjugation.
    When ``exact`` is set every entry carries its PhaseSum alongside floats.
    """

    N: int
    observable: object
    exact: bool
    _values: np.ndarray  # complex, index n = 0..N
    phases: list[PhaseSum] | None = None
    std_errors: np.ndarray | None = None
    n_samples: int = 0
    seed: int | None = None
    provenance: str = ""

    def value(self, n: int) -> complex:
        if abs(n) > self.N:
            raise SpecValidationError("n", f"|n| must be <= {self.N}")
        v = self._values[abs(n)]
        return complex(v) if n >= 0 else complex(v).conjugate()

    def phase_value(self, n: int) -> PhaseSum | None:
        if self.phases is None:
            return None
        ps = self.phases[abs(n)]
        return ps if n >= 0 else ps.conjugate()

    def values_nonnegative(self) -> np.ndarray:
        return self._values.copy()

    def toeplitz(self, size: int) -> np.ndarray:
        """Hermitian Toeplitz matrix M[i, j] = values(i - j)."""
        if size > self.N + 1:
            raise SpecValidationError("size", f"size must be <= {self.N + 1}")
        idx = np.arange(size)
        diff = idx[:, None] - idx[None, :]
        mat = self._values[np.abs(diff)]
        return np.where(diff >= 0, mat, np.conj(mat))

    def toeplitz_min_eigenvalue(self, size: int) -> float:
        return float(np.linalg.eigvalsh(self.toeplitz(size))[0])

    def to_json(self) -> dict:
        doc = {
            "N": self.N,
            "observable": describe_observable(self.observable),
            "exact": self.exact,
            "values": [[self.value(n).real, self.value(n).imag]
                       for n in range(-self.N, self.N + 1)],
            "seed": self.seed,
            "provenance": self.provenance,
        }
        if self.std_errors is not None:
            doc["std_errors"] = [float(s) for s in self.std_errors]
            doc["n_samples"] = self.n_samples
        return doc

    def to_csv(self) -> str:
        lines = ["n,re,im"]
        for n in range(-self.N, self.N + 1):
            v = self.value(n)
            lines.append(f"{n},{v.real!r},{v.imag!r}")
        return "\n".join(lines) + "\n"


def describe_observable(f: object) -> str:
    if isinstance(f, (Character, LevelIndicator)):
        return f.label()
    return str(f)


def _as_observable(f) -> Character | LevelIndicator:
    if isinstance(f, (Character, LevelIndicator)):
        return f
    if isinstance(f, (tuple, list)):
        return Character(tuple(int(v) for v in f))
    raise SpecValidationError("f", f"cannot interpret {f!r} as an observable")


def correlation_sequence(system: System, f, N: int, center: bool = False, *,
                         seed: int | None = None, samples: int = 4096) -> CorrelationSeq:
    """Compute values(n) = <f o T^(-n), f> for n = 0..N (negatives by symmetry).

    Exact whenever the system supports exact integration of the relevant
    characters (affine pullback or finite-support orbit sums); the rank-one
    level-indicator path is exact by tower-level counting.  Otherwise a seeded
    Monte Carlo estimate with per-entry standard errors.
    """
    if N < 1:
        raise SpecValidationError("N", f"order must be >= 1, got {N}")
    f = _as_observable(f)
    if isinstance(f, LevelIndicator):
        return _rank1_indicator_sequence(system, f, N, center)
    k = validate_frequencies(system.space, f.freqs)
    center = center or f.centered

    exact = _exact_sequence(system, k, N, center)
    if exact is not None:
        return exact
    if seed is None:
        raise UnsupportedOperationError(
            "system has no exact path for this observable; pass a seed to sample"
        )
    return _sampled_sequence(system, k, N, center, seed, samples)


def _exact_sequence(system: System, k: FreqVector, N: int,
                    center: bool) -> CorrelationSeq | None:
    measure = system.measure
    mean = measure.integrate_character(k) if measure.exact else None

    # path A: affine pullback against an exact integrator
    if measure.exact and system.char_pullback(k) is not None:
        phases: list[PhaseSum] = []
        current, phase = tuple(k), Fraction(0)
        ok = True
        for n in range(N + 1):
            diff = tuple(a - b for a, b in zip(current, k))
            integral = measure.integrate_character(diff)
            if integral is None:
                ok = False
                break
            # c_n = e(phase) * mu_hat(k_n - k);  values(n) = conj(c_n)
            phases.append((integral.rotated(phase)).conjugate())
            if n < N:
                step = system.char_pullback(current)
                if step is None:
                    ok = False
                    break
                current = step[0]
                phase = (phase + step[1]) % 1
        if ok:
            return _finish_exact(phases, k, N, center, mean, "affine-pullback")

    # path B: finite-support orbit summation
    atoms = measure.enumerate_atoms()
    if atoms is not None:
        base_vals = [character_at(k, p).conjugate() for _, p in atoms]
        points = [p for _, p in atoms]
        weights = [w for w, _ in atoms]
        phases = []
        for _ in range(N + 1):
            total = PhaseSum.zero()
            for w, p, cv in zip(weights, points, base_vals):
                total = total + character_at(k, p) * cv * w
            phases.append(total.conjugate())
            points = [system.apply(p) for p in points]
        return _finish_exact(phases, k, N, center, mean, "atom-orbits")

    return None


def _finish_exact(phases: list[PhaseSum], k: FreqVector, N: int, center: bool,
                  mean: PhaseSum | None, provenance: str) -> CorrelationSeq:
    observable = Character(tuple(k), centered=center)
    if center:
        if mean is None:
            raise UnsupportedOperationError("cannot center: the mean is not exact")
        shift = mean.abs2()
        phases = [p - shift for p in phases]
    values = np.array([p.value() for p in phases], dtype=np.complex128)
    return CorrelationSeq(
        N=N, observable=observable, exact=True, _values=values, phases=phases,
        provenance=provenance,
    )


def _sampled_sequence(system: System, k: FreqVector, N: int, center: bool,
                      seed: int, samples: int) -> CorrelationSeq:
    rng = rng_from_seed(seed)
    points = system.measure.sample_floats(rng, samples)
    f0 = character_array(k, points)
    mean = complex(f0.mean()) if center else 0j
    current = points
    values = np.empty(N + 1, dtype=np.complex128)
    errors = np.empty(N + 1, dtype=np.float64)
    for n in range(N + 1):
        fn = character_array(k, current)
        prods = fn * np.conj(f0)
        c_n = complex(prods.mean())
        values[n] = np.conj(c_n)
        errors[n] = math.sqrt(max(0.0, 1.0 - abs(c_n) ** 2) / samples)
        if n < N:
            current = system.apply_array(current)
    if center:
        values -= abs(mean) ** 2
    return CorrelationSeq(
        N=N, observable=Character(tuple(k), centered=center), exact=False,
        _values=values, std_errors=errors, n_samples=samples, seed=seed,
        provenance="monte-carlo",
    )


def _rank1_indicator_sequence(system: System, f: LevelIndicator, N: int,
                              center: bool) -> CorrelationSeq:
    """Exact correlations of a tower-level indicator via level counting.

    Uses the cyclic closure of the finite tower (top level mapped back to the
    base), which is a genuine measure-preserving interval exchange; the finite
    construction stage is recorded in the provenance.
    """
    from ergolab.rank1 import Rank1System, stage_level_positions, word_lengths

    if not isinstance(system, Rank1System):
        raise UnsupportedOperationError(
            "level-indicator observables apply to rank-one tower systems only"
        )
    depth = system.r1spec.depth
    total = word_lengths(depth)
    positions = stage_level_positions(system.r1spec, f.stage, f.level, depth)
    mask = np.zeros(total, dtype=np.float64)
    mask[positions] = 1.0
    spectrum = np.fft.rfft(mask)
    autocorr = np.fft.irfft(np.abs(spectrum) ** 2, n=total)
    counts = np.rint(autocorr).astype(np.int64)  # exact: counts are integers
    size = int(positions.size)
    mass = Fraction(size, total)
    centered = center or f.centered

    phases: list[PhaseSum] = []
    variance = mass * (1 - mass)
    for n in range(N + 1):
        overlap = Fraction(int(counts[n % total]), total)
        if centered:
            phases.append(PhaseSum.from_rational((overlap - mass * mass) / variance))
        else:
            phases.append(PhaseSum.from_rational(overlap))
    values = np.array([p.value() for p in phases], dtype=np.complex128)
    return CorrelationSeq(
        N=N, observable=LevelIndicator(f.stage, f.level, centered), exact=True,
        _values=values, phases=phases,
        provenance=f"tower-level-counting (cyclic closure, depth {depth})",
    )


# ---------------------------------------------------------------------------
# Wiener averaging and atoms
# ---------------------------------------------------------------------------

@dataclass
class AtomReport:
    """Total squared atomic mass of sigma_f by one-sided Cesaro averaging.

    total_atomic_mass is (1/N) sum_{i<N} |values(i)|^2, with its convergence
    trace over the dyadic prefixes N/4, N/2, N.  Detected atoms carry the
    location (as an angle: the atom sits at e^(2*pi*i*angle)), the estimated
    atom weight sigma({.}), and the squared weight -- the quantity that sums to
    the total.
    """

    total_atomic_mass: float
    total_exact: Fraction | None
    trace: list[tuple[int, float]]
    atoms: list[dict]
    params: dict

    def to_json(self) -> dict:
        return {
            "total_atomic_mass": self.total_atomic_mass,
            "total_exact": scalar_str(self.total_exact) if self.total_exact is not None else None,
            "trace": [[n, m] for n, m in self.trace],
            "atoms": self.atoms,
            "params": self.params,
        }


def _atom_grid(max_denominator: int) -> list[Fraction]:
    angles = set()
    for q in range(1, max_denominator + 1):
        for p in range(q):
            angles.add(Fraction(p, q))
    return sorted(angles)


def wiener_atomic_mass(seq: CorrelationSeq, *, candidates: Sequence = (),
                       grid_max_denominator: int = ATOM_GRID_MAX_DENOMINATOR,
                       atom_floor: float = 0.05) -> AtomReport:
    """One-sided Cesaro average of |values|^2 with a dyadic convergence trace.

    Atom locations are searched on the rational grid p/q, q <= the given
    denominator bound, plus any user-supplied candidate angles.
    """
    N = seq.N
    if N < 16:
        raise SpecValidationError("N", f"Wiener averaging needs N >= 16, got {N}")

    prefixes = [max(1, N // 4), max(1, N // 2), N]
    trace = []
    if seq.exact and seq.phases is not None:
        running = PhaseSum.zero()
        partials: dict[int, PhaseSum] = {}
        for i in range(N):
            running = running + seq.phases[i].abs2()
            if i + 1 in prefixes:
                partials[i + 1] = running
        totals = {n: partials[n] * Fraction(1, n) for n in prefixes}
        trace = [(n, totals[n].value().real) for n in prefixes]
        total_ps = totals[N]
        total_exact = total_ps.as_rational()
        total = total_ps.value().real
    else:
        sq = np.abs(seq.values_nonnegative()[:N]) ** 2
        csum = np.cumsum(sq)
        trace = [(n, float(csum[n - 1] / n)) for n in prefixes]
        total = float(csum[N - 1] / N)
        total_exact = None

    atoms = []
    seen = set()
    candidate_angles = [parse_scalar(c, field="candidates") for c in candidates]
    for angle in list(candidate_angles) + _atom_grid(grid_max_denominator):
        angle %= 1
        if angle in seen:
            continue
        seen.add(angle)
        weight = _rotated_average(seq, angle, N, sign=-1)
        if weight >= atom_floor:
            atoms.append({
                "angle": scalar_str(angle),
                "weight": weight,
                "squared_weight": weight ** 2,
            })
    atoms.sort(key=lambda a: -a["weight"])
    return AtomReport(
        total_atomic_mass=total,
        total_exact=total_exact,
        trace=trace,
        atoms=atoms,
        params={
            "N": N,
            "grid_max_denominator": grid_max_denominator,
            "atom_floor": atom_floor,
            "candidates": [scalar_str(c) for c in candidate_angles],
        },
    )


def _rotated_average(seq: CorrelationSeq, angle: Fraction, N: int, sign: int) -> float:
    """(1/N) |sum_{n<N} values(n) e^(sign * 2*pi*i*n*angle)| as a float."""
    vals = seq.values_nonnegative()[:N]
    n = np.arange(N)
    factor = np.exp(sign * 2j * np.pi * float(angle) * n)
    return float(abs((vals * factor).sum()) / N)


# ---------------------------------------------------------------------------
# eigenvalue detection
# ---------------------------------------------------------------------------

@dataclass
class EigenvalueVerdict:
    angle: Fraction            # the query eigenvalue is e^(2*pi*i*angle)
    mass: float
    witnessed: bool
    threshold: float
    N: int
    exact: bool
    mass_squared_exact: Fraction | None = None
    observable: str = ""

    def to_json(self) -> dict:
        return {
            "angle": scalar_str(self.angle),
            "point": [math.cos(2 * math.pi * float(self.angle)),
                      math.sin(2 * math.pi * float(self.angle))],
            "mass": self.mass,
            "witnessed": self.witnessed,
            "threshold": self.threshold,
            "N": self.N,
            "exact": self.exact,
            "mass_squared_exact": (scalar_str(self.mass_squared_exact)
                                   if self.mass_squared_exact is not None else None),
            "observable": self.observable,
        }


def detect_eigenvalue(system: System, f, alpha, N: int = DEFAULT_ORDER, *,
                      threshold: float = EIGENVALUE_THRESHOLD,
                      seed: int | None = None, samples: int = 4096,
                      seq: CorrelationSeq | None = None) -> EigenvalueVerdict:
    """Rotated Wiener average (1/N) |sum_{n<N} values(n) * alpha^n|.

    ``alpha`` is the *eigenvalue* being probed, given as a rational or decimal
    angle a (the circle point e^(2*pi*i*a)).  The average converges to the mass
    of sigma_f at conj(alpha), which is exactly the extent to which f witnesses
    alpha as an eigenvalue; it equals 1 when f o T = alpha * f.
    """
    angle = parse_scalar(alpha, field="alpha") % 1
    if N < 16:
        raise SpecValidationError("N", f"eigenvalue detection needs N >= 16, got {N}")
    if seq is None:
        seq = correlation_sequence(system, f, N, seed=seed, samples=samples)
    if seq.N < N - 1:
        raise SpecValidationError("N", "provided sequence is shorter than N")

    mass_sq_exact = None
    if seq.exact and seq.phases is not None:
        total = PhaseSum(
            (a + n * angle, w)
            for n in range(N)
            for a, w in seq.phases[n].terms
        )
        mass = float(abs(total.value()) / N)
        ms = total.abs2().as_rational()
        if ms is not None:
            mass_sq_exact = ms / (N * N)
            mass = math.sqrt(float(mass_sq_exact)) if mass_sq_exact >= 0 else mass
    else:
        mass = _rotated_average(seq, angle, N, sign=+1)
    return EigenvalueVerdict(
        angle=angle,
        mass=mass,
        witnessed=mass > threshold,
        threshold=threshold,
        N=N,
        exact=seq.exact,
        mass_squared_exact=mass_sq_exact,
        observable=describe_observable(seq.observable),
    )


# ---------------------------------------------------------------------------
# weak mixing probe
# ---------------------------------------------------------------------------

@dataclass
class WeakMixingReport:
    masses: list[tuple[str, float]]
    verdict: str
    threshold: float
    N: int
    caveat: str = FINITE_FAMILY_CAVEAT

    @property
    def no_atoms_detected(self) -> bool:
        return self.verdict == "no-atoms-detected"

    def to_json(self) -> dict:
        return {
            "masses": [[label, m] for label, m in self.masses],
            "verdict": self.verdict,
            "threshold": self.threshold,
            "N": self.N,
            "caveat": self.caveat,
        }


def weak_mixing_test(system: System, family: Sequence, N: int = DEFAULT_ORDER,
                     threshold: float = WEAK_MIXING_THRESHOLD, *,
                     seed: int | None = None, samples: int = 4096) -> WeakMixingReport:
    """Wiener atomic mass of every mean-centered observable in the family.

    Verdict "no-atoms-detected" iff every mass stays below the threshold; the
    report carries the standing caveat that only the tested finite family at
    finite N was examined.
    """
    if not family:
        raise SpecValidationError("family", "observable family must be nonempty")
    masses = []
    for f in family:
        f = _as_observable(f)
        seq = correlation_sequence(system, f, N, center=True, seed=seed, samples=samples)
        report = wiener_atomic_mass(seq, grid_max_denominator=1)
        masses.append((describe_observable(seq.observable), report.total_atomic_mass))
    ok = all(m < threshold for _, m in masses)
    return WeakMixingReport(
        masses=masses,
        verdict="no-atoms-detected" if ok else "atoms-detected",
        threshold=threshold,
        N=N,
    )


# ---------------------------------------------------------------------------
# fiber scans
# ---------------------------------------------------------------------------

@dataclass
class FiberScanReport:
    witness_fraction: float
    sampled: int
    failures: int
    per_fiber: list[dict]
    flat_verdict: EigenvalueVerdict | None
    coherent: bool | None

    def to_json(self) -> dict:
        return {
            "witness_fraction": self.witness_fraction,
            "sampled": self.sampled,
            "failures": self.failures,
            "per_fiber": self.per_fiber,
            "flat": self.flat_verdict.to_json() if self.flat_verdict else None,
            "coherent": self.coherent,
        }


def fiber_eigenvalue_scan(fibered: FiberedSystem, alpha, samples: int, N: int, *,
                          seed: int, threshold: float = EIGENVALUE_THRESHOLD,
                          fiber_observable=None) -> FiberScanReport:
    """Fraction of sampled fibers witnessing alpha, juxtaposed with the flat view.

    An eigenvalue of a positive-measure set of fibers shows up in the flat
    system and conversely; the report states both sides.  Fibers whose
    construction fails are excluded from the fraction and counted as failures.
    """
    angle = parse_scalar(alpha, field="alpha") % 1
    observable = fiber_observable if fiber_observable is not None \
        else fibered.fiber_observable
    if observable is None:
        raise SpecValidationError("fiber_observable", "no fiber observable available")
    entries = []
    witnessed = 0
    failures = 0
    usable = 0
    base_points = fibered.base_measure.sample_rationals(rng_from_seed(seed), samples)
    for point in base_points:
        try:
            fiber = fibered.fiber(point)
            verdict = detect_eigenvalue(fiber, observable, angle, N,
                                        threshold=threshold,
                                        seed=seed, samples=1024)
        except Exception as exc:  # noqa: BLE001 - per-fiber failures are data
            failures += 1
            entries.append({"base_point": [scalar_str(c) for c in point],
                            "error": str(exc)})
            continue
        usable += 1
        witnessed += int(verdict.witnessed)
        entries.append({"base_point": [scalar_str(c) for c in point],
                        "mass": verdict.mass, "witnessed": verdict.witnessed})
    fraction = witnessed / usable if usable else 0.0

    flat_verdict = None
    coherent = None
    if fibered.flat is not None and fibered.flat_observable is not None:
        try:
            flat_verdict = detect_eigenvalue(fibered.flat, fibered.flat_observable,
                                             angle, N, threshold=threshold,
                                             seed=seed, samples=4096)
            coherent = (not flat_verdict.witnessed) or fraction > 0
        except UnsupportedOperationError:
            flat_verdict = None
    return FiberScanReport(
        witness_fraction=fraction,
        sampled=samples,
        failures=failures,
        per_fiber=entries,
        flat_verdict=flat_verdict,
        coherent=coherent,
    )

"""Lines near the origin, their children under cocycle matrices, and the Veech criterion.

A line is stored exactly: a rational point and a rational direction.  Points
of the original line keep their parameter ``s`` through the whole process,
since ``A (P + s U) - c = (A P - c) + s (A U)``; a lineage is therefore an
interval of ``s`` together with its current affine data.  Interval ends are
square roots and live in mpfr at a precision sized to the data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import numpy as np

from . import intlinalg
from .arith import QuadraticNumber, nearest_integer
from .cocycle import _deviation_result, clopper_pearson, sample_stream
from .combinatorics import Permutation, in_H
from .errors import CapExceededError, InputError, NotInHError
from .fastorbit import MODE_PRODUCT, KernelTables, pseudo_orbit, return_matrix
from .iet import LengthVector
from .rauzy import ESCAPE_CAP, ReturnWalker, SimplexSystem, positive_path

POPULATION_CAP = 10**4
DEFAULT_DELTA = 0.05
DEFAULT_N = 5
DEFAULT_TOL = 1e-3
EXCLUDED = "excluded: (1,...,1) not in H(pi)"
CANDIDATE = "eigenvalue-candidate"
NOT_CANDIDATE = "not-candidate"


def distance_to_lattice(v) -> float:
    """Euclidean distance from v to Z^d (exact residues, float result)."""
    total = 0.0
    for x in v:
        r = x - nearest_integer(x)
        total += float(r) ** 2
    return math.sqrt(total)


def _reduce(v):
    """v minus its nearest lattice point, kept exact."""
    return [x - nearest_integer(x) for x in v]


def _frac_vec(v) -> tuple:
    try:
        return tuple(x if isinstance(x, Fraction) else Fraction(x) for x in v)
    except TypeError as exc:
        raise InputError(f"expected rational coordinates, got {v}") from exc


def _dot(a, b):
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


# --------------------------------------------------------------------------- lines


@dataclass(frozen=True)
class LineSegment:
    """A line {offset + s direction} not through 0, direction in the closed positive cone.

    ``offset`` is the point closest to 0 (so it is orthogonal to
    ``direction``) and ``norm`` its length.  Both vectors are exact rationals;
    ``direction`` is stored as given, ``unit`` is its float normalization.
    """

    direction: tuple
    offset: tuple
    norm: float

    @classmethod
    def through(cls, point, direction) -> LineSegment:
        u = _frac_vec(direction)
        p = _frac_vec(point)
        if len(u) != len(p):
            raise InputError("point and direction have different lengths")
        if any(x < 0 for x in u) or all(x == 0 for x in u):
            raise InputError("direction must be a nonzero vector with nonnegative entries")
        uu = _dot(u, u)
        t = _dot(p, u) / uu
        off = tuple(x - t * y for x, y in zip(p, u))
        n2 = _dot(off, off)
        if n2 == 0:
            raise InputError("line passes through the origin")
        return cls(u, off, math.sqrt(float(n2)))

    @property
    def d(self) -> int:
        return len(self.direction)

    @property
    def unit(self) -> np.ndarray:
        u = np.array([float(x) for x in self.direction])
        return u / np.linalg.norm(u)

    @property
    def norm_squared(self) -> Fraction:
        return _dot(self.offset, self.offset)

    def image(self, a_mat, c=None) -> LineSegment:
        """The line A.J - c."""
        p = [sum((m * x for m, x in zip(row, self.offset)), Fraction(0)) for row in a_mat]
        if c is not None:
            p = [x - ci for x, ci in zip(p, c)]
        u = [sum((m * x for m, x in zip(row, self.direction)), Fraction(0)) for row in a_mat]
        return LineSegment.through(p, u)

    def to_json(self) -> dict:
        return {"direction": [str(x) for x in self.direction], "offset": [str(x) for x in self.offset],
                "norm": self.norm}


@dataclass(frozen=True)
class ChildSet:
    trivial: LineSegment | None
    nontrivial: tuple  # of (LineSegment, lattice point)

    @property
    def count(self) -> int:
        """phi_delta(A, J): the number of non-trivial children."""
        return len(self.nontrivial)

    @property
    def anchors(self) -> set:
        return {c for _, c in self.nontrivial}

    @property
    def dies(self) -> bool:
        return self.trivial is None and not self.nontrivial


# --------------------------------------------------------------------------- segment geometry


class _Explosion(Exception):
    pass


def _precision_for(*ints) -> int:
    big = max((abs(int(x)).bit_length() for x in ints), default=1)
    return 2 * big + 128


def _ball_interval(p, u, delta2, lo, hi):
    """{s in (lo, hi) : |p + s u|^2 < delta^2} in the current mpfr context, or None."""
    uu = sum(x * x for x in u)
    pu = sum(x * y for x, y in zip(p, u))
    pp = sum(x * x for x in p)
    if uu == 0:
        return (lo, hi) if pp < delta2 else None
    disc = delta2 * uu - (pp * uu - pu * pu)
    if disc <= 0:
        return None
    centre = -pu / uu
    half = gmpy2.sqrt(disc) / uu
    a, b = max(lo, centre - half), min(hi, centre + half)
    return (a, b) if a < b else None


def _anchors(p, u, lo, hi, delta, delta2, budget):
    """Lattice points c with B_delta(c) meeting {p + s u : lo < s < hi}, with their s-intervals.

    Windows are cut one coordinate at a time, largest |u_i| first, so the
    search only visits integers whose slab meets the segment.  ``budget``
    bounds the number of windows explored (``_Explosion`` beyond it).
    """
    d = len(p)
    order = sorted(range(d), key=lambda i: -abs(u[i]))
    found = []
    count = [0]

    def rec(idx, a, b, partial):
        if idx == d:
            c = [0] * d
            for i, ci in zip(order, partial):
                c[i] = ci
            iv = _ball_interval([x - ci for x, ci in zip(p, c)], u, delta2, a, b)
            if iv is not None:
                found.append((tuple(c), iv))
            return
        i = order[idx]
        x0, x1 = p[i] + a * u[i], p[i] + b * u[i]
        if x1 < x0:
            x0, x1 = x1, x0
        for ci in range(int(gmpy2.ceil(x0 - delta)), int(gmpy2.floor(x1 + delta)) + 1):
            count[0] += 1
            if count[0] > budget:
                raise _Explosion
            if u[i] == 0:
                if abs(p[i] - ci) < delta:
                    rec(idx + 1, a, b, partial + [ci])
                continue
            w0 = (ci - delta - p[i]) / u[i]
            w1 = (ci + delta - p[i]) / u[i]
            if w1 < w0:
                w0, w1 = w1, w0
            na, nb = max(a, w0), min(b, w1)
            if na < nb:
                rec(idx + 1, na, nb, partial + [ci])

    rec(0, lo, hi, [])
    return found


def _check_matrix(a_mat, d):
    if len(a_mat) != d or any(len(r) != d for r in a_mat):
        raise InputError(f"matrix must be {d} x {d}")
    if any(x < 0 for r in a_mat for x in r):
        raise InputError("matrix entries must be nonnegative")
    if abs(intlinalg.det(a_mat)) != 1:
        raise InputError("matrix must be unimodular")


def _check_delta(delta):
    if not 0 < delta < 0.1:
        raise InputError("need 0 < delta < 1/10")


def children(J: LineSegment, a_mat, delta: float, budget: int | None = None) -> ChildSet:
    """Trivial and non-trivial children of J under A at scale delta."""
    _check_delta(delta)
    a_mat = [[int(x) for x in r] for r in a_mat]
    _check_matrix(a_mat, J.d)
    dl = Fraction(delta)
    if not J.norm_squared < dl * dl:
        raise InputError("need |J| < delta")
    image = J.image(a_mat)
    trivial = image if image.norm_squared < dl * dl else None
    num, den = _common(J.offset, J.direction)
    p_int = intlinalg.matvec(a_mat, num[0])
    u_int = intlinalg.matvec(a_mat, num[1])
    bits = _precision_for(*p_int, *u_int, den, dl.numerator, dl.denominator)
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        p = [gmpy2.mpfr(x) / den for x in p_int]
        u = [gmpy2.mpfr(x) / den for x in u_int]
        dm = gmpy2.mpfr(dl.numerator) / dl.denominator
        s0 = _segment_half_length(J, dl)
        found = _anchors(p, u, -s0, s0, dm, dm * dm, budget or 10**12)
    kids = []
    for c, _ in sorted(found):
        if any(c):
            kids.append((J.image(a_mat, c), c))
    return ChildSet(trivial, tuple(kids))


def _common(offset, direction):
    """Integer numerators over one common denominator."""
    den = math.lcm(*(x.denominator for x in offset + direction))
    return ([int(x * den) for x in offset], [int(x * den) for x in direction]), den


def _segment_half_length(J: LineSegment, dl: Fraction):
    """s-range of J cap B_delta(0) with J(s) = offset + s direction (mpfr)."""
    uu = _dot(J.direction, J.direction)
    rad = (dl * dl - J.norm_squared) / uu
    return gmpy2.sqrt(gmpy2.mpfr(rad.numerator) / rad.denominator)


def sample_anchors(J: LineSegment, a_mat, delta: float, n_points: int, rng) -> set:
    """Brute-force oracle: lattice anchors c != 0 hit by sampled points of A.(J cap B_delta(0))."""
    s0 = float(_segment_half_length(J, Fraction(delta)))
    s = rng.uniform(-s0, s0, n_points)
    off = np.array([float(x) for x in J.offset])
    u = np.array([float(x) for x in J.direction])
    a = np.array(a_mat, dtype=float)
    pts = (off[None, :] + s[:, None] * u[None, :]) @ a.T
    near = np.floor(pts + 0.5)
    dist = np.linalg.norm(pts - near, axis=1)
    hits = near[(dist < delta) & np.any(near != 0, axis=1)]
    return {tuple(int(x) for x in row) for row in hits}


# --------------------------------------------------------------------------- orbits of matrices


def _visit_matrices(sys: SimplexSystem, point, n: int, rng=None, cap: int = ESCAPE_CAP):
    """Yield the exact return matrices of the first n Delta-returns from ``point``.

    Exact points follow their true orbit.  Anything else runs as a compiled
    double-precision pseudo-orbit whose streaks are replayed exactly.
    """
    if isinstance(point, LengthVector) and point.arithmetic.exact:
        walker = ReturnWalker(sys, point, None, cap)
        for _ in range(n):
            yield walker.step()[0]
        return
    x = point.as_floats() if isinstance(point, LengthVector) else [float(v) for v in point]
    rng = rng if rng is not None else np.random.default_rng(0)
    run = pseudo_orbit(sys, x, n, rng, mode=MODE_PRODUCT, record=True)
    for k in range(n):
        yield return_matrix(sys, run.streaks_of(k))


def weak_stable_membership(sys: SimplexSystem, x0, w, delta: float = DEFAULT_DELTA, n_max: int = 10,
                           N: int = DEFAULT_N, rng=None, cap: int = ESCAPE_CAP):
    """Check |A_k w|_{R^d/Z^d} < delta for k = 1..n_max N along the orbit of x0.

    Returns (survived, first_failure), first_failure being the first return
    index k that fails, or None.
    """
    _check_delta(delta)
    if len(w) != sys.d:
        raise InputError("w has the wrong dimension")
    if not sum(float(x) ** 2 for x in w) < delta**2:
        raise InputError("need |w| < delta")
    v = list(w)
    k = 0
    for b_mat in _visit_matrices(sys, x0, n_max * N, rng, cap):
        k += 1
        v = _reduce([sum((m * x for m, x in zip(row, v) if m), 0 * v[0]) for row in b_mat])
        if not distance_to_lattice(v) < delta:
            return False, k
    return True, None


# --------------------------------------------------------------------------- Veech criterion


@dataclass(frozen=True)
class CriterionResult:
    t: object
    distances: tuple
    verdict: str
    integral: bool

    @property
    def visits_used(self) -> int:
        return len(self.distances)

    @property
    def tail_max(self) -> float:
        return _tail_max(self.distances)


def _tail_max(dist) -> float:
    if not dist:
        return float("nan")
    q = max(1, len(dist) // 4)
    return max(dist[-q:])


def _exact_vector(h, d):
    if len(h) != d:
        raise InputError("h has the wrong dimension")
    out = []
    for x in h:
        if isinstance(x, (int, Fraction, QuadraticNumber)):
            out.append(x)
        elif isinstance(x, str):
            from .arith import parse_exact

            out.append(parse_exact(x))
        else:
            out.append(Fraction(x))
    return out


def _check_h(p: Permutation, h):
    if not in_H(p, h):
        raise NotInHError(f"h = {[str(x) for x in h]} is not in H(pi)")


def _exact_t(t):
    if isinstance(t, (int, Fraction, QuadraticNumber)):
        return t
    if isinstance(t, str):
        from .arith import parse_exact

        return parse_exact(t)
    return Fraction(t)


def veech_criterion_test(x0, p: Permutation, t, h, n_visits: int, system: SimplexSystem | None = None,
                         tol: float = DEFAULT_TOL, rng=None, cap: int = ESCAPE_CAP) -> CriterionResult:
    """Distances |B_{n_k} t h|_{R^d/Z^d} at the first n_visits returns to Delta x {pi}."""
    return _criterion_many(x0, p, [t], h, n_visits, system, tol, rng, cap)[0]


def orbit_system(p: Permutation, x0) -> SimplexSystem:
    """Delta cut out by the first closed positive loop of x0's own orbit, so x0 lies in it."""
    if not isinstance(x0, LengthVector):
        x0 = LengthVector.of([Fraction(float(v)) for v in x0])
    return SimplexSystem(positive_path(p, x0, cap=10**6, closed=True))


def _criterion_many(x0, p, ts, h, n_visits, system, tol, rng, cap):
    if n_visits < 1:
        raise InputError("need at least one visit")
    sys = system or orbit_system(p, x0)
    if sys.permutation != p:
        raise InputError("system is based at a different permutation")
    hv = _exact_vector(h, p.d)
    _check_h(p, hv)
    tv = [_exact_t(t) for t in ts]
    vecs = [_reduce([t * x for x in hv]) for t in tv]
    integral = [all(x == 0 for x in v) for v in vecs]
    dists = [[] for _ in tv]
    for b_mat in _visit_matrices(sys, x0, n_visits, rng, cap):
        for i, v in enumerate(vecs):
            v = _reduce([sum((m * x for m, x in zip(row, v) if m), 0 * v[0]) for row in b_mat])
            vecs[i] = v
            dists[i].append(distance_to_lattice(v))
    out = []
    for t, dist, integ in zip(tv, dists, integral):
        verdict = CANDIDATE if _tail_max(dist) < tol else NOT_CANDIDATE
        out.append(CriterionResult(t, tuple(dist), verdict, integ))
    return out


@dataclass(frozen=True)
class ScanRow:
    t: object
    visits_used: int
    tail_max_distance: float
    verdict: str
    integral: bool = False


@dataclass(frozen=True)
class ScanResult:
    rows: tuple
    short_circuited: bool

    @property
    def candidates(self) -> list:
        return [r.t for r in self.rows if r.verdict == CANDIDATE]

    @property
    def non_integral_candidates(self) -> list:
        return [r.t for r in self.rows if r.verdict == CANDIDATE and not r.integral]


def ones_in_H(p: Permutation) -> bool:
    return in_H(p, [1] * p.d)


def weak_mixing_scan(x0, p: Permutation, t_grid, n_visits: int, system: SimplexSystem | None = None,
                     tol: float = DEFAULT_TOL, rng=None, cap: int = ESCAPE_CAP) -> ScanResult:
    """Veech criterion with h = (1,...,1) over a grid of t (one shared orbit)."""
    ts = list(t_grid)
    if not ones_in_H(p):
        return ScanResult(tuple(ScanRow(t, 0, float("nan"), EXCLUDED) for t in ts), True)
    res = _criterion_many(x0, p, ts, [1] * p.d, n_visits, system, tol, rng, cap)
    return ScanResult(tuple(ScanRow(r.t, r.visits_used, r.tail_max, r.verdict, r.integral) for r in res), False)


def uniform_t_grid(n: int) -> list[Fraction]:
    """Midpoints (2i+1)/(2n) of a uniform partition of (0, 1)."""
    return [Fraction(2 * i + 1, 2 * n) for i in range(n)]


# --------------------------------------------------------------------------- survival


@dataclass(frozen=True)
class SurvivalStats:
    m_values: tuple
    p_hat: tuple
    ci_low: tuple
    ci_high: tuple
    fit: tuple  # (log C_hat, kappa_hat)
    kappa_ci: tuple
    samples: int
    flagged: int
    delta: float
    N: int
    seed: int
    indicator: np.ndarray = field(repr=False, compare=False)

    @property
    def kappa(self) -> float:
        return self.fit[1]

    @property
    def nonincreasing(self) -> bool:
        return all(a >= b for a, b in zip(self.p_hat, self.p_hat[1:]))

    def rows(self) -> list[dict]:
        return [{"m": m, "p_hat": p, "ci_low": lo, "ci_high": hi}
                for m, p, lo, hi in zip(self.m_values, self.p_hat, self.ci_low, self.ci_high)]


def _vol_ball(k: int, r: float) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1) * r**k


def _float_unit(vec_int) -> np.ndarray:
    shift = max(0, max(abs(x) for x in vec_int).bit_length() - 60)
    v = np.array([float(x >> shift) if x >= 0 else -float((-x) >> shift) for x in vec_int])
    return v / np.linalg.norm(v)


def _run_sample(sys, J, delta, n_returns, cap, rng, tables):
    """Exact lineage tracking along one pseudo-orbit.

    Returns (alive count after each return, flagged_at); flagged_at is the
    return index where the population exceeded ``cap`` (or was predicted to).
    """
    d = sys.d
    dl = Fraction(delta)
    (p_num, u_num), den = _common(J.offset, J.direction)
    dnum, dden = dl.numerator, dl.denominator
    lam = sys.sample_array(rng, 1)[0]
    pieces = None  # list of (p integer numerators, lo, hi)
    tube = _vol_ball(d - 1, delta)
    ball = _vol_ball(d, delta)
    alive = []
    with gmpy2.context(gmpy2.get_context(), precision=128):
        s0 = _segment_half_length(J, dl)
    pieces = [(p_num, s0 * -1, s0)]
    u = u_num
    for k in range(1, n_returns + 1):
        unit = _float_unit(u)
        run = pseudo_orbit(sys, lam, 1, rng, frame=unit, mode=MODE_PRODUCT, record=True, tables=tables)
        lam = run.final_point
        gain = math.exp(min(run.values[0, 0], 700.0))
        u_len = float(np.linalg.norm(np.array([float(x) for x in u]))) if max(abs(x) for x in u) < 2**900 else math.inf
        predicted = sum(float(hi - lo) * u_len / den * gain * tube + ball for _, lo, hi in pieces)
        if not predicted < cap:
            return alive, k
        b_mat = return_matrix(sys, run.streaks_of(0))
        u = intlinalg.matvec(b_mat, u)
        new = []
        bits = _precision_for(*u, den, dnum, dden) + 64
        with gmpy2.context(gmpy2.get_context(), precision=bits):
            dm = gmpy2.mpfr(dnum) / dden
            um = [gmpy2.mpfr(x) / den for x in u]
            for p_int, lo, hi in pieces:
                p2 = intlinalg.matvec(b_mat, p_int)
                pm = [gmpy2.mpfr(x) / den for x in p2]
                try:
                    found = _anchors(pm, um, gmpy2.mpfr(lo), gmpy2.mpfr(hi), dm, dm * dm, 4 * cap)
                except _Explosion:
                    return alive, k
                for c, (a, b) in found:
                    new.append(([x - den * ci for x, ci in zip(p2, c)], a, b))
                if len(new) > cap:
                    return alive, k
        pieces = new
        alive.append(len(pieces))
        if not pieces:
            break
    return alive, None


def survival_probability(sys: SimplexSystem, J: LineSegment, delta: float = DEFAULT_DELTA, m_max: int = 20,
                         N: int = DEFAULT_N, samples: int = 1000, seed: int = 0, cap: int = POPULATION_CAP,
                         n_boot: int = 400, min_samples: int = 1000) -> SurvivalStats:
    """Monte Carlo estimate of mu(Gamma_delta^m(J)) for m = 0..m_max.

    A sample survives generation m when some lineage of J is still within
    delta of the lattice after each of the first m N returns.  Samples whose
    population exceeds ``cap`` (or is predicted to from the growth of |A u|)
    are flagged and counted as surviving from then on, so flagged runs can
    only make p_hat larger.
    """
    _check_delta(delta)
    if samples < min_samples:
        raise InputError(f"need at least {min_samples} samples")
    if J.d != sys.d:
        raise InputError("line and system have different dimensions")
    if m_max < 1 or N < 1:
        raise InputError("need m_max >= 1 and N >= 1")
    m_values = tuple(range(m_max + 1))
    ind = np.zeros((samples, m_max + 1), dtype=bool)
    flagged = 0
    dl = Fraction(delta)
    if J.norm_squared < dl * dl:
        tables = KernelTables.of(sys)
        for s in range(samples):
            rng = sample_stream(seed, s)
            alive, flag_at = _run_sample(sys, J, delta, m_max * N, cap, rng, tables)
            ind[s, 0] = True
            for m in range(1, m_max + 1):
                k = m * N
                if flag_at is not None and flag_at <= k:
                    ind[s, m] = True
                else:
                    ind[s, m] = len(alive) >= k and alive[k - 1] > 0
            flagged += flag_at is not None
    # nesting holds by construction; assert it
    if np.any(ind[:, 1:] & ~ind[:, :-1]):
        raise AssertionError("survival indicator is not nested in m")
    counts = ind.sum(axis=0)
    p_hat = tuple(float(c / samples) for c in counts)
    cis = [clopper_pearson(int(c), samples) for c in counts]
    grid = list(m_values[1:])
    dev = _deviation_result(ind[:, 1:], grid, delta, seed, sample_stream(seed, samples + 1), n_boot)
    kappa_ci = (-dev.slope_ci[1], -dev.slope_ci[0])
    return SurvivalStats(m_values, p_hat, tuple(c[0] for c in cis), tuple(c[1] for c in cis),
                         (dev.intercept, -dev.slope), kappa_ci, samples, flagged, delta, N, seed, ind)


def random_line(d: int, norm: float, rng, bits: int = 40) -> LineSegment:
    """Seeded line with a positive dyadic direction at distance ~norm (to 2^-bits) from 0."""
    if norm <= 0:
        raise InputError("norm must be positive")
    scale = 1 << bits
    u = [Fraction(int(x * scale) + 1, scale) for x in rng.dirichlet(np.ones(d))]
    g = [Fraction(int(x * scale), scale) for x in rng.standard_normal(d)]
    J = LineSegment.through(g, u)
    factor = Fraction(round(norm / J.norm * scale), scale)
    return LineSegment.through([x * factor for x in J.offset], u)

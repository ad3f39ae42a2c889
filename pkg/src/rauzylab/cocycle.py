"""The accelerated cocycle on H(pi): Lyapunov spectra and large-deviation experiments.

Time is counted in returns to Delta; ``mean_return_time`` converts to the
log-length clock (sum of r over returns).

Single steps (:func:`cocycle_step`) are exact: the integer return matrix is
applied to the frame at a working precision wide enough for its condition
number.  Long runs go through the compiled double-precision pseudo-orbit of
:mod:`rauzylab.fastorbit`.  There the upper half of the spectrum comes from a
frame of g vectors in H(pi) and the lower half from g vectors moved by the
inverse transpose, whose top exponents are minus the bottom ones of B; double
precision cannot resolve contracting directions directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
import numpy as np
from scipy import stats

from . import intlinalg
from .combinatorics import omega_maps, singularity_profile
from .errors import ConsistencyError, InputError, PrecisionError
from .fastorbit import MODE_PRODUCT, MODE_QR, KernelTables, pseudo_orbit
from .iet import LengthVector
from .rauzy import ESCAPE_CAP, ReturnWalker, SimplexSystem

KERNEL_CAP = 10**9

H_TOL = 1e-10


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True, eq=False)
class HCoordinates:
    """Integer basis K of H(pi) and the unimodular completion used to read off A."""

    basis: list
    completion: list
    completion_inverse: list
    pivot: int
    orthonormal: np.ndarray
    b_vectors: np.ndarray
    b_orthogonal: tuple = ()

    @classmethod
    def of(cls, p) -> HCoordinates:
        prof = singularity_profile(p)
        rows = list(prof.b_vectors.values())
        basis, u, pivot = intlinalg.kernel_lattice(rows, p.d)
        return cls(
            basis, u, intlinalg.inverse_unimodular(u), pivot,
            omega_maps(p).h_basis, np.array(rows, dtype=float), _orthogonal_rows(rows),
        )

    @property
    def rank(self) -> int:
        return len(self.basis[0]) if self.basis else 0

    def restrict(self, b_mat) -> list[list[int]]:
        """Integer matrix A with B K = K A."""
        bk = intlinalg.matmul(b_mat, self.basis)
        coords = intlinalg.matmul(self.completion_inverse, bk)
        if any(x != 0 for row in coords[: self.pivot] for x in row):
            raise ConsistencyError("return matrix does not preserve H(pi)")
        return coords[self.pivot:]

    def projector(self) -> np.ndarray:
        q = self.orthonormal
        return q @ q.T

    def residual(self, vectors: np.ndarray) -> float:
        """Largest |b^s . v| / |v| over the columns v."""
        norms = np.linalg.norm(vectors, axis=0)
        return float(np.max(np.abs(self.b_vectors @ vectors) / norms)) if self.b_vectors.size else 0.0


def _orthogonal_rows(rows) -> tuple:
    """Exact Gram-Schmidt of integer rows (dependent rows dropped), unnormalized."""
    out = []
    for r in rows:
        v = [Fraction(x) for x in r]
        for u in out:
            c = sum(a * b for a, b in zip(v, u)) / sum(a * a for a in u)
            v = [a - c * b for a, b in zip(v, u)]
        if any(v):
            out.append(v)
    return tuple(tuple(v) for v in out)


@dataclass(eq=False)
class CocycleState:
    point: LengthVector
    step: int
    frame: np.ndarray
    log_norms: np.ndarray
    return_times: list = field(default_factory=list)
    induction_steps: int = 0


def initial_state(sys: SimplexSystem, point: LengthVector) -> CocycleState:
    if not sys.contains(point):
        raise InputError("initial point is not in Delta")
    q = omega_maps(sys.permutation).h_basis
    return CocycleState(point.normalized(), 0, q.copy(), np.zeros(q.shape[1]))


def cocycle_step(state: CocycleState, sys: SimplexSystem, h: HCoordinates | None = None,
                 cap: int = ESCAPE_CAP, rng=None):
    """Advance to the next Delta-return; returns (state', A) with A the integer matrix on H.

    Exact points follow the true orbit.  Float points follow it only while
    their bits last; pass ``rng`` to continue as a perturbed pseudo-orbit.
    """
    h = h or HCoordinates.of(sys.permutation)
    walker = ReturnWalker(sys, state.point, rng, cap)
    b_mat, r, n = walker.step()
    point = walker.point
    frame, logs = _push_frame(state.frame, b_mat, h.b_orthogonal)
    new = CocycleState(
        point, state.step + 1, frame, state.log_norms + logs,
        state.return_times + [r], state.induction_steps + n,
    )
    return new, h.restrict(b_mat)


def _push_frame(frame, b_mat, b_orthogonal=()):
    """Apply the integer matrix B to a float frame and re-orthonormalize.

    The projection onto H, the product and Gram-Schmidt all run in mpfr with
    about twice the bit length of B plus a margin, so contracting directions
    survive and are not swamped by rounding errors off H.
    """
    d, k = frame.shape
    bits = 2 * max(1, intlinalg.max_entry(b_mat).bit_length()) + 96
    with gmpy2.context(gmpy2.get_context(), precision=bits):
        normal = [([gmpy2.mpfr(gmpy2.mpq(x)) for x in u], gmpy2.mpfr(gmpy2.mpq(sum(x * x for x in u))))
                  for u in b_orthogonal]
        cols = []
        for j in range(k):
            v = [gmpy2.mpfr(float(x)) for x in frame[:, j]]
            for u, uu in normal:
                c = sum((a * b for a, b in zip(v, u)), gmpy2.mpfr(0)) / uu
                v = [a - c * b for a, b in zip(v, u)]
            cols.append([sum((gmpy2.mpz(b) * x for b, x in zip(row, v) if b), gmpy2.mpfr(0)) for row in b_mat])
        qs, logs = [], np.empty(k)
        for j, v in enumerate(cols):
            for q in qs:
                c = sum((a * b for a, b in zip(q, v)), gmpy2.mpfr(0))
                v = [a - c * b for a, b in zip(v, q)]
            nrm = gmpy2.sqrt(sum((a * a for a in v), gmpy2.mpfr(0)))
            if nrm == 0:
                raise PrecisionError("frame collapsed under the return matrix")
            logs[j] = float(gmpy2.log(nrm))
            qs.append([a / nrm for a in v])
        out = np.array([[float(q[i]) for q in qs] for i in range(d)])
    return out, logs


@dataclass(frozen=True)
class LyapunovEstimate:
    exponents: tuple
    steps: int
    ci_halfwidth: tuple
    pair_sums: tuple
    pair_halfwidth: tuple
    mean_return_time: float
    mean_induction_steps: float
    max_h_residual: float
    time_unit: str = "delta-return"

    @property
    def genus(self) -> int:
        return len(self.exponents) // 2

    def pairing_ok(self, factor: float = 3.0) -> bool:
        return all(abs(s) <= factor * w for s, w in zip(self.pair_sums, self.pair_halfwidth))

    def n_significantly_positive(self, factor: float = 3.0) -> int:
        return sum(1 for t, w in zip(self.exponents, self.ci_halfwidth) if t > factor * w)

    def rescaled(self) -> tuple:
        """Exponents per unit of log-length time."""
        return tuple(t / self.mean_return_time for t in self.exponents)


def lyapunov_spectrum(
    sys: SimplexSystem,
    seed: int,
    n_steps: int,
    n_batches: int = 50,
    cap: int = KERNEL_CAP,
) -> LyapunovEstimate:
    """Exponents of the cocycle restricted to H(pi), per Delta-return.

    The run starts at a seeded Lebesgue point of Delta.  Half-widths are 95%
    batch-means intervals; the pair sums theta_i + theta_{2g+1-i} get their
    own intervals from the same batches.
    """
    if n_steps < 1000:
        raise InputError("n_steps must be at least 1000")
    if n_steps < 2 * n_batches:
        raise InputError("need at least two returns per batch")
    h = HCoordinates.of(sys.permutation)
    k = h.rank
    g = k // 2
    rng = sample_stream(seed, 0)
    point = sys.sample_array(rng, 1)[0]
    frame = h.orthonormal @ np.linalg.qr(rng.standard_normal((k, g)))[0]
    dual = np.linalg.qr(rng.standard_normal((sys.d, g)))[0]
    run = pseudo_orbit(sys, point, n_steps, rng, frame=frame, dual=dual, mode=MODE_QR,
                       projector=h.projector(), cap=cap)
    increments = np.hstack([run.values[:, :g], -run.dual_values[:, ::-1]])
    exps = increments.mean(axis=0)
    batches = _batch_means(increments, n_batches)
    half = _halfwidth(batches)
    pairs = batches[:, :g] + batches[:, ::-1][:, :g]
    return LyapunovEstimate(
        tuple(float(x) for x in exps), n_steps, tuple(float(x) for x in half),
        tuple(float(x) for x in pairs.mean(axis=0)), tuple(float(x) for x in _halfwidth(pairs)),
        float(run.return_times.mean()), float(run.induction_steps.mean()), h.residual(run.frame),
    )


def _batch_means(x: np.ndarray, n_batches: int) -> np.ndarray:
    size = len(x) // n_batches
    return x[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)


def _halfwidth(batches: np.ndarray) -> np.ndarray:
    nb = batches.shape[0]
    return stats.t.ppf(0.975, nb - 1) * batches.std(axis=0, ddof=1) / math.sqrt(nb)


# --------------------------------------------------------------------------- large deviations


@dataclass(frozen=True)
class DeviationRow:
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    hits: int
    samples: int


@dataclass(frozen=True)
class DeviationResult:
    rows: tuple
    slope: float
    slope_ci: tuple
    intercept: float
    threshold: float
    seed: int

    @property
    def significantly_negative(self) -> bool:
        return self.slope_ci[1] < 0


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def _log_products(sys, seed, samples, n_max, start_matrix, cap):
    """For each sample, log|B_n ... B_1 M0| (operator norm) for n = 0..n_max.

    ``start_matrix`` is d x k (the frame the products act on).
    """
    out = np.empty((samples, n_max + 1))
    tables = KernelTables.of(sys)
    log0 = math.log(np.linalg.norm(start_matrix, 2))
    for s in range(samples):
        rng = sample_stream(seed, s)
        point = sys.sample_array(rng, 1)[0]
        run = pseudo_orbit(sys, point, n_max, rng, frame=start_matrix, mode=MODE_PRODUCT,
                           cap=cap, tables=tables)
        out[s, 0] = log0
        out[s, 1:] = run.values[:, 0]
    return out


def _deviation_result(indicator: np.ndarray, n_grid, threshold, seed, rng_boot, n_boot=400) -> DeviationResult:
    samples = indicator.shape[0]
    hits = indicator.sum(axis=0)
    rows = []
    for n, k in zip(n_grid, hits):
        lo, hi = clopper_pearson(int(k), samples)
        rows.append(DeviationRow(int(n), float(k / samples), lo, hi, int(k), samples))
    slope, intercept = _log_linear_fit(np.asarray(n_grid), hits / samples)
    boot = []
    for _ in range(n_boot):
        idx = rng_boot.integers(0, samples, samples)
        b = _log_linear_fit(np.asarray(n_grid), indicator[idx].mean(axis=0))[0]
        if np.isfinite(b):
            boot.append(b)
    ci = tuple(float(x) for x in np.percentile(boot, [2.5, 97.5])) if boot else (float("nan"),) * 2
    return DeviationResult(tuple(rows), slope, ci, intercept, threshold, seed)


def _log_linear_fit(n, p) -> tuple[float, float]:
    ok = p > 0
    if ok.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(n[ok], np.log(p[ok]), 1)
    return float(slope), float(intercept)


def anomalous_growth_experiment(
    sys: SimplexSystem,
    L_tilde: float,
    n_grid,
    samples: int,
    seed: int = 0,
    cap: int = KERNEL_CAP,
) -> DeviationResult:
    """Fraction of Lebesgue samples of Delta with |A_n| >= exp(L_tilde n), A_n on H(pi)."""
    n_grid = sorted(int(n) for n in n_grid)
    _check_samples(samples, n_grid)
    h = HCoordinates.of(sys.permutation)
    logs = _log_products(sys, seed, samples, max(max(n_grid), 1), h.orthonormal, cap)
    # |Id| = 1 and the comparison at n = 0 is 0 >= 0
    ind = np.array([[logs[s, n] >= L_tilde * n - 1e-12 for n in n_grid] for s in range(samples)])
    return _deviation_result(ind, n_grid, L_tilde, seed, sample_stream(seed, samples + 1))


def contraction_deviation_experiment(
    sys: SimplexSystem,
    c_prime: float,
    n_grid,
    samples: int,
    v=None,
    seed: int = 0,
    cap: int = KERNEL_CAP,
) -> DeviationResult:
    """Fraction of samples with |B_n ... B_1 v| <= exp(c_prime n) on the full cocycle."""
    n_grid = sorted(int(n) for n in n_grid)
    _check_samples(samples, n_grid)
    d = sys.d
    v = np.full(d, 1 / math.sqrt(d)) if v is None else np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1) > 1e-12:
        raise InputError("v must be a unit vector")
    logs = _log_products(sys, seed, samples, max(max(n_grid), 1), v.reshape(d, 1), cap)
    ind = np.array([[logs[s, n] <= c_prime * n + 1e-12 for n in n_grid] for s in range(samples)])
    return _deviation_result(ind, n_grid, c_prime, seed, sample_stream(seed, samples + 1))


def _check_samples(samples, n_grid):
    if samples < 1:
        raise InputError("need at least one sample")
    if not n_grid or n_grid[0] < 0:
        raise InputError("n grid must be nonempty and nonnegative")

"""Rauzy diagrams, induction/renormalization, cocycle matrices, and the first return to a simplex.

Conventions
-----------
* ``alpha_t`` is the last letter of the top row, ``alpha_b`` the last of the bottom row.
* A *top* arrow is taken when ``lambda[alpha_t] > lambda[alpha_b]``; then
  ``lambda[alpha_t] -= lambda[alpha_b]`` and ``alpha_b`` is moved to sit right
  after ``alpha_t`` in the bottom row.  Its matrix is ``1 + E[alpha_b, alpha_t]``.
* Bottom arrows are the mirror image, with matrix ``1 + E[alpha_t, alpha_b]``.
* A path matrix is ``B = B_m ... B_1``, so ``lambda = B^T lambda_after`` and
  appending an arrow is a single row operation on ``B``.

Integer matrices are always exact Python ints; only lengths use the
:class:`~rauzylab.arith.Arithmetic` backend.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import gmpy2
import numpy as np

from . import intlinalg
from .arith import RATIONAL, Arithmetic, QuadraticNumber, log_of, random_simplex_weights
from .combinatorics import Permutation, genus, is_irreducible, singularity_profile
from .errors import CapExceededError, ConsistencyError, EscapeError, InputError, PrecisionError, TieError
from .iet import LengthVector

TOP, BOTTOM = "top", "bottom"
KINDS = (TOP, BOTTOM)
CLASS_CAP = 10**6
ESCAPE_CAP = 10**5
GUARD_BITS = 64
MAX_PRECISION_BITS = 1 << 17


# --------------------------------------------------------------------------- moves


def top_op(p: Permutation) -> Permutation:
    at, ab = p.top[-1], p.bottom[-1]
    rest = list(p.bottom[:-1])
    k = rest.index(at)
    rest.insert(k + 1, ab)
    return Permutation(p.alphabet, p.top, tuple(rest))


def bottom_op(p: Permutation) -> Permutation:
    at, ab = p.top[-1], p.bottom[-1]
    rest = list(p.top[:-1])
    k = rest.index(ab)
    rest.insert(k + 1, at)
    return Permutation(p.alphabet, tuple(rest), p.bottom)


def apply_move(p: Permutation, kind: str) -> Permutation:
    if kind == TOP:
        return top_op(p)
    if kind == BOTTOM:
        return bottom_op(p)
    raise InputError(f"unknown arrow kind {kind!r}")


def undo_move(p: Permutation, kind: str) -> Permutation:
    """Inverse surgery: the letter placed after the fixed last letter goes back to the end."""
    if kind == TOP:
        row, anchor = list(p.bottom), p.top[-1]
    else:
        row, anchor = list(p.top), p.bottom[-1]
    k = row.index(anchor)
    if k == len(row) - 1:
        raise InputError(f"{p} is not the target of a {kind} arrow")
    moved = row.pop(k + 1)
    row.append(moved)
    if kind == TOP:
        return Permutation(p.alphabet, p.top, tuple(row))
    return Permutation(p.alphabet, tuple(row), p.bottom)


def arrow_letters(p: Permutation, kind: str) -> tuple[int, int]:
    """(row index that receives, row index that is added) for the arrow's matrix."""
    t, b = p.index[p.top[-1]], p.index[p.bottom[-1]]
    return (b, t) if kind == TOP else (t, b)


@dataclass(frozen=True)
class RauzyArrow:
    source: Permutation
    kind: str
    target: Permutation

    @property
    def winner(self) -> str:
        return self.source.top[-1] if self.kind == TOP else self.source.bottom[-1]

    @property
    def loser(self) -> str:
        return self.source.bottom[-1] if self.kind == TOP else self.source.top[-1]

    @cached_property
    def matrix(self) -> tuple:
        d = self.source.d
        i, j = arrow_letters(self.source, self.kind)
        m = intlinalg.identity(d)
        m[i][j] = 1
        return tuple(tuple(r) for r in m)


def make_arrow(p: Permutation, kind: str) -> RauzyArrow:
    return RauzyArrow(p, kind, apply_move(p, kind))


# --------------------------------------------------------------------------- classes


@dataclass(frozen=True, eq=False)
class RauzyClass:
    """Members in BFS order from the root plus transition tables for fast orbits."""

    members: tuple
    index: dict
    top_next: tuple
    bottom_next: tuple
    t_letter: tuple
    b_letter: tuple

    def __len__(self):
        return len(self.members)

    def __contains__(self, p):
        return p in self.index

    @property
    def root(self) -> Permutation:
        return self.members[0]

    @cached_property
    def arrows(self) -> tuple:
        out = []
        for k, p in enumerate(self.members):
            out.append(RauzyArrow(p, TOP, self.members[self.top_next[k]]))
            out.append(RauzyArrow(p, BOTTOM, self.members[self.bottom_next[k]]))
        return tuple(out)

    def tables(self):
        return self.t_letter, self.b_letter, self.top_next, self.bottom_next

    @cached_property
    def cycles(self) -> tuple:
        """Per kind and state: the (state, loser) pairs met by repeating that arrow until it cycles."""
        out = []
        for kind, nxt, losers in ((0, self.top_next, self.b_letter), (1, self.bottom_next, self.t_letter)):
            table = []
            for s in range(len(self.members)):
                cyc, u = [], s
                while True:
                    cyc.append((u, losers[u]))
                    u = nxt[u]
                    if u == s:
                        break
                table.append(tuple(cyc))
            out.append(tuple(table))
        return tuple(out)

    def invariants(self) -> dict:
        prof = singularity_profile(self.root)
        return {
            "size": len(self),
            "genus": prof.genus,
            "n_singularities": prof.n_singularities,
            "singularity_orders": sorted(prof.orders),
        }


def rauzy_class(p: Permutation, cap: int = CLASS_CAP) -> RauzyClass:
    p.require_irreducible()
    return _rauzy_class(p, cap)


@lru_cache(maxsize=64)
def _rauzy_class(p: Permutation, cap: int) -> RauzyClass:
    members, index = [p], {p: 0}
    top_next, bottom_next = {}, {}
    queue = deque([p])
    while queue:
        q = queue.popleft()
        for kind, table in ((TOP, top_next), (BOTTOM, bottom_next)):
            r = apply_move(q, kind)
            if r not in index:
                if len(members) >= cap:
                    raise CapExceededError(f"Rauzy class of {p} exceeds {cap} members")
                index[r] = len(members)
                members.append(r)
                queue.append(r)
            table[index[q]] = index[r]
    n = len(members)
    return RauzyClass(
        tuple(members),
        index,
        tuple(top_next[k] for k in range(n)),
        tuple(bottom_next[k] for k in range(n)),
        tuple(q.index[q.top[-1]] for q in members),
        tuple(q.index[q.bottom[-1]] for q in members),
    )


# --------------------------------------------------------------------------- paths


@dataclass(frozen=True, eq=False)
class RauzyPath:
    """A composable sequence of arrows, stored as start + kinds, with its exact matrix."""

    start: Permutation
    kinds: tuple
    end: Permutation
    matrix: tuple

    @classmethod
    def from_kinds(cls, start: Permutation, kinds) -> RauzyPath:
        kinds = tuple(kinds)
        m = intlinalg.identity(start.d)
        p = start
        for kind in kinds:
            i, j = arrow_letters(p, kind)
            m[i] = [x + y for x, y in zip(m[i], m[j])]
            p = apply_move(p, kind)
        return cls(start, kinds, p, tuple(tuple(r) for r in m))

    def __len__(self):
        return len(self.kinds)

    @property
    def arrows(self):
        p = self.start
        for kind in self.kinds:
            a = make_arrow(p, kind)
            yield a
            p = a.target

    def concat(self, other: RauzyPath) -> RauzyPath:
        if other.start != self.end:
            raise InputError("paths do not compose")
        m = intlinalg.matmul(other.matrix, self.matrix)
        return RauzyPath(self.start, self.kinds + other.kinds, other.end, tuple(tuple(r) for r in m))

    @property
    def is_closed(self) -> bool:
        return self.start == self.end

    @property
    def is_positive(self) -> bool:
        return intlinalg.is_positive(self.matrix)

    def matrix_list(self) -> list[list[int]]:
        return [list(r) for r in self.matrix]


def streak_lengths(kinds) -> list[int]:
    """Run lengths of consecutive equal arrow kinds."""
    out = []
    for k in kinds:
        if out and k == prev:
            out[-1] += 1
        else:
            out.append(1)
        prev = k
    return out


# --------------------------------------------------------------------------- single steps


def _check_lengths(lv: LengthVector, p: Permutation):
    if lv.d != p.d:
        raise InputError(f"{lv.d} lengths for a permutation on {p.d} letters")


def induction_step(lv: LengthVector, p: Permutation):
    """One step of Q_R: returns (lambda', p', arrow)."""
    p.require_irreducible()
    _check_lengths(lv, p)
    t, b = p.index[p.top[-1]], p.index[p.bottom[-1]]
    vals = list(lv.values)
    with lv.arithmetic.context():
        if vals[t] > vals[b]:
            kind, vals[t] = TOP, vals[t] - vals[b]
        elif vals[b] > vals[t]:
            kind, vals[b] = BOTTOM, vals[b] - vals[t]
        else:
            raise TieError(f"tie between {p.top[-1]} and {p.bottom[-1]}", step=0)
    arrow = make_arrow(p, kind)
    return LengthVector(tuple(vals), lv.arithmetic), arrow.target, arrow


def renormalization_step(lv: LengthVector, p: Permutation):
    """Q_R followed by projection back to |lambda| = 1."""
    new, q, arrow = induction_step(lv, p)
    return new.normalized(), q, arrow


# --------------------------------------------------------------------------- orbits


@dataclass(frozen=True, eq=False)
class OrbitResult:
    start: Permutation
    initial: LengthVector
    lengths: LengthVector
    permutation: Permutation
    path: RauzyPath
    precision_bits: int | None
    rows: list = field(default_factory=list, repr=False)

    @property
    def steps(self) -> int:
        return len(self.path)


def _to_integers(values):
    """Scale a vector of Fractions to integers (projectively identical)."""
    q = 1
    for v in values:
        q = q * v.denominator // math.gcd(q, v.denominator)
    return [int(v * q) for v in values], q


def _log2_cond(b, binv) -> int:
    return intlinalg.max_entry(b).bit_length() + intlinalg.max_entry(binv).bit_length()


def follow_orbit(
    p: Permutation,
    lv: LengthVector,
    n_steps: int,
    *,
    renormalize: bool = True,
    escalate: bool = True,
    guard_bits: int = GUARD_BITS,
    max_bits: int = MAX_PRECISION_BITS,
    log_rows: bool = False,
    system: SimplexSystem | None = None,
) -> OrbitResult:
    """Run n_steps of Rauzy induction, keeping the exact path matrix.

    In float mode the orbit restarts from the initial data at doubled
    precision whenever log2(|B| |B^-1|) exceeds precision - guard_bits, so the
    returned lengths satisfy lambda_n = (B^T)^-1 lambda_0 to about 2^-guard.
    """
    p.require_irreducible()
    _check_lengths(lv, p)
    cls = rauzy_class(p)
    current = lv
    while True:
        try:
            return _follow(cls, p, lv, current, n_steps, renormalize, escalate, guard_bits, log_rows, system)
        except _Escalate:
            bits = current.arithmetic.precision_bits * 2
            if bits > max_bits:
                raise PrecisionError(
                    f"orbit of {n_steps} steps needs more than {max_bits} bits; raise --precision-bits"
                ) from None
            current = lv.at_precision(bits)


class _Escalate(Exception):
    pass


def _follow(cls, p, initial, lv, n_steps, renormalize, escalate, guard_bits, log_rows, system):
    arith = lv.arithmetic
    tl, bl, tn, bn = cls.tables()
    d = p.d
    scale = None
    if arith.exact and all(isinstance(v, Fraction) for v in lv.values):
        lam, scale = _to_integers(lv.values)
    else:
        lam = list(lv.values)
    b_mat = intlinalg.identity(d)
    b_inv = intlinalg.identity(d) if (escalate and not arith.exact) else None
    sid = cls.index[p]
    kinds = []
    rows = []
    pi_id = sid
    with arith.context():
        for n in range(n_steps):
            t, b = tl[sid], bl[sid]
            x, y = lam[t], lam[b]
            if x > y:
                lam[t] = x - y
                i, j, kind, sid = b, t, TOP, tn[sid]
            elif y > x:
                lam[b] = y - x
                i, j, kind, sid = t, b, BOTTOM, bn[sid]
            else:
                raise TieError(f"tie at step {n + 1}", step=n + 1)
            b_mat[i] = [u + v for u, v in zip(b_mat[i], b_mat[j])]
            kinds.append(kind)
            if b_inv is not None:
                # B <- (1 + E_ij) B  implies  B^-1 <- B^-1 (1 - E_ij): column j -= column i
                for r in b_inv:
                    r[j] -= r[i]
                if n % 16 == 15 and _log2_cond(b_mat, b_inv) > arith.precision_bits - guard_bits:
                    raise _Escalate
            if log_rows:
                ret = system is not None and sid == pi_id and system.contains_values(lam)
                rows.append(_orbit_row(n + 1, kind, j, lam, b_mat, ret, p))
        if scale is not None:
            values = [Fraction(v, scale) for v in lam]
        else:
            values = lam
        out = LengthVector(tuple(values), arith)
        if renormalize:
            out = out.normalized()
    path = RauzyPath(p, tuple(kinds), cls.members[sid], tuple(tuple(r) for r in b_mat))
    return OrbitResult(p, initial, out, cls.members[sid], path, None if arith.exact else arith.precision_bits, rows)


def _orbit_row(step, kind, winner_idx, lam, b_mat, ret, p):
    return {
        "step": step,
        "winner": p.alphabet[winner_idx],
        "kind": kind,
        "lengths": [str(v) for v in lam],
        "matrix_norm": intlinalg.norm_inf(b_mat),
        "returned": bool(ret),
    }


def positive_path(p: Permutation, lv: LengthVector, cap: int = 10**4, closed: bool = False) -> RauzyPath:
    """Follow the orbit until the accumulated matrix is entrywise positive.

    With ``closed=True`` the walk continues until it is also back at ``p``.
    """
    p.require_irreducible()
    _check_lengths(lv, p)
    cls = rauzy_class(p)
    tl, bl, tn, bn = cls.tables()
    arith = lv.arithmetic
    lam = list(lv.values)
    b_mat = intlinalg.identity(p.d)
    zeros = p.d * p.d - p.d
    sid = start = cls.index[p]
    kinds = []
    with arith.context():
        for n in range(cap):
            t, b = tl[sid], bl[sid]
            if lam[t] > lam[b]:
                lam[t] = lam[t] - lam[b]
                i, j, sid = b, t, tn[sid]
                kinds.append(TOP)
            elif lam[b] > lam[t]:
                lam[b] = lam[b] - lam[t]
                i, j, sid = t, b, bn[sid]
                kinds.append(BOTTOM)
            else:
                raise TieError(f"tie at step {n + 1}", step=n + 1)
            row = b_mat[i]
            zeros -= sum(1 for u, v in zip(row, b_mat[j]) if u == 0 and v != 0)
            b_mat[i] = [u + v for u, v in zip(row, b_mat[j])]
            if zeros == 0 and (not closed or sid == start):
                return RauzyPath(p, tuple(kinds), cls.members[sid], tuple(tuple(r) for r in b_mat))
    raise CapExceededError(f"no positive path within {cap} steps")


# --------------------------------------------------------------------------- simplex Delta


@dataclass(frozen=True, eq=False)
class SimplexSystem:
    """The simplex Delta = B0^T P_+ attached to a closed positive path B0 at pi."""

    base_path: RauzyPath

    def __post_init__(self):
        bp = self.base_path
        if not bp.is_closed:
            raise InputError("base path must start and end at the same permutation")
        if not bp.is_positive:
            raise InputError("base path matrix must be entrywise positive")

    @property
    def permutation(self) -> Permutation:
        return self.base_path.start

    @property
    def d(self) -> int:
        return self.permutation.d

    @cached_property
    def rauzy_class(self) -> RauzyClass:
        return rauzy_class(self.permutation)

    @cached_property
    def first_run(self) -> tuple[int, int]:
        """(kind code, length) of the opening run of equal arrows in gamma0."""
        kinds = self.base_path.kinds
        run = streak_lengths(kinds)[0]
        return (0 if kinds[0] == TOP else 1), run

    @cached_property
    def cone_matrix(self) -> list[list[int]]:
        """B0^T: its columns generate Delta."""
        return intlinalg.transpose(self.base_path.matrix)

    @cached_property
    def inverse_cone_matrix(self) -> list[list[int]]:
        return intlinalg.inverse_unimodular(self.cone_matrix)

    @cached_property
    def vertices(self) -> list[list[Fraction]]:
        """Normalized generators of Delta (rows of B0 scaled to sum 1)."""
        return [[Fraction(x, sum(row)) for x in row] for row in self.base_path.matrix]

    @cached_property
    def relative_volume(self) -> Fraction:
        """Lebesgue measure of Delta inside the standard simplex."""
        return Fraction(1, math.prod(sum(r) for r in self.base_path.matrix))

    def coordinates(self, values) -> list:
        return [sum(m * v for m, v in zip(row, values) if m) for row in self.inverse_cone_matrix]

    def contains_values(self, values) -> bool:
        for row in self.inverse_cone_matrix:
            if not sum(m * v for m, v in zip(row, values) if m) > 0:
                return False
        return True

    def contains(self, lv: LengthVector, p: Permutation | None = None) -> bool:
        if p is not None and p != self.permutation:
            return False
        with lv.arithmetic.context():
            return self.contains_values(lv.values)

    def sample(self, rng, arith: Arithmetic = RATIONAL, bits: int | None = None) -> LengthVector:
        """Lebesgue-uniform normalized point of Delta."""
        w = random_simplex_weights(rng, arith, self.d, bits)
        with arith.context():
            verts = [[arith.number(x) for x in v] for v in self.vertices]
            vals = [sum((w[k] * verts[k][i] for k in range(self.d)), arith.number(0)) for i in range(self.d)]
        return LengthVector(tuple(vals), arith)

    def sample_array(self, rng, n: int) -> np.ndarray:
        """n uniform points of Delta as double-precision rows (for Monte Carlo integrals)."""
        w = rng.dirichlet(np.ones(self.d), size=n)
        verts = np.array([[float(x) for x in v] for v in self.vertices])
        return w @ verts

    @classmethod
    def from_seed(cls, p: Permutation, seed: int, tries: int = 16, cap: int = 10**4) -> SimplexSystem:
        """Closed positive path from seeded random lengths.

        Among ``tries`` seeded draws the path with the largest Delta is kept,
        which keeps returns frequent.
        """
        best = None
        for k in range(tries):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
            lv = LengthVector(tuple(random_simplex_weights(rng, RATIONAL, p.d, 128)))
            try:
                path = positive_path(p, lv, cap=cap, closed=True)
            except (CapExceededError, TieError):
                continue
            vol = math.prod(sum(r) for r in path.matrix)
            if best is None or (vol, len(path)) < best[0]:
                best = ((vol, len(path)), path)
        if best is None:
            raise CapExceededError(f"no closed positive path found for {p}")
        return cls(best[1])

    @classmethod
    def largest(cls, p: Permutation, max_len: int = 16) -> SimplexSystem:
        """The closed positive loop of length <= ``max_len`` with the largest Delta.

        Branch and bound on the product of row sums, which never decreases
        along a path; ties go to the shorter loop, then to the first found
        (bottom arrows are tried first).
        """
        best = _largest_loop(p, max_len)
        if best is None:
            raise CapExceededError(f"no closed positive loop of length <= {max_len} at {p}")
        return cls(RauzyPath.from_kinds(p, best))

    @classmethod
    def from_kinds(cls, p: Permutation, kinds) -> SimplexSystem:
        return cls(RauzyPath.from_kinds(p, kinds))

    def to_json(self) -> dict:
        return {"permutation": str(self.permutation), "base_path": list(self.base_path.kinds)}


def _largest_loop(p: Permutation, max_len: int):
    cls = rauzy_class(p)
    tl, bl, tn, bn = cls.tables()
    start = cls.index[p]
    d = p.d
    best = [None, None]  # (volume, length), kinds

    def visit(sid, kinds, mat, rs):
        vol = math.prod(rs)
        key = (vol, len(kinds))
        if best[0] is not None and key >= best[0]:
            return
        if kinds and sid == start and intlinalg.is_positive(mat):
            best[0], best[1] = key, tuple(kinds)
            return
        if len(kinds) == max_len:
            return
        t, b = tl[sid], bl[sid]
        for kind in (1, 0):
            i, j = (b, t) if kind == 0 else (t, b)
            new = list(mat)
            new[i] = [x + y for x, y in zip(mat[i], mat[j])]
            nrs = list(rs)
            nrs[i] = rs[i] + rs[j]
            kinds.append(KINDS[kind])
            visit(tn[sid] if kind == 0 else bn[sid], kinds, new, nrs)
            kinds.pop()

    visit(start, [], intlinalg.identity(d), [1] * d)
    return best[1]


@dataclass(frozen=True, eq=False)
class FirstReturn:
    lengths: LengthVector
    path: RauzyPath
    return_time: float


def simplex_first_return(sys: SimplexSystem, lv: LengthVector, cap: int = ESCAPE_CAP) -> FirstReturn:
    """Renormalize until the orbit is back in Delta x {pi}; r = log|B^T lambda'|."""
    arith = lv.arithmetic
    with arith.context():
        if not sys.contains_values(lv.values):
            raise InputError("starting point is not in Delta")
        lam = list(lv.normalized().values)
        _, runs, b_mat, _ = _return_core(sys, lam, arith, cap, track=True)
        total = sum(lam[1:], lam[0])
        r = -log_of(total)
        out = LengthVector(tuple(v / total for v in lam), arith)
    kinds = tuple(KINDS[k] for k, m in runs for _ in range(m))
    path = RauzyPath(sys.permutation, kinds, sys.permutation, tuple(tuple(x) for x in b_mat))
    return FirstReturn(out, path, r)


def _full_cycles(x, s, exact: bool) -> int:
    """q with x - q s in (0, s], for x, s > 0."""
    if not x > s:
        return 0
    z = x / s
    q = -math.floor(-z) - 1 if exact else int(gmpy2.ceil(z)) - 1
    while q > 0 and not x - q * s > 0:
        q -= 1
    while x - q * s > s:
        q += 1
    return q


def _return_core(sys: SimplexSystem, lam: list, arith: Arithmetic, cap: int, track: bool, refresh=None):
    """Mutate ``lam`` up to the first return to Delta x {pi}.

    Streaks of equal arrows are applied in closed form: the winner is fixed and
    the losers cycle through the tail of the opposite row, so k steps subtract
    whole cycles at once and add multiples of the winner's row to the losers'
    rows of B.  Only one position per streak can start gamma0, so Delta is
    tested there alone.  ``cap`` bounds the number of streaks.

    ``refresh`` (float pseudo-orbits only) is ``(bits, perturb)``: when every
    length drops below 2^-bits the vector is scaled up by 2^bits and handed to
    ``perturb``.  Returns (induction steps, runs as (kind, length), B, log of
    the total scale-up).
    """
    cls = sys.rauzy_class
    tl, bl = cls.t_letter, cls.b_letter
    cycles = cls.cycles
    minv = sys.inverse_cone_matrix
    pi_id = cls.index[sys.permutation]
    k0, a0 = sys.first_run
    exact = arith.exact
    sid = pi_id
    d = len(lam)
    b_mat = intlinalg.identity(d) if track else None
    runs = []
    n = 0
    boost = 0.0
    if refresh is not None:
        r_bits, perturb = refresh
        floor_ = arith.number(2) ** (-r_bits)
        lift = arith.number(2) ** r_bits
    for _ in range(cap):
        t, b = tl[sid], bl[sid]
        x, y = lam[t], lam[b]
        if x > y:
            kind, w = 0, t
        elif y > x:
            kind, w = 1, b
        else:
            raise TieError(f"tie after {n} steps", step=n + 1)
        cyc = cycles[kind][sid]
        c = len(cyc)
        ells = [lam[loser] for _, loser in cyc]
        xw = lam[w]
        if c == 1:
            s_cyc = ells[0]
        else:
            s_cyc = sum(ells[1:], ells[0])
        q = _full_cycles(xw, s_cyc, exact)
        rem = xw - q * s_cyc if q else xw
        j = 0
        while rem > ells[j]:
            rem = rem - ells[j]
            j += 1
        if rem == ells[j]:
            raise TieError(f"tie after {n + q * c + j} steps", step=n + q * c + j + 1)
        k_len = q * c + j
        kstar = k_len - a0 if kind == k0 else k_len
        hit = False
        if 1 <= kstar and cyc[kstar % c][0] == pi_id:
            qs, js = divmod(kstar, c)
            xs = xw - qs * s_cyc if qs else xw
            for i in range(js):
                xs = xs - ells[i]
            saved, lam[w] = lam[w], xs
            for row in minv:
                if not sum(m * v for m, v in zip(row, lam) if m) > 0:
                    break
            else:
                hit = True
            if hit:
                k_len = kstar
            else:
                lam[w] = saved
        if not hit:
            lam[w] = rem
        if track:
            qk, jk = divmod(k_len, c)
            row_w = b_mat[w]
            for i, (_, loser) in enumerate(cyc):
                cnt = qk + (1 if i < jk else 0)
                if cnt:
                    b_mat[loser] = [u + cnt * v for u, v in zip(b_mat[loser], row_w)]
        runs.append((kind, k_len))
        n += k_len
        sid = cyc[k_len % c][0]
        if hit:
            return n, runs, b_mat, boost
        if refresh is not None and max(lam) < floor_:
            for i in range(d):
                lam[i] = lam[i] * lift
            boost += r_bits * math.log(2)
            perturb(lam)
    raise EscapeError(f"no return to Delta within {cap} streaks ({n} steps)")


class ReturnWalker:
    """Successive Delta-returns of a float pseudo-orbit.

    Induction subtracts numbers of similar size, which float arithmetic does
    exactly, so a fixed-precision orbit behaves like Euclid's algorithm on a
    dyadic rational and ends in a tie once its bits are used up.  The walker
    therefore perturbs every length by a relative amount of order
    2^-(precision/2), drawn from ``rng``, after each return and whenever the
    lengths have shrunk by 2^(precision/4) within one excursion.  In rational
    mode (or with ``rng=None``) no perturbation is applied.
    """

    def __init__(self, sys: SimplexSystem, point: LengthVector, rng=None, cap: int = ESCAPE_CAP):
        self.sys = sys
        self.arith = point.arithmetic
        self.rng = rng if not self.arith.exact else None
        self.cap = cap
        self.returns = 0
        self.induction_steps = 0
        with self.arith.context():
            if not sys.contains_values(point.values):
                raise InputError("starting point is not in Delta")
            self.lam = list(point.normalized().values)
            if self.rng is not None:
                self._eps = self.arith.number(2) ** (-(self.arith.precision_bits // 2))
                self._refresh = (self.arith.precision_bits // 4, self._perturb)
            else:
                self._refresh = None

    def _perturb(self, lam):
        u = self.rng.random(len(lam)) * 2 - 1
        for i, x in enumerate(u):
            lam[i] = lam[i] + lam[i] * self._eps * float(x)

    @property
    def point(self) -> LengthVector:
        return LengthVector(tuple(self.lam), self.arith)

    def step(self):
        """Advance one return; returns (B_gamma, r, induction steps)."""
        with self.arith.context():
            n, _, b_mat, boost = _return_core(self.sys, self.lam, self.arith, self.cap, True, self._refresh)
            total = sum(self.lam[1:], self.lam[0])
            r = boost - log_of(total)
            lam = [v / total for v in self.lam]
            if self.rng is not None:
                moved = list(lam)
                self._perturb(moved)
                if self.sys.contains_values(moved):
                    t2 = sum(moved[1:], moved[0])
                    lam = [v / t2 for v in moved]
            self.lam = lam
        self.returns += 1
        self.induction_steps += n
        return b_mat, r, n


# --------------------------------------------------------------------------- cylinders


@dataclass(frozen=True, eq=False)
class Cylinder:
    """A primitive return path gamma; Delta_gamma = (B_gamma0 B_gamma)^T P_+.

    ``matrix`` is the return matrix B_gamma and ``row_sums`` its row sums.
    """

    kinds: tuple
    matrix: tuple
    row_sums: tuple
    exact_mass: Fraction

    @property
    def norm(self) -> int:
        return max(sum(r) for r in self.matrix)


def primitive_return_paths(sys: SimplexSystem, norm_cap: int, max_count: int = 10**6) -> list[Cylinder]:
    """DFS over paths from pi; keep those whose continuation by gamma0 first returns to Delta.

    A point of Delta follows gamma and lands in Delta at pi exactly when its
    orbit starts with the word gamma + gamma0.  Primitivity forbids a full copy
    of gamma0 starting at an earlier visit to pi.  Branches are pruned once
    |B_gamma| (max row sum) reaches ``norm_cap``, so every cylinder with a
    smaller return matrix is found.
    """
    cls = sys.rauzy_class
    tl, bl, tn, bn = cls.tables()
    pi_id = cls.index[sys.permutation]
    g0 = tuple(0 if k == TOP else 1 for k in sys.base_path.kinds)
    n0 = len(g0)
    b0 = sys.base_path.matrix_list()
    base_rs = math.prod(sum(r) for r in b0)
    out = []

    # stack entries: (state id, word, B_gamma, visits to pi as word positions)
    stack = [(pi_id, (), intlinalg.identity(sys.d), (0,))]
    while stack:
        sid, word, g_mat, visits = stack.pop()
        t, b = tl[sid], bl[sid]
        for kind in (1, 0):
            i, j = (b, t) if kind == 0 else (t, b)
            w = word + (kind,)
            k = len(w)
            # the start point lies in Delta, so the word must open with gamma0
            if k <= n0 and g0[k - 1] != kind:
                continue
            # a full copy of gamma0 after an earlier visit is an earlier return
            if any(0 < v and k - v == n0 and w[v:] == g0 for v in visits):
                continue
            new_g = list(g_mat)
            new_g[i] = [x + y for x, y in zip(g_mat[i], g_mat[j])]
            if sum(new_g[i]) >= norm_cap:
                continue
            nsid = tn[sid] if kind == 0 else bn[sid]
            if nsid == pi_id:
                full = w + g0
                if full[:n0] == g0 and not any(0 < v < k and full[v:v + n0] == g0 for v in visits):
                    grs = tuple(sum(r) for r in new_g)
                    crs = [sum(c * x for c, x in zip(row, grs)) for row in b0]
                    out.append(Cylinder(tuple(KINDS[x] for x in w), tuple(tuple(r) for r in new_g), grs,
                                        Fraction(base_rs, math.prod(crs))))
                    if len(out) > max_count:
                        raise CapExceededError(f"more than {max_count} cylinders below norm cap {norm_cap}")
                stack.append((nsid, w, new_g, visits + (k,)))
            else:
                stack.append((nsid, w, new_g, visits))
    return out


def cylinder_masses(sys: SimplexSystem, cylinders, samples: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo masses mu(Delta_gamma)/mu(Delta) = E |B_gamma^T x|^-d over uniform x in Delta.

    Returns (means, standard errors).
    """
    pts = sys.sample_array(rng, samples)
    vals = _mass_integrand(sys, cylinders, pts)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(samples)


def _mass_integrand(sys, cylinders, pts) -> np.ndarray:
    # |B_gamma^T x|_1 = sum_i (row sum i of B_gamma) x_i
    rs = np.array([[float(v) for v in c.row_sums] for c in cylinders])
    return (pts @ rs.T) ** (-sys.d)


@dataclass(frozen=True)
class FastDecayFit:
    alpha1: float
    alpha2: float
    alpha1_ci: tuple
    alpha2_ci: tuple
    n_cylinders: int
    covered_mass: float
    norm_cap: int


def fast_decay_tails(
    sys: SimplexSystem,
    norm_cap: int = 2000,
    samples: int = 4000,
    seed: int = 0,
    n_boot: int = 200,
    use_exact: bool = False,
    method: str = "enumerate",
) -> FastDecayFit:
    """Empirical exponents for the two fast-decay tails.

    alpha1: slope of log sum_{mass <= eps} mass against log eps.
    alpha2: minus the slope of log sum_{|B_gamma| >= n} mass against log n.

    ``method="enumerate"`` lists the primitive cylinders below ``norm_cap``
    and integrates their masses; cylinders above the cap enter through the
    missing mass.  ``method="sample"`` draws Lebesgue points of Delta and
    rebuilds the exact return matrix of each, using that
    sum_{mass <= eps} mass = mu{x : mass of the cylinder of x <= eps}; it is
    the only practical choice when most of the mass sits above any
    enumerable cap.
    """
    if method == "sample":
        return _sampled_tails(sys, samples, seed, n_boot)
    if method != "enumerate":
        raise InputError(f"unknown method {method!r}")
    cyl = primitive_return_paths(sys, norm_cap)
    if len(cyl) < 8:
        raise InputError(f"only {len(cyl)} cylinders below norm cap {norm_cap}; raise the cap")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    norms = np.array([float(c.norm) for c in cyl])
    exact = np.array([float(c.exact_mass) for c in cyl])
    if use_exact:
        vals = None
        masses = exact
    else:
        pts = sys.sample_array(rng, samples)
        vals = _mass_integrand(sys, cyl, pts)
        masses = vals.mean(axis=0)
    # missing cylinders have |C| >= cap, hence mass <= prod(row sums of B0) / cap
    eps_floor = math.prod(sum(r) for r in sys.base_path.matrix) / norm_cap
    a1, a2 = _tail_slopes(masses, norms, norm_cap, eps_floor)
    boot1, boot2 = [], []
    if vals is not None:
        for _ in range(n_boot):
            idx = rng.integers(0, samples, samples)
            b1, b2 = _tail_slopes(vals[idx].mean(axis=0), norms, norm_cap, eps_floor)
            boot1.append(b1)
            boot2.append(b2)
    ci1 = tuple(np.nanpercentile(boot1, [2.5, 97.5])) if boot1 else (a1, a1)
    ci2 = tuple(np.nanpercentile(boot2, [2.5, 97.5])) if boot2 else (a2, a2)
    return FastDecayFit(a1, a2, ci1, ci2, len(cyl), float(exact.sum()), norm_cap)


def _tail_slopes(masses, norms, norm_cap, eps_floor):
    missing = max(0.0, 1.0 - float(masses.sum()))
    eps_grid = np.geomspace(max(eps_floor, masses.min()), min(1.0, masses.max()), 12)
    s1 = np.array([masses[masses <= e].sum() + missing for e in eps_grid])
    ok = s1 > 0
    a1 = np.polyfit(np.log(eps_grid[ok]), np.log(s1[ok]), 1)[0] if ok.sum() >= 3 else float("nan")
    n_grid = np.geomspace(max(2.0, norms.min()), norm_cap, 12)
    s2 = np.array([masses[norms >= n].sum() + missing for n in n_grid])
    ok = s2 > 0
    a2 = -np.polyfit(np.log(n_grid[ok]), np.log(s2[ok]), 1)[0] if ok.sum() >= 3 else float("nan")
    return float(a1), float(a2)


def sampled_cylinders(sys: SimplexSystem, samples: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(log mass, log norm) of the cylinder containing each of ``samples`` Lebesgue points of Delta."""
    from .fastorbit import MODE_PRODUCT, KernelTables, pseudo_orbit, return_matrix

    tables = KernelTables.of(sys)
    b0 = sys.base_path.matrix_list()
    log_base = sum(math.log(sum(r)) for r in b0)
    ss = np.random.SeedSequence(seed)
    log_mass, log_norm = np.empty(samples), np.empty(samples)
    for k, child in enumerate(ss.spawn(samples)):
        rng = np.random.default_rng(child)
        x = sys.sample_array(rng, 1)[0]
        run = pseudo_orbit(sys, x, 1, rng, frame=np.ones(sys.d) / math.sqrt(sys.d), mode=MODE_PRODUCT,
                           record=True, tables=tables)
        g = return_matrix(sys, run.streaks_of(0))
        rs = [sum(r) for r in g]
        log_mass[k] = log_base - sum(log_of(sum(c * x for c, x in zip(row, rs))) for row in b0)
        log_norm[k] = log_of(max(rs))
    return log_mass, log_norm


def _sampled_tails(sys, samples, seed, n_boot):
    log_mass, log_norm = sampled_cylinders(sys, samples, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))

    def slopes(lm, ln):
        # empirical tails at interior quantiles; the extreme 2% are too noisy to fit
        e = np.quantile(lm, np.linspace(0.02, 0.5, 12))
        s1 = np.array([(lm <= v).mean() for v in e])
        n = np.quantile(ln, np.linspace(0.5, 0.98, 12))
        s2 = np.array([(ln >= v).mean() for v in n])
        a1 = np.polyfit(e, np.log(s1), 1)[0]
        a2 = -np.polyfit(n, np.log(s2), 1)[0]
        return float(a1), float(a2)

    a1, a2 = slopes(log_mass, log_norm)
    boot = [slopes(log_mass[i], log_norm[i]) for i in (rng.integers(0, samples, samples) for _ in range(n_boot))]
    b = np.array(boot) if boot else np.array([[a1, a2]])
    ci1 = tuple(float(x) for x in np.percentile(b[:, 0], [2.5, 97.5]))
    ci2 = tuple(float(x) for x in np.percentile(b[:, 1], [2.5, 97.5]))
    return FastDecayFit(a1, a2, ci1, ci2, samples, 1.0, 0)


def class_summary(p: Permutation) -> dict:
    cls = rauzy_class(p)
    return {
        "root": str(p),
        **cls.invariants(),
        "members": [
            {"permutation": str(q), "genus": genus(q), "irreducible": is_irreducible(q)} for q in cls.members
        ],
    }


def golden_lengths() -> LengthVector:
    """(1, phi) exactly; the fixed point of the d=2 top/bottom cycle."""
    return LengthVector((Fraction(1), QuadraticNumber.golden()), RATIONAL)

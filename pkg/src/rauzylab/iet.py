"""Interval exchange maps f(lambda, pi) and a brute-force first-return oracle."""
from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction

from .arith import RATIONAL, Arithmetic, QuadraticNumber
from .combinatorics import Permutation, omega_matrix
from .errors import CapExceededError, ConsistencyError, InputError

ORACLE_CAP = 10**7


@dataclass(frozen=True)
class LengthVector:
    """Positive lengths in alphabet order, plus the backend they live in."""

    values: tuple
    arithmetic: Arithmetic = RATIONAL
    source: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.values) < 2:
            raise InputError("need at least two lengths")
        if any(not v > 0 for v in self.values):
            raise InputError(f"lengths must be positive, got {[str(v) for v in self.values]}")

    @classmethod
    def of(cls, values, arithmetic: Arithmetic = RATIONAL) -> LengthVector:
        """Build from numbers or strings.

        Exact inputs (rationals, surds) are remembered as ``source`` so a float
        vector can be re-evaluated at higher precision.
        """
        source = None
        if not arithmetic.exact:
            exact = [RATIONAL.number(v) if isinstance(v, (str, int, Fraction, QuadraticNumber)) else None
                     for v in values]
            if all(e is not None for e in exact):
                source = tuple(exact)
        with arithmetic.context():
            return cls(tuple(arithmetic.number(v) for v in values), arithmetic, source)

    def at_precision(self, bits: int) -> LengthVector:
        """Same vector in float mode at another precision (exact re-evaluation when possible)."""
        arith = Arithmetic("float", bits)
        src = self.source if self.source is not None else tuple(RATIONAL.number(v) for v in self.values)
        with arith.context():
            return LengthVector(tuple(arith.number(v) for v in src), arith, src)

    @classmethod
    def from_mapping(cls, mapping: dict, alphabet, arithmetic: Arithmetic = RATIONAL) -> LengthVector:
        missing = set(alphabet) - set(mapping)
        if missing:
            raise InputError(f"missing lengths for {sorted(missing)}")
        return cls.of([mapping[s] for s in alphabet], arithmetic)

    @property
    def d(self) -> int:
        return len(self.values)

    @property
    def total(self):
        with self.arithmetic.context():
            return sum(self.values[1:], self.values[0])

    def normalized(self) -> LengthVector:
        src = None
        if self.source is not None:
            try:
                ts = sum(self.source[1:], self.source[0])
                src = tuple(v / ts for v in self.source)
            except InputError:  # surds from different fields have no exact sum here
                src = None
        with self.arithmetic.context():
            t = sum(self.values[1:], self.values[0])
            return LengthVector(tuple(v / t for v in self.values), self.arithmetic, src)

    def scaled(self, c) -> LengthVector:
        with self.arithmetic.context():
            return LengthVector(tuple(v * c for v in self.values), self.arithmetic)

    def as_floats(self) -> list[float]:
        return [float(v) for v in self.values]

    def to_json(self, alphabet) -> dict:
        return {
            "lengths": {s: str(v) for s, v in zip(alphabet, self.values)},
            **self.arithmetic.describe(),
        }


def load_lengths(source, alphabet) -> LengthVector:
    """Read ``{"lengths": {...}, "mode": ..., "precision_bits": ...}`` (dict, path or JSON text)."""
    if isinstance(source, dict):
        data = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        data = json.loads(text)
    arith = Arithmetic(data.get("mode", "rational"), int(data.get("precision_bits", 256)))
    return LengthVector.from_mapping({k: str(v) for k, v in data["lengths"].items()}, alphabet, arith)


@dataclass(frozen=True, eq=False)
class IetMap:
    permutation: Permutation
    lengths: LengthVector
    translation: tuple
    breakpoints: tuple
    _top_order: tuple = field(repr=False)
    _bottom_breaks: tuple = field(repr=False)

    @property
    def total(self):
        return self.lengths.total

    def interval_of(self, x) -> int:
        """Alphabet index of the interval I_alpha containing x."""
        if x < 0 or not x < self.total:
            raise InputError(f"point {x} outside [0, |lambda|)")
        k = bisect_right(self.breakpoints, x) - 1
        return self._top_order[k]

    def __call__(self, x):
        return evaluate(self, x)


def build_iet(p: Permutation, lv: LengthVector) -> IetMap:
    p.require_irreducible()
    if lv.d != p.d:
        raise InputError(f"{lv.d} lengths for a permutation on {p.d} letters")
    om = omega_matrix(p)
    ar = lv.arithmetic
    with ar.context():
        zero = lv.values[0] - lv.values[0]
        w = tuple(sum((c * v for c, v in zip(row, lv.values) if c), zero) for row in om)
        starts, acc = [], zero
        for i in p.top_idx:
            starts.append(acc)
            acc = acc + lv.values[i]
        bstarts, acc = [], zero
        for i in p.bottom_idx:
            bstarts.append(acc)
            acc = acc + lv.values[i]
        # image of I_alpha starts at w^t_alpha + w_alpha; these must tile in bottom order
        image_start = {i: starts[k] + w[i] for k, i in enumerate(p.top_idx)}
    for k, i in enumerate(p.bottom_idx):
        if image_start[i] != bstarts[k] and not ar.exact:
            if abs(float(image_start[i] - bstarts[k])) > 1e-30 * float(acc):
                raise ConsistencyError("image intervals do not tile [0, |lambda|)")
        elif image_start[i] != bstarts[k]:
            raise ConsistencyError("image intervals do not tile [0, |lambda|)")
    return IetMap(p, lv, w, tuple(starts), p.top_idx, tuple(bstarts))


def evaluate(f: IetMap, x):
    i = f.interval_of(x)
    with f.lengths.arithmetic.context():
        return x + f.translation[i]


def evaluate_inverse(f: IetMap, y):
    if y < 0 or not y < f.total:
        raise InputError(f"point {y} outside [0, |lambda|)")
    k = bisect_right(f._bottom_breaks, y) - 1
    i = f.permutation.bottom_idx[k]
    with f.lengths.arithmetic.context():
        return y - f.translation[i]


@dataclass(frozen=True)
class ReturnRecord:
    point: object
    value: object
    time: int


def first_return_oracle(f: IetMap, ell, xs, cap: int = ORACLE_CAP) -> list[ReturnRecord]:
    """Iterate f from each x until the orbit re-enters [0, ell)."""
    if not (0 < ell <= f.total):
        raise InputError("need 0 < ell <= |lambda|")
    out = []
    bps, order, w = f.breakpoints, f._top_order, f.translation
    with f.lengths.arithmetic.context():
        for x in xs:
            if x < 0 or not x < ell:
                raise InputError(f"start point {x} not in [0, ell)")
            y, n = x, 0
            while True:
                y = y + w[order[bisect_right(bps, y) - 1]]
                n += 1
                if y < ell:
                    break
                if n >= cap:
                    raise CapExceededError(f"no return to [0, {ell}) within {cap} iterations")
            out.append(ReturnRecord(x, y, n))
    return out


def rational_independence(lv: LengthVector) -> bool:
    """Q-linear independence of exact lengths via their coefficient vectors over {1, sqrt D}."""
    if not lv.arithmetic.exact:
        raise InputError("rational independence is undecidable in float mode")
    fields = {v.D for v in lv.values if isinstance(v, QuadraticNumber) and v.b != 0}
    if len(fields) > 1:
        raise InputError("lengths from different quadratic fields are not supported")
    rows = []
    for v in lv.values:
        if isinstance(v, QuadraticNumber):
            rows.append([v.a, v.b])
        else:
            rows.append([Fraction(v), Fraction(0)])
    return _rank(rows) == len(rows)


def _rank(rows) -> int:
    m = [list(r) for r in rows]
    rank, col, ncols = 0, 0, len(m[0]) if m else 0
    while rank < len(m) and col < ncols:
        piv = next((r for r in range(rank, len(m)) if m[r][col] != 0), None)
        if piv is None:
            col += 1
            continue
        m[rank], m[piv] = m[piv], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][col] != 0:
                f = m[r][col] / m[rank][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
        col += 1
    return rank

"""Number backends for length data.

Two modes share one interface:

* ``rational``: :class:`fractions.Fraction`, optionally extended by
  :class:`QuadraticNumber` (elements of Q(sqrt D)) so that golden-ratio
  orbits can be followed exactly.
* ``float``: :mod:`gmpy2` ``mpfr`` values at a configurable mantissa width.
  Arithmetic only rounds to that width inside :meth:`Arithmetic.context`.

Integer matrices never go through this module; they are plain Python ints.
"""
from __future__ import annotations

import contextlib
import math
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt

import gmpy2

from .errors import InputError

DEFAULT_PRECISION_ENV = "RAUZYLAB_PRECISION_BITS"


def default_precision() -> int:
    return int(os.environ.get(DEFAULT_PRECISION_ENV, "256"))


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _squarefree_part(n: int) -> tuple[int, int]:
    """Write n = k^2 * m with m squarefree; return (k, m)."""
    k, m, p = 1, n, 2
    while p * p <= m:
        while m % (p * p) == 0:
            m //= p * p
            k *= p
        p += 1
    return k, m


class QuadraticNumber:
    """Exact element ``a + b*sqrt(D)`` of a real quadratic field."""

    __slots__ = ("a", "b", "D")

    def __init__(self, a, b=0, D: int = 5):
        if D <= 1:
            raise InputError("D must be an integer > 1")
        k, m = _squarefree_part(D)
        if m == 1:
            raise InputError(f"{D} is a perfect square")
        self.a = _frac(a)
        self.b = _frac(b) * k
        self.D = m

    @classmethod
    def golden(cls) -> QuadraticNumber:
        return cls(Fraction(1, 2), Fraction(1, 2), 5)

    def _coerce(self, other):
        if isinstance(other, QuadraticNumber):
            if other.D != self.D and other.b and self.b:
                raise InputError(f"mixed fields Q(sqrt {self.D}) and Q(sqrt {other.D})")
            return other
        if isinstance(other, (int, Fraction)):
            return QuadraticNumber._raw(Fraction(other), Fraction(0), self.D)
        return None

    @classmethod
    def _raw(cls, a, b, D):
        obj = object.__new__(cls)
        obj.a, obj.b, obj.D = a, b, D
        return obj

    def _field(self, other):
        return self.D if self.b else other.D

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return QuadraticNumber._raw(self.a + o.a, self.b + o.b, self._field(o))

    __radd__ = __add__

    def __neg__(self):
        return QuadraticNumber._raw(-self.a, -self.b, self.D)

    def __pos__(self):
        return self

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return QuadraticNumber._raw(self.a - o.a, self.b - o.b, self._field(o))

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        D = self._field(o)
        return QuadraticNumber._raw(
            self.a * o.a + self.b * o.b * D, self.a * o.b + self.b * o.a, D
        )

    __rmul__ = __mul__

    def conjugate(self) -> QuadraticNumber:
        return QuadraticNumber._raw(self.a, -self.b, self.D)

    def norm(self) -> Fraction:
        return self.a * self.a - self.b * self.b * self.D

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        n = o.norm()
        if n == 0:
            raise ZeroDivisionError("division by zero in quadratic field")
        num = self * o.conjugate()
        return QuadraticNumber._raw(num.a / n, num.b / n, num.D)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o / self

    def sign(self) -> int:
        sa = (self.a > 0) - (self.a < 0)
        sb = (self.b > 0) - (self.b < 0)
        if sb == 0 or sa == sb:
            return sa or sb
        if sa == 0:
            return sb
        c = self.a * self.a - self.b * self.b * self.D
        return sa if c > 0 else sb

    def _cmp(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return (self - o).sign()

    def __eq__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is NotImplemented else c == 0

    def __lt__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is NotImplemented else c < 0

    def __le__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is NotImplemented else c <= 0

    def __gt__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is NotImplemented else c > 0

    def __ge__(self, other):
        c = self._cmp(other)
        return NotImplemented if c is NotImplemented else c >= 0

    def __hash__(self):
        if self.b == 0:
            return hash(self.a)
        return hash((self.a, self.b, self.D))

    def __abs__(self):
        return -self if self.sign() < 0 else self

    def __float__(self):
        if self.b == 0:
            return float(self.a)
        if (self.a > 0) != (self.b > 0) and self.a != 0:
            # a + b r = (a^2 - b^2 D) / (a - b r); no cancellation below
            return float(self.norm()) / (float(self.a) - float(self.b) * math.sqrt(self.D))
        return float(self.a) + float(self.b) * math.sqrt(self.D)

    def __floor__(self):
        s = self.b * self.b * self.D
        scale = 1 << 64
        root = isqrt(s.numerator * scale * scale // s.denominator)
        approx = self.a + Fraction(root if self.b > 0 else -root, scale)
        n = math.floor(approx)
        while self < n:
            n -= 1
        while self >= n + 1:
            n += 1
        return n

    def __round__(self, ndigits=None):
        return math.floor(self + Fraction(1, 2))

    def coefficients(self) -> tuple[Fraction, Fraction]:
        return self.a, self.b

    def __repr__(self):
        return f"QuadraticNumber({self.a}, {self.b}, {self.D})"

    def __str__(self):
        if self.b == 0:
            return str(self.a)
        return f"{self.a}+{self.b}*sqrt({self.D})"


_SURD = re.compile(
    r"^\s*(?:(?P<a>[+-]?\d+(?:/\d+)?)\s*(?P<op>[+-])\s*)?"
    r"(?:(?P<b>\d+(?:/\d+)?)\s*\*\s*)?sqrt\(\s*(?P<D>\d+)\s*\)\s*$"
)


def parse_exact(text: str):
    """Parse ``"3/10"``, ``"0.25"``, ``"phi"``, ``"1+phi"`` or ``"a+b*sqrt(D)"``."""
    s = text.strip().replace(" ", "")
    if s in ("phi", "golden"):
        return QuadraticNumber.golden()
    m = re.fullmatch(r"([+-]?\d+(?:/\d+)?)([+-])(\d+(?:/\d+)?\*)?phi", s)
    if m:
        a = Fraction(m.group(1))
        k = Fraction(m.group(3)[:-1]) if m.group(3) else Fraction(1)
        return a + (k if m.group(2) == "+" else -k) * QuadraticNumber.golden()
    m = _SURD.match(s)
    if m:
        a = Fraction(m.group("a")) if m.group("a") else Fraction(0)
        b = Fraction(m.group("b")) if m.group("b") else Fraction(1)
        if m.group("op") == "-":
            b = -b
        return QuadraticNumber(a, b, int(m.group("D")))
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"cannot parse number {text!r}") from exc


@dataclass(frozen=True)
class Arithmetic:
    """Arithmetic backend for length vectors."""

    mode: str = "rational"
    precision_bits: int = 256

    def __post_init__(self):
        if self.mode not in ("rational", "float"):
            raise InputError(f"unknown arithmetic mode {self.mode!r}")
        if self.precision_bits < 53:
            raise InputError("precision_bits must be >= 53")

    @property
    def exact(self) -> bool:
        return self.mode == "rational"

    def context(self):
        if self.exact:
            return contextlib.nullcontext()
        return gmpy2.context(gmpy2.get_context(), precision=self.precision_bits)

    def with_precision(self, bits: int) -> Arithmetic:
        return Arithmetic(self.mode, bits)

    def number(self, x):
        if isinstance(x, str):
            x = parse_exact(x)
        if self.exact:
            if isinstance(x, (Fraction, QuadraticNumber)):
                return x
            if isinstance(x, (int, float)):
                return Fraction(x)
            if isinstance(x, type(gmpy2.mpfr(0))):
                return Fraction(*x.as_integer_ratio())
            raise InputError(f"unsupported number {x!r}")
        p = self.precision_bits
        if isinstance(x, QuadraticNumber):
            with gmpy2.context(gmpy2.get_context(), precision=p + 64):
                v = gmpy2.mpq(x.a) + gmpy2.mpq(x.b) * gmpy2.sqrt(gmpy2.mpfr(x.D))
            return gmpy2.mpfr(v, p)
        if isinstance(x, Fraction):
            return gmpy2.mpfr(gmpy2.mpq(x.numerator, x.denominator), p)
        return gmpy2.mpfr(x, p)

    def describe(self) -> dict:
        return {"mode": self.mode, "precision_bits": self.precision_bits}


RATIONAL = Arithmetic("rational")


def float_arith(bits: int | None = None) -> Arithmetic:
    return Arithmetic("float", bits or default_precision())


def nearest_integer(x) -> int:
    """Nearest integer; halves round up (either neighbour is equally close)."""
    return int(math.floor(x + Fraction(1, 2))) if not isinstance(x, float) else math.floor(x + 0.5)


def log_of(x) -> float:
    """Natural log as a Python float, safe for huge/tiny exact values."""
    if isinstance(x, Fraction):
        return math.log(x.numerator) - math.log(x.denominator)
    if isinstance(x, int):
        return math.log(x)
    if isinstance(x, QuadraticNumber):
        return math.log(float(x))
    if isinstance(x, float):
        return math.log(x)
    return float(gmpy2.log(x))


def random_unit(rng, arith: Arithmetic, bits: int | None = None):
    """Uniform draw from (0, 1) with ``bits`` random bits, never exactly 0."""
    bits = bits or arith.precision_bits
    nbytes = (bits + 7) // 8
    k = int.from_bytes(rng.bytes(nbytes), "little") >> (8 * nbytes - bits)
    value = Fraction(2 * k + 1, 1 << (bits + 1))
    return arith.number(value)


def random_simplex_weights(rng, arith: Arithmetic, d: int, bits: int | None = None) -> list:
    """Uniform (Lebesgue) point of the open standard simplex via sorted spacings."""
    cuts = sorted(random_unit(rng, arith, bits) for _ in range(d - 1))
    with arith.context():
        edges = [arith.number(0)] + cuts + [arith.number(1)]
        return [edges[i + 1] - edges[i] for i in range(d)]

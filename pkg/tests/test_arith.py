import math
from fractions import Fraction

import gmpy2
import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given

from rauzylab.arith import (
    RATIONAL,
    Arithmetic,
    QuadraticNumber,
    float_arith,
    log_of,
    nearest_integer,
    parse_exact,
    random_simplex_weights,
)
from rauzylab.errors import InputError

fracs = st.fractions(min_value=-100, max_value=100, max_denominator=1000)


def test_golden_ratio_identities():
    phi = QuadraticNumber.golden()
    assert phi * phi == phi + 1
    assert 1 / phi == phi - 1
    assert abs(float(phi) - (1 + math.sqrt(5)) / 2) < 1e-15
    assert math.floor(phi) == 1


@given(fracs, fracs, fracs, fracs)
def test_quadratic_field_arithmetic_matches_floats(a, b, c, e):
    x, y = QuadraticNumber(a, b, 2), QuadraticNumber(c, e, 2)
    r2 = math.sqrt(2)
    fx, fy = float(a) + float(b) * r2, float(c) + float(e) * r2
    assert abs(float(x + y) - (fx + fy)) < 1e-9
    assert abs(float(x * y) - fx * fy) < 1e-7
    if y != 0:
        assert x / y * y == x


@given(fracs, fracs)
def test_sign_and_floor_are_exact(a, b):
    x = QuadraticNumber(a, b, 7)
    f = math.floor(x)
    assert f <= x < f + 1
    assert (x > 0) == (float(x) > 0) or abs(float(x)) < 1e-12


@pytest.mark.parametrize("text, value", [
    ("3/10", Fraction(3, 10)),
    ("0.25", Fraction(1, 4)),
    ("phi", QuadraticNumber.golden()),
    ("1+phi", 1 + QuadraticNumber.golden()),
    ("2-3*phi", 2 - 3 * QuadraticNumber.golden()),
    ("1+2*sqrt(3)", QuadraticNumber(1, 2, 3)),
    ("sqrt(5)", QuadraticNumber(0, 1, 5)),
])
def test_parse_exact(text, value):
    assert parse_exact(text) == value


@pytest.mark.parametrize("bad", ["x", "1/0", "sqrt(4)", ""])
def test_parse_exact_rejects(bad):
    with pytest.raises(InputError):
        parse_exact(bad)


def test_arithmetic_modes():
    assert RATIONAL.exact
    fa = float_arith(100)
    assert not fa.exact and fa.precision_bits == 100
    x = fa.number(Fraction(1, 3))
    assert isinstance(x, type(gmpy2.mpfr(0))) and x.precision == 100
    with pytest.raises(InputError):
        Arithmetic("decimal")
    with pytest.raises(InputError):
        Arithmetic("float", 20)


def test_float_context_rounds_to_requested_width():
    fa = float_arith(64)
    with fa.context():
        third = fa.number(1) / fa.number(3)
    assert abs(float(third * 3 - 1)) < 2.0**-60


def test_default_precision_from_environment(monkeypatch):
    from rauzylab.arith import DEFAULT_PRECISION_ENV, default_precision
    monkeypatch.setenv(DEFAULT_PRECISION_ENV, "512")
    assert default_precision() == 512
    assert float_arith().precision_bits == 512


@given(st.fractions(min_value=-50, max_value=50))
def test_nearest_integer_distance(x):
    n = nearest_integer(x)
    assert abs(x - n) <= Fraction(1, 2)


def test_log_of_huge_rationals():
    big = Fraction(10**400 + 1, 3)
    assert abs(log_of(big) - (400 * math.log(10) - math.log(3))) < 1e-9


@given(st.integers(0, 2**32), st.integers(2, 6))
def test_simplex_weights_sum_to_one(seed, d):
    w = random_simplex_weights(np.random.default_rng(seed), RATIONAL, d, 64)
    assert sum(w) == 1 and all(x > 0 for x in w)

import logging
import math
from fractions import Fraction as F

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from conftest import perm_and_lengths
from rauzylab.arith import float_arith
from rauzylab.combinatorics import Permutation, in_H, singularity_profile
from rauzylab.errors import InputError, NotInHError, TieError
from rauzylab.iet import LengthVector
from rauzylab.rauzy import golden_lengths
from rauzylab.suspension import (
    DiscontinuityError,
    SpecialFlow,
    SuspensionDatum,
    extended_induction_step,
    extended_orbit,
    flow_return_map,
    heights_of,
    rectangles_json,
    sample_tau,
    special_flow_evaluate,
    zippered_rectangles,
)

P2 = Permutation.parse("a b / b a")
P3 = Permutation.parse("a b c / c b a")


def test_tau_examples():
    sd = SuspensionDatum.from_tau(P2, (1, -1))
    assert sd.heights == (1, 1)
    sd3 = SuspensionDatum.from_tau(P3, (1, F(1, 10), -1))
    assert sd3.heights == (F(9, 10), 2, F(11, 10))
    with pytest.raises(InputError):
        SuspensionDatum.from_tau(P2, (-1, 1))
    with pytest.raises(InputError):
        SuspensionDatum.from_tau(P2, (1, -1, 0))


@settings(max_examples=40)
@given(perm_and_lengths(dims=(2, 3, 4, 5)), st.integers(0, 2**32))
def test_sampled_heights_are_positive_and_in_H(pl, seed):
    p, lv = pl
    sd = sample_tau(p, seed)
    assert all(h > 0 for h in sd.heights)
    for b in singularity_profile(p).b_vectors.values():
        assert sum(x * h for x, h in zip(b, sd.heights)) == 0
    assert sd.area(lv) > 0


def test_sampling_is_seeded():
    assert sample_tau(P3, 7) == sample_tau(P3, 7)


def test_rectangles_example_d2():
    lv = LengthVector.of([F(3, 10), F(7, 10)])
    rects = zippered_rectangles(lv, P2, SuspensionDatum.from_tau(P2, (1, -1)))
    top = {r.letter: (r.x0, r.x1, r.y0, r.y1) for r in rects if r.side == "top"}
    assert top == {"a": (0, F(3, 10), 0, 1), "b": (F(3, 10), 1, 0, 1)}
    bottom = {r.letter: (r.x0, r.x1, r.y0, r.y1) for r in rects if r.side == "bottom"}
    assert bottom == {"b": (0, F(7, 10), -1, 0), "a": (F(7, 10), 1, -1, 0)}
    assert rectangles_json(rects)[0]["side"] == "top"


@settings(max_examples=40)
@given(perm_and_lengths(dims=(2, 3, 4, 5)), st.integers(0, 2**32))
def test_rectangles_tile_and_have_twice_the_area(pl, seed):
    p, lv = pl
    sd = sample_tau(p, seed)
    rects = zippered_rectangles(lv, p, sd)
    for side, order in (("top", p.top), ("bottom", p.bottom)):
        bases = sorted((r.x0, r.x1, r.letter) for r in rects if r.side == side)
        assert [b[2] for b in bases] == list(order)
        assert bases[0][0] == 0 and bases[-1][1] == lv.total
        assert all(a[1] == b[0] for a, b in zip(bases, bases[1:]))
    assert sum(r.area for r in rects) == 2 * sd.area(lv)


def test_extended_induction_example():
    lv = LengthVector.of([3, 5])
    new, q, h = extended_induction_step(lv, P2, (1, 1))
    assert new.values == (3, 2) and h == (2, 1) and q == P2
    assert 3 * 1 + 5 * 1 == sum(a * b for a, b in zip(new.values, h))


@settings(max_examples=40)
@given(perm_and_lengths(dims=(2, 3, 4, 5)), st.integers(0, 2**32))
def test_extended_induction_conserves_area_and_H(pl, seed):
    p, lv = pl
    sd = sample_tau(p, seed)
    area = sd.area(lv)
    h = sd.heights
    try:
        for lv, p, h in extended_orbit(lv, p, h, 20):
            assert all(x > 0 for x in h)
            assert in_H(p, h)
            assert sum(a * b for a, b in zip(lv.values, h)) == area
    except TieError:
        pass


def test_extended_induction_rejects_bad_heights():
    lv = LengthVector.of([F(1, 3), F(1, 2), F(1, 6) + F(1, 7)])
    with pytest.raises(NotInHError):
        extended_induction_step(lv, P3, (1, 2, 5))
    with pytest.raises(InputError):
        extended_induction_step(lv, P3, (1, -1, 1))


def test_golden_area_constant_exact():
    lv, h = golden_lengths(), (1, 1)
    area0 = sum(lv.values)
    for lv, _, h in extended_orbit(lv, P2, h, 1000):
        assert lv.values[0] * h[0] + lv.values[1] * h[1] == area0


def test_golden_area_constant_in_float():
    # each step uses up log2(phi) bits, so 1000 steps need more than 700 bits
    ar = float_arith(1024)
    lv = LengthVector.of(list(golden_lengths().values), ar)
    h = (ar.number(1), ar.number(1))
    area0 = float(sum(a * b for a, b in zip(lv.values, h)))
    for lv, _, h in extended_orbit(lv, P2, h, 1000):
        with ar.context():
            area = float(sum(a * b for a, b in zip(lv.values, h)))
        assert abs(area - area0) <= 1e-12 * area0


def test_flow_examples():
    lv = LengthVector.of([F(3, 10), F(7, 10)])
    flow = SpecialFlow.of(P2, lv, (F(1), F(2)))
    # below the roof the flow is a vertical translation
    pt = special_flow_evaluate(flow, (F(1, 10), F(1, 4)), F(1, 2))
    assert (pt.x, pt.s, pt.crossings) == (F(1, 10), F(3, 4), 0)
    # exactly one roof height from the base lands on f(x)
    pt = special_flow_evaluate(flow, (F(1, 10), F(0)), F(1))
    assert (pt.x, pt.s, pt.crossings) == (flow.base(F(1, 10)), 0, 1)
    with pytest.raises(InputError):
        special_flow_evaluate(flow, (F(1, 10), F(1)), F(1))
    with pytest.raises(InputError):
        special_flow_evaluate(flow, (F(1, 10), F(0)), F(-1))


@settings(max_examples=30)
@given(st.fractions(0, F(999, 1000)), st.fractions(0, F(3, 2)).filter(lambda s: s < F(3, 2)), st.fractions(0, 20))
def test_constant_roof_crossings(x, s, time):
    lv = LengthVector.of([F(1, 3) + F(1, 1000), F(2, 3) - F(1, 1000)])
    flow = SpecialFlow.of(P2, lv, (F(3, 2), F(3, 2)))
    try:
        pt = special_flow_evaluate(flow, (x, s), time)
    except DiscontinuityError:
        return
    assert pt.crossings == math.floor((s + time) / F(3, 2))


def test_flow_return_map_is_the_base_map():
    p = Permutation.reversal(4)
    rng = np.random.default_rng(0)
    lv = LengthVector.of([F(int(k), 2**40) for k in rng.integers(1, 2**40, 4)])
    flow = SpecialFlow.of(p, lv, sample_tau(p, 3).heights)
    for x in rng.uniform(0, float(lv.total), 1000):
        x = F(x)
        y, h = flow_return_map(flow, x)
        assert y == flow.base(x) and h == flow.roof(x)


def test_discontinuity_is_an_error_in_exact_mode():
    lv = LengthVector.of([F(3, 10), F(7, 10)])
    flow = SpecialFlow.of(P2, lv, (F(1), F(1)))
    # f(6/10) = 3/10, the breakpoint between the two intervals
    assert flow.base(F(6, 10)) == F(3, 10)
    with pytest.raises(DiscontinuityError):
        special_flow_evaluate(flow, (F(6, 10), F(0)), F(3, 2))


def test_discontinuity_float_nudges_with_warning(caplog):
    ar = float_arith(64)
    lv = LengthVector.of(["3/10", "7/10"], ar)
    flow = SpecialFlow.of(P2, lv, (ar.number(1), ar.number(1)))
    x = ar.number("6/10")
    assert flow.base(x) == flow.base.breakpoints[1]
    with caplog.at_level(logging.WARNING, logger="rauzylab.suspension"):
        pt = special_flow_evaluate(flow, (x, ar.number(0)), ar.number("1.5"))
    assert pt.crossings == 1 and pt.x > flow.base.breakpoints[1]
    assert "discontinuity" in caplog.text


def test_heights_of_is_minus_omega_tau():
    assert heights_of(P2, (F(2), F(-3))) == (3, 2)

import math
from fractions import Fraction as F

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from oracles import fibonacci, golden_multiple_distance, sampled_anchors
from rauzylab.arith import QuadraticNumber
from rauzylab.combinatorics import Permutation
from rauzylab.errors import InputError, NotInHError
from rauzylab.rauzy import BOTTOM, TOP, RauzyPath, SimplexSystem, golden_lengths
from rauzylab.weak_stable import (
    CANDIDATE,
    EXCLUDED,
    NOT_CANDIDATE,
    LineSegment,
    children,
    distance_to_lattice,
    ones_in_H,
    random_line,
    survival_probability,
    uniform_t_grid,
    veech_criterion_test,
    weak_mixing_scan,
    weak_stable_membership,
)

P2 = Permutation.parse("a b / b a")
P3 = Permutation.reversal(3)
P4 = Permutation.reversal(4)
PHI = QuadraticNumber.golden()


def golden_system():
    return SimplexSystem.from_kinds(P2, (TOP, BOTTOM))


def test_distance_examples():
    assert distance_to_lattice([F(4, 10), F(13, 10), F(-2, 10)]) == pytest.approx(math.sqrt(0.29))
    assert distance_to_lattice([3, -7, 0]) == 0
    assert distance_to_lattice([F(1, 2), 0, 0]) == 0.5
    assert distance_to_lattice([PHI]) == pytest.approx(2 - (1 + math.sqrt(5)) / 2)


@settings(max_examples=50)
@given(st.lists(st.fractions(-50, 50), min_size=1, max_size=5), st.lists(st.integers(-9, 9), min_size=5, max_size=5))
def test_distance_is_lattice_periodic(v, shift):
    moved = [x + k for x, k in zip(v, shift)]
    assert distance_to_lattice(moved) == pytest.approx(distance_to_lattice(v), abs=1e-12)
    assert distance_to_lattice(v) <= math.sqrt(len(v)) / 2 + 1e-12


def test_line_segment_normal_form():
    J = LineSegment.through([F(5, 100), 0], [1, 1])
    assert J.offset == (F(1, 40), F(-1, 40))
    assert J.norm == pytest.approx(0.05 / math.sqrt(2))
    with pytest.raises(InputError):
        LineSegment.through([1, 1], [1, 1])
    with pytest.raises(InputError):
        LineSegment.through([1, 0], [1, -1])


def test_identity_gives_only_the_trivial_child():
    J = LineSegment.through([F(5, 100), 0], [1, 1])
    kids = children(J, [[1, 0], [0, 1]], 0.09)
    assert kids.trivial == J and kids.count == 0 and not kids.dies


def test_children_example_against_sampling_oracle():
    J = LineSegment.through([F(5, 100), 0], [1, 1])
    a = [[1, 1], [0, 1]]
    kids = children(J, a, 0.09)
    oracle = sampled_anchors(J.offset, J.direction, a, 0.09, 10**5, np.random.default_rng(0))
    assert kids.anchors == oracle


def test_children_of_a_long_image():
    J = LineSegment.through([F(3, 100), 0, 0], [1, 2, 3])
    a = [list(r) for r in RauzyPath.from_kinds(P3, [TOP, TOP, BOTTOM] * 7).matrix]
    kids = children(J, a, 0.08)
    oracle = sampled_anchors(J.offset, J.direction, a, 0.08, 10**5, np.random.default_rng(1))
    assert kids.count > 0 and kids.anchors == oracle
    for child, c in kids.nontrivial:
        assert child == J.image(a, c)


def test_dying_line():
    # A.J is the line (1/10, y, 1/20), at distance 0.1118 > delta from 0, and
    # the image segment stays far from every other lattice ball
    J = LineSegment.through([F(5, 100), 0, 0], [0, 1, 0])
    kids = children(J, [[2, 0, 1], [1, 1, 0], [1, 0, 1]], 0.09)
    assert kids.dies and kids.trivial is None


def test_children_input_errors():
    J = LineSegment.through([F(5, 100), 0], [1, 1])
    with pytest.raises(InputError):
        children(J, [[1, 0], [0, 1]], 0.2)
    with pytest.raises(InputError):
        children(J, [[1, 0], [0, 1]], 0.01)
    with pytest.raises(InputError):
        children(J, [[1, -1], [0, 1]], 0.09)


def test_membership_of_zero_and_precondition():
    sys_ = golden_system()
    assert weak_stable_membership(sys_, golden_lengths(), [0, 0], 0.05, 10, 5) == (True, None)
    with pytest.raises(InputError):
        weak_stable_membership(sys_, golden_lengths(), [1, 0], 0.05, 10, 5)


def test_membership_golden_fibonacci():
    sys_ = golden_system()
    g = golden_lengths()
    # w = B^3 phi (1,1) reduced mod Z^2 is tiny, so it stays weak-stable
    w = [13 * PHI - 21, 21 * PHI - 34]
    assert weak_stable_membership(sys_, g, w, 0.05, 10, 5) == (True, None)
    ok, first = weak_stable_membership(sys_, g, [F(1, 100), F(2, 100)], 0.05, 10, 5)
    assert not ok and first <= 3


def test_veech_golden_phi_against_fibonacci_oracle():
    r = veech_criterion_test(golden_lengths(), P2, PHI, (1, 1), 30, golden_system())
    assert r.verdict == CANDIDATE and r.tail_max < 1e-3
    # B^k (1,1) = (F_{2k+1}, F_{2k+2})
    for k, dist in enumerate(r.distances[:20], start=1):
        want = math.hypot(golden_multiple_distance(2 * k + 1), golden_multiple_distance(2 * k + 2))
        assert dist == pytest.approx(want, rel=1e-9)


def test_veech_golden_one_third():
    r = veech_criterion_test(golden_lengths(), P2, F(1, 3), (1, 1), 30, golden_system())
    assert r.verdict == NOT_CANDIDATE and r.tail_max > 0.1
    fib = fibonacci(70)
    for k, dist in enumerate(r.distances, start=1):
        a, b = (F(fib[2 * k + 1], 3), F(fib[2 * k + 2], 3))
        want = math.hypot(abs(a - round(a)), abs(b - round(b)))
        assert dist == pytest.approx(want)


@pytest.mark.parametrize("t", [0, 2, -5])
def test_veech_integer_t(t):
    r = veech_criterion_test(golden_lengths(), P2, t, (1, 1), 5, golden_system())
    assert r.integral and r.verdict == CANDIDATE and set(r.distances) == {0.0}


def test_veech_is_invariant_under_integer_shift():
    a = veech_criterion_test(golden_lengths(), P2, F(2, 7), (1, 1), 12, golden_system())
    b = veech_criterion_test(golden_lengths(), P2, F(9, 7), (1, 1), 12, golden_system())
    assert a.distances == b.distances


def test_veech_default_system_contains_the_start():
    r = veech_criterion_test(golden_lengths(), P2, PHI, (1, 1), 10)
    assert r.visits_used == 10 and r.distances[-1] < 1e-3


def test_veech_rejects_h_outside_H():
    lv = SimplexSystem.largest(P3).sample(np.random.default_rng(0), bits=4000)
    assert not ones_in_H(P3)
    with pytest.raises(NotInHError):
        veech_criterion_test(lv, P3, F(1, 2), (1, 1, 1), 3, SimplexSystem.largest(P3))
    with pytest.raises(InputError):
        veech_criterion_test(golden_lengths(), P2, PHI, (1, 1), 0, golden_system())


def test_scan_short_circuits_for_odd_reversal():
    scan = weak_mixing_scan(None, P3, [F(1, 2), F(1, 3)], 5)
    assert scan.short_circuited and {r.verdict for r in scan.rows} == {EXCLUDED}
    assert scan.candidates == []


def test_scan_golden_flags_phi_only():
    grid = [PHI - 1, F(1, 3), F(1, 2), F(2, 7)] + uniform_t_grid(5)
    scan = weak_mixing_scan(golden_lengths(), P2, grid, 30, golden_system())
    assert scan.candidates == [PHI - 1]


def test_uniform_grid():
    assert uniform_t_grid(4) == [F(1, 8), F(3, 8), F(5, 8), F(7, 8)]


def test_random_line_norm_and_direction():
    rng = np.random.default_rng(0)
    for d in (2, 3, 4):
        J = random_line(d, 0.02, rng)
        assert J.norm == pytest.approx(0.02, rel=1e-9)
        assert all(x > 0 for x in J.direction)
    with pytest.raises(InputError):
        random_line(3, 0.0, rng)


def test_survival_far_line_is_zero():
    J = LineSegment.through([F(6, 100), 0, 0, 0], [0, 1, 1, 1])
    stats = survival_probability(SimplexSystem.largest(P4), J, delta=0.05, m_max=3, samples=10, min_samples=1)
    assert stats.p_hat == (0.0,) * 4


def test_survival_nested_and_starts_at_one():
    J = LineSegment.through([F(2, 100), F(-2, 100)], [1, 1])
    stats = survival_probability(golden_system(), J, delta=0.05, m_max=4, N=2, samples=30, min_samples=1, seed=3)
    assert stats.p_hat[0] == 1.0
    assert stats.nonincreasing
    ind = stats.indicator
    assert not np.any(ind[:, 1:] & ~ind[:, :-1])
    assert len(stats.rows()) == 5


def test_survival_input_errors():
    J = LineSegment.through([F(2, 100), F(-2, 100)], [1, 1])
    with pytest.raises(InputError):
        survival_probability(golden_system(), J, samples=10)
    with pytest.raises(InputError):
        survival_probability(SimplexSystem.largest(P3), J, samples=10, min_samples=1)
    with pytest.raises(InputError):
        survival_probability(golden_system(), J, m_max=0, samples=10, min_samples=1)

import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from rauzylab import intlinalg
from rauzylab.arith import float_arith
from rauzylab.cocycle import (
    HCoordinates,
    anomalous_growth_experiment,
    clopper_pearson,
    cocycle_step,
    contraction_deviation_experiment,
    initial_state,
    lyapunov_spectrum,
)
from rauzylab.combinatorics import Permutation, singularity_profile
from rauzylab.errors import InputError
from rauzylab.iet import LengthVector
from rauzylab.rauzy import BOTTOM, TOP, SimplexSystem, golden_lengths

P2 = Permutation.parse("a b / b a")
P3 = Permutation.reversal(3)
P4 = Permutation.reversal(4)
LOG_PHI = math.log((1 + math.sqrt(5)) / 2)


def golden_system():
    return SimplexSystem.from_kinds(P2, (TOP, BOTTOM))


def test_golden_cocycle_is_constant():
    sys_ = golden_system()
    state = initial_state(sys_, golden_lengths().normalized())
    for _ in range(30):
        state, a = cocycle_step(state, sys_)
        assert a == [[1, 1], [1, 2]]
    # the frame aligns with the eigenvectors, log-growth per return = +-2 log(phi)
    assert state.log_norms[0] / 30 == pytest.approx(2 * LOG_PHI, abs=0.02)


def test_golden_last_increment_converges():
    sys_ = golden_system()
    state = initial_state(sys_, golden_lengths().normalized())
    prev = np.zeros(2)
    for _ in range(25):
        prev = state.log_norms.copy()
        state, _ = cocycle_step(state, sys_)
    inc = state.log_norms - prev
    assert inc[0] == pytest.approx(2 * LOG_PHI, abs=1e-9)
    assert inc[1] == pytest.approx(-2 * LOG_PHI, abs=1e-9)


@pytest.mark.parametrize("p", [P3, P4], ids=["reversal3", "reversal4"])
def test_frame_stays_in_H_and_A_is_unimodular(p):
    sys_ = SimplexSystem.largest(p)
    h = HCoordinates.of(p)
    rng = np.random.default_rng(3)
    lv = LengthVector.of([float(x) for x in sys_.sample_array(rng, 1)[0]], float_arith(128))
    state = initial_state(sys_, lv)
    for _ in range(3):
        state, a = cocycle_step(state, sys_, h, rng=rng)
        assert len(a) == h.rank == 2 * singularity_profile(p).genus
        assert abs(intlinalg.det(a)) == 1
        assert h.residual(state.frame) < 1e-10
    # A is unimodular on H and the frame spans H, so the volume is preserved
    logs = state.log_norms
    assert abs(logs.sum()) < 1e-6 * np.abs(logs).max()


def test_initial_state_outside_delta():
    sys_ = golden_system()
    with pytest.raises(InputError):
        initial_state(sys_, LengthVector.of([1, 100]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_nonnegative_vectors_never_shrink(seed):
    # B is a nonnegative integer matrix with unit diagonal, so |B w| >= |w| for w >= 0
    res = contraction_deviation_experiment(golden_system(), 0.0, [0, 1, 2, 3], 3, seed=seed)
    for row in res.rows[1:]:
        assert row.p_hat == 0


def test_lyapunov_spectrum_pairs_and_signs():
    est = lyapunov_spectrum(SimplexSystem.largest(P3), seed=1, n_steps=4000, n_batches=40)
    assert est.genus == 1
    assert est.pairing_ok(3)
    assert est.n_significantly_positive(3) == 1
    assert est.max_h_residual < 1e-10
    assert est.time_unit == "delta-return"
    assert est.rescaled()[0] == pytest.approx(1.0, rel=0.1)


def test_lyapunov_spectrum_rejects_short_runs():
    with pytest.raises(InputError):
        lyapunov_spectrum(golden_system(), seed=0, n_steps=999)
    with pytest.raises(InputError):
        lyapunov_spectrum(golden_system(), seed=0, n_steps=1000, n_batches=600)


def test_anomalous_growth_edges():
    sys_ = SimplexSystem.largest(P3)
    res = anomalous_growth_experiment(sys_, 1e6, [0, 5, 10], 20, seed=2)
    assert [r.p_hat for r in res.rows] == [1.0, 0.0, 0.0]
    assert res.rows[0].ci_low > 0.8 and res.rows[1].ci_high < 0.2


def test_contraction_edges():
    sys_ = SimplexSystem.largest(P3)
    res = contraction_deviation_experiment(sys_, -1.0, [0, 1, 4], 20, seed=2)
    assert [r.p_hat for r in res.rows] == [1.0, 0.0, 0.0]
    with pytest.raises(InputError):
        contraction_deviation_experiment(sys_, 0.0, [1], 5, v=[1, 1, 1])
    with pytest.raises(InputError):
        contraction_deviation_experiment(sys_, 0.0, [1], 0)


def test_deviation_runs_are_reproducible():
    sys_ = SimplexSystem.largest(P3)
    a = anomalous_growth_experiment(sys_, 100.0, [1, 2, 4], 30, seed=5)
    b = anomalous_growth_experiment(sys_, 100.0, [1, 2, 4], 30, seed=5)
    assert a.rows == b.rows
    np.testing.assert_equal([a.slope, *a.slope_ci], [b.slope, *b.slope_ci])


def test_clopper_pearson():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(5, 10)
    assert lo < 0.5 < hi
    # k = 0 upper bound is 1 - (alpha/2)^(1/n)
    assert clopper_pearson(0, 10)[1] == pytest.approx(1 - 0.025 ** 0.1)

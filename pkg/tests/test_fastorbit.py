import math
from fractions import Fraction as F

import numpy as np
import pytest

from rauzylab import intlinalg
from rauzylab.combinatorics import Permutation
from rauzylab.errors import EscapeError, InputError
from rauzylab.fastorbit import MODE_PRODUCT, pseudo_orbit, return_matrix
from rauzylab.iet import LengthVector
from rauzylab.rauzy import SimplexSystem, simplex_first_return

P2 = Permutation.parse("a b / b a")
P3 = Permutation.reversal(3)
P4 = Permutation.reversal(4)


def start(sys_, seed):
    rng = np.random.default_rng(seed)
    x = sys_.sample_array(rng, 1)[0]
    return x / x.sum(), rng


@pytest.mark.parametrize("seed", range(5))
def test_unperturbed_kernel_matches_exact_return_d2(seed):
    sys_ = SimplexSystem.largest(P2)
    x, rng = start(sys_, seed)
    run = pseudo_orbit(sys_, x, 1, rng, perturb=False, record=True)
    exact = simplex_first_return(sys_, LengthVector.of([F(float(v)) for v in x]))
    assert return_matrix(sys_, run.streaks_of(0)) == [list(r) for r in exact.path.matrix]
    assert run.return_times[0] == pytest.approx(exact.return_time, abs=1e-10)
    assert run.induction_steps[0] == len(exact.path)


def _pull_back(b_mat, point):
    """Normalized B^T point, exactly."""
    q = [F(float(v)) for v in point]
    back = [sum(b_mat[j][i] * q[j] for j in range(len(q))) for i in range(len(q))]
    s = sum(back)
    return np.array([float(v / s) for v in back]), math.log(s.numerator) - math.log(s.denominator)


@pytest.mark.parametrize("p", [P3, P4], ids=["reversal3", "reversal4"])
def test_recorded_return_maps_back_to_start(p):
    sys_ = SimplexSystem.largest(p)
    x, rng = start(sys_, 1)
    run = pseudo_orbit(sys_, x, 1, rng, record=True)
    b_mat = return_matrix(sys_, run.streaks_of(0))
    assert intlinalg.det(b_mat) == 1
    back, log_total = _pull_back(b_mat, run.final_point)
    assert np.abs(back - x).max() < 1e-9
    assert log_total - math.log(run.final_point.sum()) == pytest.approx(run.return_times[0], rel=1e-12)


@pytest.mark.parametrize("p", [P3, P4], ids=["reversal3", "reversal4"])
def test_product_mode_matches_exact_products(p):
    sys_ = SimplexSystem.largest(p)
    d = p.d
    x, _ = start(sys_, 1)
    v = np.full((d, 1), 1 / math.sqrt(d))
    run = pseudo_orbit(sys_, x, 4, np.random.default_rng(2), mode=MODE_PRODUCT, frame=v, record=True)
    m = intlinalg.identity(d)
    for n in range(4):
        m = intlinalg.matmul(return_matrix(sys_, run.streaks_of(n)), m)
        w = [sum(row) for row in m]
        exact = 0.5 * (math.log(sum(c * c for c in w)) - math.log(d))
        assert run.values[n, 0] == pytest.approx(exact, rel=1e-10)


def test_qr_increments_add_up_to_product_norms():
    sys_ = SimplexSystem.largest(P3)
    x, _ = start(sys_, 4)
    v = np.array([[0.6], [0.0], [0.8]])
    qr = pseudo_orbit(sys_, x, 200, np.random.default_rng(3), frame=v)
    prod = pseudo_orbit(sys_, x, 200, np.random.default_rng(3), frame=v, mode=MODE_PRODUCT)
    assert np.allclose(np.cumsum(qr.values[:, 0]), prod.values[:, 0], rtol=1e-9)


def test_runs_are_reproducible():
    sys_ = SimplexSystem.largest(P3)
    x, _ = start(sys_, 5)
    a = pseudo_orbit(sys_, x, 50, np.random.default_rng(9))
    b = pseudo_orbit(sys_, x, 50, np.random.default_rng(9))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.return_times, b.return_times)


def test_kernel_input_errors():
    sys_ = SimplexSystem.largest(P3)
    rng = np.random.default_rng(0)
    with pytest.raises(InputError):
        pseudo_orbit(sys_, [1.0, 100.0, 1.0], 1, rng)
    with pytest.raises(InputError):
        pseudo_orbit(sys_, [1.0, -1.0, 1.0], 1, rng)
    x, _ = start(sys_, 0)
    with pytest.raises(InputError):
        pseudo_orbit(sys_, x, 1, rng, mode=MODE_PRODUCT, dual=np.eye(3))
    with pytest.raises(EscapeError):
        pseudo_orbit(SimplexSystem.largest(P4), start(SimplexSystem.largest(P4), 0)[0], 50, rng, cap=2)
    run = pseudo_orbit(sys_, x, 1, rng)
    with pytest.raises(InputError):
        run.streaks_of(0)

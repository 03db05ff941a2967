import math

import numpy as np
import pytest

from mtcp import stats


def test_mean_and_proportion():
    m, se = stats.mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    p, se = stats.proportion_se(25, 100)
    assert p == 0.25 and se == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert math.isnan(stats.proportion_se(0, 0)[0])


def test_mann_kendall_exact_small_n():
    # with three points the smallest attainable p-value is 1/6
    t = stats.mann_kendall([1.0, 2.0, 3.0])
    assert t.S == 3 and t.p_increasing == pytest.approx(1 / 6)
    assert not t.rejects(0.05)
    assert stats.mann_kendall([3.0, 2.0, 1.0]).p_increasing == 1.0
    t = stats.mann_kendall(np.arange(8.0))
    assert t.p_increasing == pytest.approx(1 / math.factorial(8))
    assert t.rejects()
    assert stats.mann_kendall([1.0, math.nan, 2.0]).rejects()


def test_mann_kendall_normal_branch():
    t = stats.mann_kendall(np.arange(30.0)[::-1])
    assert t.p_increasing > 0.99
    t = stats.mann_kendall(np.arange(30.0))
    assert t.p_increasing < 1e-6


def test_increases_beyond():
    assert stats.increases_beyond([0.1, 0.1, 0.5], [0.01, 0.01, 0.01]) == [(0, 2), (1, 2)]
    assert stats.increases_beyond([0.3, 0.2], [0.01, 0.01]) == []


def test_tv_and_histogram():
    h = stats.histogram([-5, 0, 1, 1, 9], -2, 2)
    assert h.tolist() == [1, 0, 1, 2, 1]
    assert stats.tv([1, 1], [1, 1]) == 0.0
    assert stats.tv([1, 0], [0, 1]) == 1.0


def test_bootstrap_is_seeded():
    v = np.arange(50.0)
    a = stats.bootstrap_se(v, np.mean, B=100, seed=1)
    b = stats.bootstrap_se(v, np.mean, B=100, seed=1)
    assert a == b
    assert a == pytest.approx(v.std() / math.sqrt(50), rel=0.3)
    lo, hi = stats.bootstrap_ci(v, np.mean, B=400, seed=2)
    assert lo < 24.5 < hi


def test_shuffle_independence():
    rng = np.random.default_rng(0)
    iid = [rng.normal(size=(40, 2)) for _ in range(30)]
    _, p = stats.shuffle_independence(iid, B=99, seed=1)
    assert p > 0.01
    walk = [np.cumsum(rng.normal(size=(40, 2)), axis=0) for _ in range(30)]
    _, p = stats.shuffle_independence(walk, B=99, seed=1)
    assert p <= 0.01


def test_slopes_and_pooling():
    t = np.array([5.0, 10.0, 20.0, 40.0])
    assert stats.loglog_slope(t, 3 * t**-0.5) == pytest.approx(-0.5)
    est, se = stats.pool_inverse_variance([1.0, 3.0], [1.0, 1.0])
    assert est == 2.0 and se == pytest.approx(1 / math.sqrt(2))

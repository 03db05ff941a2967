import json
import math

import numpy as np
import pytest

from mtcp import perturbed_walk as pw
from mtcp.errors import EpsilonTooSmall, WindowLeakTooLarge


@pytest.fixture(scope="module")
def fam():
    return pw.geometric_family()


@pytest.fixture(scope="module")
def tab(fam):
    return pw.tables(fam)


def _convolve(p: pw.Pmf, k: int) -> tuple[int, np.ndarray]:
    m = np.array([1.0])
    for _ in range(k):
        m = np.convolve(m, p.mass)
    return k * p.lo, m


def test_pmf_validation():
    with pytest.raises(ValueError):
        pw.Pmf(0, [0.5, 0.6])
    with pytest.raises(ValueError):
        pw.Pmf(0, [-0.1, 1.1])
    with pytest.raises(ValueError):
        pw.Pmf(-1, [0.25, 0.5, 0.25], tail_bound=(1.0, 0.5))
    p = pw.Pmf(-1, [0.25, 0.5, 0.25], tail_bound=(0.5, 2.0))
    assert p(1) == 0.25 and p(5) == 0.0 and p.mean() == 0.0
    assert pw.Pmf.from_json(json.loads(json.dumps(p.to_json()))).mass.tolist() == p.mass.tolist()


def test_tv_distance():
    a = pw.Pmf(0, [0.5, 0.5])
    b = pw.Pmf(1, [0.5, 0.5])
    assert pw.tv_distance(a, b) == pytest.approx(0.5)
    assert pw.tv_distance(a, a) == 0.0


def test_geometric_family_is_valid(fam):
    rep = pw.validate_family(fam)
    assert rep.passed, [c for c in rep.checks if not c.passed]
    assert fam.g == pytest.approx(0.35)
    assert fam.L >= 1
    assert fam.G * math.exp(-fam.g * fam.L) < 1
    back = pw.PerturbedFamily.from_json(json.loads(json.dumps(fam.to_json())))
    assert back.L == fam.L and np.array_equal(back.pmf(3).mass, fam.pmf(3).mass)


def test_validation_witnesses():
    lazy = pw.lazy_family()
    skew = pw.PerturbedFamily(pw.Pmf(-1, [0.2, 0.5, 0.3]), {}, 0.5, 2.0, 1.0, 0.5, 1, 0)
    rep = pw.validate_family(skew)
    assert not rep["symm"].passed and rep["symm"].witness == 1
    assert pw.validate_family(lazy).passed
    gap = pw.PerturbedFamily(pw.Pmf(-1, [0.5, 0.0, 0.5]), {}, 0.5, 2.0, 1.0, 0.5, 1, 0)
    assert not pw.validate_family(gap)["support"].passed
    bad_tv = pw.geometric_family()
    bad_tv.G = 1e-6
    assert not pw.validate_family(bad_tv)["totvar"].passed


def test_decomposition_reconstructs(fam):
    worst = max(pw.decompose(fam, z).reconstruction_error(fam) for z in range(-fam.z_cap - 2, fam.z_cap + 3))
    assert worst <= 1e-12
    d = pw.decompose(fam, 10)
    assert d.epsilon == pytest.approx(fam.epsilon(10))
    for p in (d.b1, d.b2, d.g_shared):
        assert p.total() == pytest.approx(1.0, abs=1e-12)


def test_decomposition_needs_large_epsilon(fam):
    small = pw.geometric_family()
    small.G = 1e-9
    with pytest.raises(EpsilonTooSmall):
        pw.decompose(small, 10)


def test_step_chain_marginal(fam, tab):
    rng = np.random.default_rng(0)
    for x in (3, -7):
        steps = np.array([pw.step_chain(x, fam, tab, rng)[0] - x for _ in range(20000)])
        p = fam.pmf(x)
        lo, hi = -6, 6
        emp = np.array([(steps == k).mean() for k in range(lo, hi + 1)])
        assert np.abs(emp - p.on(lo, hi)).max() < 4 * math.sqrt(0.25 / 20000)
        assert steps.mean() == pytest.approx(p.mean(), abs=4 * 1.2 / math.sqrt(20000))


def test_coupled_path_marginals(fam, tab):
    rng = np.random.default_rng(1)
    x0, n = 9, 3
    paths = [pw.sample_coupled_path(fam, x0, n, rng, tab) for _ in range(20000)]
    # Y is a walk with steps from the base law
    lo, m = _convolve(fam.base, n)
    y = np.array([p.Y[n] - x0 for p in paths])
    emp = np.bincount(np.clip(y - lo, 0, m.size - 1), minlength=m.size) / y.size
    assert 0.5 * np.abs(emp - m).sum() < 0.03
    # X follows the perturbed law at the first step
    x1 = np.array([p.X[1] - x0 for p in paths])
    p1 = fam.pmf(x0)
    assert x1.mean() == pytest.approx(p1.mean(), abs=4 * 1.2 / math.sqrt(x1.size))
    for p in paths[:200]:
        lim = n + 1 if p.T is None else p.T
        assert np.array_equal(p.X[:lim], p.Y[:lim])


def test_lazy_oracle_value():
    lazy = pw.lazy_family()
    o = pw.oracle_hitting(lazy, 1, [1, 2], W=10, tol=1e-12)
    assert o[0].tail == pytest.approx(0.75, abs=1e-15)
    assert o[1].tail == pytest.approx(0.625, abs=1e-15)
    assert o[0].leak == 0.0


def test_oracle_one_step(fam):
    for x0 in (1, 2, 5):
        o = pw.oracle_hitting(fam, x0, [1], W=200)
        assert o[0].tail == pytest.approx(1.0 - fam.pmf(x0)(-x0), abs=1e-12)


def test_oracle_leak_guard(fam):
    with pytest.raises(WindowLeakTooLarge):
        pw.oracle_hitting(fam, 5, [1024], W=20, tol=1e-9)


def test_monte_carlo_matches_oracle(fam, tab):
    mc = pw.hitting_tail_mc(fam, 3, [16, 64], 40000, seed=5, tab=tab)
    orc = pw.oracle_hitting(fam, 3, [16, 64], W=300)
    for m, o in zip(mc, orc):
        assert abs(m.estimate - o.tail) <= 3 * m.stderr + o.leak


def test_hitting_is_reproducible(fam, tab):
    a = pw.hitting_times(fam, 4, 100, 500, 9, tab)
    b = pw.hitting_times(fam, 4, 100, 500, 9, tab)
    assert np.array_equal(a, b)


def test_stopping_suite_orders(fam, tab):
    s = pw.stopping_time_suite(fam, 5, 3000, seed=2, tab=tab)
    t1 = s.tau1
    assert np.all((t1 < 0) | (s.H_I < 0) | (t1 <= s.H_I))
    assert 0 <= s.tail(t1, 10) <= 1
    assert s.mean_abs_x_tau1_before_HI() >= 0
    assert s.mean_abs_x_neg_before_H0() >= 0


def test_delta_hat():
    assert pw.delta_hat(pw.lazy_family()) == 0.25


def test_visits_before_zero_lazy():
    # from 1 the lazy walk escapes to 0 with probability 1/4 per visit
    (y, mean, se), = pw.visits_before_zero(pw.lazy_family(), [1], 20000, seed=3)
    assert abs(mean - 4.0) < 4 * se + 0.05


def test_fit_tv_constants():
    z = np.array([1, 2, 4, 8])
    g, G = pw.fit_tv_constants(z, 0.7 * np.exp(-0.3 * z))
    assert g == pytest.approx(0.3) and G == pytest.approx(0.7)


def test_tails_csv(tmp_path, fam, tab):
    rows = [("H0", 3, e) for e in pw.hitting_tail_mc(fam, 3, [4, 8], 100, seed=1, tab=tab)]
    path = tmp_path / "t.csv"
    pw.tails_to_csv(rows, str(path), 1)
    lines = path.read_text().splitlines()
    assert lines[0] == "quantity,x0,N,estimate,stderr,replicas,seed" and len(lines) == 3


def test_start_inside_I(fam, tab):
    s = pw.stopping_time_suite(fam, 1, 2000, seed=4, tab=tab)
    assert np.all(s.H_I == 0) and np.all(s.tau1 == 0)
    d = pw.delta_hat(fam)
    lam = s.lambda1
    for N in (1, 2, 4):
        # geometric bound from the jump-to-0 probability inside I
        assert s.tail(lam, N) <= (1 - d) ** N + 3 * math.sqrt(0.25 / 2000)


def test_coupled_walk_from_zero_is_centred(fam, tab):
    rng = np.random.default_rng(11)
    y = np.array([pw.sample_coupled_path(fam, 0, 8, rng, tab).Y[8] for _ in range(5000)])
    assert abs(y.mean()) < 3 * y.std(ddof=1) / math.sqrt(y.size)


def test_zero_start_has_no_tail(fam, tab):
    assert all(e.estimate == 0 for e in pw.hitting_tail_mc(fam, 0, [4, 8], 100, tab=tab))
    assert all(o.tail == 0 for o in pw.oracle_hitting(fam, 0, [4], W=10))

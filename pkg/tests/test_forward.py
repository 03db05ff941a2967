import numpy as np
import pytest

from mtcp.errors import PreconditionViolated
from mtcp.forward import (
    OneTypeConfig, TypedConfig, check_monotone_coupling, count_k_inversions, decode_states,
    edge_of_ones, encode_states, evolve_multitype, evolve_multitype_grid, evolve_one_type,
    extinction_time, heaviside, interface_stats, type_presence, typed_config,
)
from mtcp.harris import from_events, nearest_neighbour, sample_harris, uniform_kernel

from oracles import events, multitype_naive, random_small


def _random_states(rng, n):
    return rng.integers(0, 3, size=n).astype(np.int8)


def test_run_length_round_trip():
    st = np.array([1, 1, 1, 0, 2, 2, 0], dtype=np.int8)
    assert encode_states(st) == "3*1,1*0,2*2,1*0"
    assert np.array_equal(decode_states(encode_states(st)), st)
    c = TypedConfig((-3, 3), st, (1, 2))
    d = TypedConfig.from_json(c.to_json())
    assert d.same_states(c) and d.exterior == (1, 2)
    with pytest.raises(ValueError):
        decode_states("3*4")


def test_heaviside_interface():
    c = heaviside((-5, 5))
    s = interface_stats(c)
    assert (s.r, s.l, s.rho) == (0, 1, -1)
    assert not s.boundary_contaminated


def test_k_inversions():
    c = typed_config((0, 5), ones=[3, 5], twos=[1, 2])
    assert count_k_inversions(c, 1) == 1
    assert count_k_inversions(c, 2) == 1
    assert count_k_inversions(c, 3) == 1
    assert count_k_inversions(c, 4) == 1
    with pytest.raises(ValueError):
        count_k_inversions(c, 0)


def test_multitype_matches_naive_sweep():
    rng = np.random.default_rng(3)
    for _ in range(500):
        H = random_small(rng, n_sites=9, max_events=12, R=int(rng.integers(1, 3)))
        st = _random_states(rng, H.n_sites)
        t = float(rng.uniform(0, 5.0))
        got = evolve_multitype(H, TypedConfig(H.window, st), t)
        want = multitype_naive(H, {x: int(v) for x, v in zip(range(H.lo, H.hi + 1), st)}, t)
        assert [got[x] for x in range(H.lo, H.hi + 1)] == [want[x] for x in range(H.lo, H.hi + 1)]


def test_grid_matches_single_times():
    H = sample_harris(uniform_kernel(2), 3.0, (-20, 20), 10.0, 4)
    c = heaviside(H.window)
    grid = [0.0, 1.5, 4.0, 4.0, 9.0]
    for t, g in zip(grid, evolve_multitype_grid(H, c, grid)):
        assert g.same_states(evolve_multitype(H, c, t))


def test_one_type_reduction_and_projection():
    # forgetting types gives the one-type process; a single type is the one-type process
    rng = np.random.default_rng(4)
    for i in range(200):
        H = sample_harris(nearest_neighbour(), 2.5, (-15, 15), 6.0, i)
        st = _random_states(rng, H.n_sites)
        t = float(rng.uniform(0, 6.0))
        typed = evolve_multitype(H, TypedConfig(H.window, st), t)
        occ = frozenset((np.flatnonzero(st) + H.lo).tolist())
        one = evolve_one_type(H, OneTypeConfig(H.window, occ), t)
        assert frozenset((np.flatnonzero(typed.states) + H.lo).tolist()) == one.occupied
        ones = evolve_multitype(H, TypedConfig(H.window, np.where(st > 0, 1, 0)), t)
        assert frozenset(ones.sites_of(1)) == one.occupied
        assert not ones.sites_of(2)


def test_monotone_coupling():
    rng = np.random.default_rng(5)
    for i in range(200):
        H = sample_harris(uniform_kernel(1 + i % 2), 2.0, (-12, 12), 5.0, i)
        b = _random_states(rng, H.n_sites)
        a = b.copy()
        # promote some sites towards 1 and away from 2
        up = rng.random(H.n_sites) < 0.3
        a[up & (a == 0)] = 1
        a[up & (a == 2)] = rng.choice([0, 1])
        pa, pb = TypedConfig(H.window, a), TypedConfig(H.window, b)
        assert check_monotone_coupling(H, pa, pb, [5.0])
        ea, eb = evolve_multitype(H, pa, 5.0).states, evolve_multitype(H, pb, 5.0).states
        assert np.all((eb != 1) | (ea == 1)) and np.all((ea != 2) | (eb == 2))


def test_monotone_precondition():
    w = (0, 4)
    H = from_events(nearest_neighbour(), 1.0, w, 1.0, [], [], [])
    with pytest.raises(PreconditionViolated):
        check_monotone_coupling(H, typed_config(w, twos=[1]), typed_config(w), [1.0])


def test_contamination_flags_are_sound():
    # evolve on a sub-window with unknown exterior and compare with the
    # wider system whenever the narrow answer claims certainty
    rng = np.random.default_rng(6)
    for i in range(100):
        W = sample_harris(nearest_neighbour(), 3.0, (-40, 40), 6.0, 100 + i)
        lo, hi = -10, 10
        ev = [(t, a, b) for t, a, b in events(W) if lo <= a <= hi and (b is None or lo <= b <= hi)]
        sub = from_events(W.kernel, W.lam, (lo, hi), W.horizon, [e[0] for e in ev], [e[1] for e in ev], [e[2] for e in ev])
        wide = evolve_multitype(W, heaviside(W.window), 6.0)
        narrow = evolve_multitype(sub, heaviside(sub.window), 6.0)
        unc = set(narrow.uncertain.tolist())
        for x in range(lo, hi + 1):
            if x not in unc:
                assert narrow[x] == wide[x]
        s_n, s_w = interface_stats(narrow), interface_stats(wide)
        if not s_n.boundary_contaminated:
            assert (s_n.r, s_n.l) == (s_w.r, s_w.l)
        for kind in (1, 2):
            p = type_presence(narrow, kind)
            if not p.boundary_contaminated:
                assert p.value == bool(np.any(wide.states == kind))


def test_edge_and_extinction_time():
    H = from_events(nearest_neighbour(), 1.0, (-2, 3), 4.0, [1.0, 2.0], [0, -1], [None, None])
    pts = edge_of_ones(H, [0.5, 1.5, 2.5])
    assert [p.edge for p in pts] == [0, -1, -2]
    assert extinction_time(pts) is None

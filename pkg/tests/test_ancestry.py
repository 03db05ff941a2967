import numpy as np
import pytest

from mtcp.ancestry import (
    DELTA, ancestor_table, check_interface_event, coalescence_time, count_dual_inversions,
    find_joint_renewals, find_renewals, first_ancestor_trajectory, inversions_from_first,
    relevant_sites, site_in_ancestor_set, trace_ancestry, truncated_ancestor_set,
)
from mtcp.errors import AncestryDied
from mtcp.forward import TypedConfig, evolve_multitype
from mtcp.harris import cluster, from_events, nearest_neighbour, reverse, sample_harris, snap_time, uniform_kernel

from oracles import ordered_starts, paths_into, random_small


def test_stay_beats_jump():
    # an arrow 1 -> 0 at time 1: tracing 0 backwards jumps to 1, but staying ranks first
    H = from_events(nearest_neighbour(), 1.0, (-2, 2), 3.0, [1.0], [0], [1])
    assert list(trace_ancestry(H, 0, 2.0)) == [0, 1]
    H = from_events(nearest_neighbour(), 1.0, (-2, 2), 3.0, [0.5, 1.0], [0, 0], [1, None])
    assert list(trace_ancestry(H, 0, 2.0)) == [1]


def test_dead_ancestry():
    H = from_events(nearest_neighbour(), 1.0, (-2, 2), 3.0, [1.0], [0], [None])
    h = trace_ancestry(H, 0, 2.0)
    assert h.dead and h.first is DELTA


def test_hierarchy_matches_path_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(300):
        R = int(rng.integers(1, 3))
        H = random_small(rng, n_sites=int(rng.integers(2 * R + 1, 10)), max_events=12, R=R)
        t = snap_time(rng.uniform(0.5, 5.0))
        G = reverse(H, t)
        for x in range(H.lo, H.hi + 1):
            assert list(trace_ancestry(H, x, t)) == ordered_starts(G, x, t)


def test_duality_with_forward_evolution():
    rng = np.random.default_rng(8)
    for i in range(40):
        H = sample_harris(uniform_kernel(1 + i % 2), 2.0, (-25, 25), 10.0, i)
        t = snap_time(rng.uniform(0, 10.0))
        st = rng.integers(0, 3, size=H.n_sites).astype(np.int8)
        fwd = evolve_multitype(H, TypedConfig(H.window, st), t)
        G = reverse(H, t)
        for x in range(H.lo, H.hi + 1):
            v = 0
            for y in trace_ancestry(G, x, t):
                if st[y - H.lo]:
                    v = int(st[y - H.lo])
                    break
            assert fwd[x] == v


def test_table_and_trajectory_agree_with_hierarchy():
    H = sample_harris(nearest_neighbour(), 3.0, (-20, 20), 8.0, 11)
    grid = [1.0, 2.5, 5.0, 8.0]
    for t in grid:
        tab = ancestor_table(H, t, 50)
        for x in range(-20, 21, 3):
            assert tab.ancestors(x) == list(trace_ancestry(H, x, t))
    traj = first_ancestor_trajectory(H, 0, grid)
    assert [a for _, a in traj] == [trace_ancestry(H, 0, t).first for t in grid]


def test_truncated_sets_and_membership():
    H = sample_harris(nearest_neighbour(), 3.0, (-20, 20), 6.0, 12)
    tab = ancestor_table(H, 6.0, 2)
    s = truncated_ancestor_set(H, [-1, 0, 1], 2, 6.0)
    assert set(s) == set(tab.ancestors(-1) + tab.ancestors(0) + tab.ancestors(1))
    members = {y for x in range(-20, 21) for y in tab.ancestors(x)}
    for y in range(-20, 21):
        assert bool(site_in_ancestor_set(H, y, 2, 6.0)) == (y in members)


def test_hierarchy_of_lineage_point_is_a_path():
    rng = np.random.default_rng(9)
    for _ in range(100):
        H = random_small(rng, n_sites=9, max_events=12)
        t = snap_time(5.0)
        G = reverse(H, t)
        for x in range(H.lo, H.hi + 1):
            starts = {p[0] for p in paths_into(G, x, t)}
            assert set(trace_ancestry(H, x, t)) == starts


def test_renewals_structure():
    H = sample_harris(nearest_neighbour(), 4.0, (-150, 150), 130.0, 0)
    recs = find_renewals(H, 0, 30.0)
    assert recs[-1].censored and all(not r.censored for r in recs[:-1])
    prev_t, prev_s = 0.0, 0
    for r in recs[:-1]:
        assert r.increment_time >= 1.0 - 1e-12
        assert r.increment_space == r.site - prev_s
        assert trace_ancestry(H, 0, r.time).first == r.site
        # the renewal point survives the margin
        assert cluster(H, [r.site], r.time, r.time + 30.0).alive
        prev_t, prev_s = r.time, r.site
    assert recs[-1].time + 30.0 > H.horizon or recs[-1].site is DELTA


def test_renewals_of_dead_lineage():
    H = from_events(nearest_neighbour(), 1.0, (-3, 3), 40.0, [1.0], [0], [None])
    with pytest.raises(AncestryDied):
        find_renewals(H, 0, 10.0)
    with pytest.raises(ValueError):
        find_renewals(H, 0, 39.5)


def test_joint_renewals_are_common_renewals():
    for seed in range(20):
        H = sample_harris(nearest_neighbour(), 4.0, (-150, 150), 130.0, seed)
        try:
            jr = find_joint_renewals(H, 0, 3, 30.0)
        except AncestryDied:
            continue
        if len(jr) > 2:
            break
    assert len(jr) > 2
    for r in jr:
        if r.censored:
            continue
        assert trace_ancestry(H, 0, r.time).first == r.site_x
        assert trace_ancestry(H, 3, r.time).first == r.site_y
        assert cluster(H, [r.site_x], r.time, r.time + 30.0).alive
        assert cluster(H, [r.site_y], r.time, r.time + 30.0).alive


def test_coalescence_outcomes():
    H = sample_harris(nearest_neighbour(), 4.0, (-100, 100), 100.0, 3)
    c = coalescence_time(H, 0, 1, 30.0)
    assert c.kind in ("both-survive", "one-died", "both-died", "censored")
    if c.kind == "both-survive":
        assert c.differences[0] == 1 and c.differences[-1] == 0
        assert c.exceeds(c.time - 1) and not c.exceeds(c.time)
    # both die at once: J = 0
    D = from_events(nearest_neighbour(), 1.0, (-3, 3), 40.0, [0.5, 0.6], [0, 1], [None, None])
    c = coalescence_time(D, 0, 1, 10.0)
    assert c.kind == "both-died" and c.time == 0.0


def test_inversions_from_first():
    first = np.array([1.0, -1.0, np.nan, 0.0, 2.0])
    sites = np.arange(5)
    n, pairs = inversions_from_first(first, sites)
    assert n == 2 and pairs == [(0, 1), (0, 3)]


def test_dual_inversions_match_table():
    H = sample_harris(uniform_kernel(2), 3.0, (-30, 30), 10.0, 5)
    d = count_dual_inversions(H, 10.0, (-10, 10))
    f = ancestor_table(H, 10.0, 1).first()[20:41]
    brute = sum(1 for i in range(21) for j in range(i + 1, 21)
                if not np.isnan(f[i]) and not np.isnan(f[j]) and f[i] > 0 >= f[j])
    assert d.count == brute == len(d.pairs)


def test_relevant_sites_determine_the_state():
    # xi_t is read off xi_s through the relevant sites
    rng = np.random.default_rng(10)
    for i in range(20):
        H = sample_harris(nearest_neighbour(), 4.0, (-30, 30), 12.0, 50 + i)
        s, t = 4.0, 12.0
        st = rng.integers(0, 3, size=H.n_sites).astype(np.int8)
        G = reverse(H, t)
        mid = evolve_multitype(G, TypedConfig(G.window, st), t - s)
        end = evolve_multitype(G, TypedConfig(G.window, st), t)
        rel = relevant_sites(H, s, t, range(-5, 6))
        for x, y in rel.mapping.items():
            # the relevant ancestor lives forward on [t - s, t] in G's time
            assert end[x] != 0 or mid[y] == 0
        assert isinstance(check_interface_event(H, s, t, range(-5, 6)).value, bool)

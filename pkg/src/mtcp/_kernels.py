"""Compiled event sweeps.

Every sweep walks the merged event arrays of a construction:
``ev_t`` (times, increasing), ``ev_s`` (source index) and ``ev_d``
(target index, -1 for a death mark at ``ev_s``).  Sites are window
indices ``0..n-1``; the collar is the ``R`` sites at either edge.
"""

import numpy as np
from numba import njit

VACANT = np.uint8(1)
ONE = np.uint8(2)
TWO = np.uint8(4)
NONZERO = np.uint8(6)


@njit(cache=True)
def in_collar(k, n, R):
    return k < R or k >= n - R


# ---------------------------------------------------------------------------
# one-type clusters


@njit(cache=True)
def cluster_sweep(ev_t, ev_s, ev_d, n, R, init, i0, t_end, origin):
    """Occupied set started from ``init`` just after event ``i0 - 1``.

    Returns (alive, end_time, max_disp, touched, occ); ``end_time`` is the
    death time when the set dies out before ``t_end``.
    """
    occ = np.zeros(n, np.bool_)
    cnt = 0
    touched = False
    maxd = 0
    for k in init:
        if not occ[k]:
            occ[k] = True
            cnt += 1
            if in_collar(k, n, R):
                touched = True
            d = abs(k - origin)
            if d > maxd:
                maxd = d
    if cnt == 0:
        return False, -1.0, 0, touched, occ
    i = i0
    E = ev_t.shape[0]
    while i < E and ev_t[i] <= t_end:
        a = ev_s[i]
        b = ev_d[i]
        if b < 0:
            if occ[a]:
                occ[a] = False
                cnt -= 1
                if cnt == 0:
                    return False, ev_t[i], maxd, touched, occ
        elif occ[a] and not occ[b]:
            occ[b] = True
            cnt += 1
            if in_collar(b, n, R):
                touched = True
            d = abs(b - origin)
            if d > maxd:
                maxd = d
        i += 1
    return True, t_end, maxd, touched, occ


@njit(cache=True)
def point_survives(ev_t, ev_s, ev_d, n, R, site, i0, t_end):
    """Whether the cluster of a single point is alive at ``t_end``."""
    init = np.empty(1, np.int64)
    init[0] = site
    alive, _, _, touched, _ = cluster_sweep(ev_t, ev_s, ev_d, n, R, init, i0, t_end, site)
    return alive, touched


# ---------------------------------------------------------------------------
# typed sweep with possible-state sets


@njit(cache=True)
def _fix_collar(poss, ext, side, n, R):
    lo = 0 if side == 0 else n - R
    hi = R if side == 0 else n
    changed = True
    while changed:
        changed = False
        for k in range(lo, hi):
            nz = poss[k] & NONZERO
            if (ext[side] | nz) != ext[side]:
                ext[side] = ext[side] | nz
                changed = True
        for k in range(lo, hi):
            if poss[k] & VACANT:
                add = ext[side] & ~poss[k] & NONZERO
                if add:
                    poss[k] = poss[k] | add
                    changed = True


@njit(cache=True)
def typed_init(poss, ext, n, R):
    _fix_collar(poss, ext, 0, n, R)
    _fix_collar(poss, ext, 1, n, R)


@njit(cache=True)
def typed_sweep(ev_s, ev_d, i0, i1, state, poss, ext, n, R):
    """Apply events ``i0..i1-1`` to a typed state and its possible sets."""
    for i in range(i0, i1):
        a = ev_s[i]
        b = ev_d[i]
        if b < 0:
            state[a] = 0
            poss[a] = VACANT
            c = a
        else:
            if state[b] == 0:
                state[b] = state[a]
            if poss[b] & VACANT:
                poss[b] = (poss[b] & ~VACANT) | poss[a]
            c = b
        if c < R:
            _fix_collar(poss, ext, 0, n, R)
        elif c >= n - R:
            _fix_collar(poss, ext, 1, n, R)


@njit(cache=True)
def pair_sweep(ev_s, ev_d, i1, s1, s2):
    """Evolve two typed states together; index of the first event after
    which an inclusion fails, or -1."""
    for i in range(i1):
        a = ev_s[i]
        b = ev_d[i]
        if b < 0:
            s1[a] = 0
            s2[a] = 0
            continue
        if s1[b] == 0:
            s1[b] = s1[a]
        if s2[b] == 0:
            s2[b] = s2[a]
        if (s2[b] == 1 and s1[b] != 1) or (s1[b] == 2 and s2[b] != 2):
            return i
    return -1


# ---------------------------------------------------------------------------
# labelled top-N lists (ancestor tables for every site at once)


@njit(cache=True)
def topn_sweep(ev_s, ev_d, i1, n, N, R):
    """Forward sweep of ordered label lists on a reversed construction.

    ``lists[x, :length[x]]`` are the first ``N`` distinct starting sites of
    paths ending at ``x``, best first; ``unc[x]`` marks lists that may
    differ on the infinite lattice.
    """
    lists = np.full((n, N), -1, np.int64)
    length = np.ones(n, np.int64)
    unc = np.zeros(n, np.bool_)
    for x in range(n):
        lists[x, 0] = x
        if N > 1 and in_collar(x, n, R):
            unc[x] = True
    for i in range(i1):
        a = ev_s[i]
        b = ev_d[i]
        if b < 0:
            for k in range(length[a]):
                lists[a, k] = -1
            length[a] = 0
            unc[a] = in_collar(a, n, R)
            continue
        lb = length[b]
        if lb >= N:
            continue
        if unc[a]:
            unc[b] = True
        for k in range(length[a]):
            e = lists[a, k]
            dup = False
            for j in range(lb):
                if lists[b, j] == e:
                    dup = True
                    break
            if not dup:
                lists[b, lb] = e
                lb += 1
                if lb >= N:
                    break
        length[b] = lb
        if lb < N and in_collar(b, n, R):
            unc[b] = True
    return lists, length, unc


# ---------------------------------------------------------------------------
# ordered candidate hierarchy


@njit(cache=True)
def h_remove(order, pos, m, y):
    p = pos[y]
    for k in range(p, m - 1):
        order[k] = order[k + 1]
        pos[order[k]] = k
    pos[y] = -1
    return m - 1


@njit(cache=True)
def h_spawn(order, pos, m, a, b):
    """Insert ``b`` right after candidate ``a`` unless it already ranks higher."""
    pa = pos[a]
    pb = pos[b]
    if pb >= 0:
        if pb < pa:
            return m
        top = pb
        grow = 0
    else:
        top = m
        grow = 1
    for k in range(top, pa + 1, -1):
        order[k] = order[k - 1]
        pos[order[k]] = k
    order[pa + 1] = b
    pos[b] = pa + 1
    return m + grow


@njit(cache=True)
def h_apply(order, pos, m, a, b):
    if b < 0:
        if pos[a] >= 0:
            return h_remove(order, pos, m, a)
        return m
    if pos[a] >= 0:
        return h_spawn(order, pos, m, a, b)
    return m


@njit(cache=True)
def h_new(n, sites):
    order = np.full(n + 1, -1, np.int64)
    pos = np.full(n, -1, np.int64)
    m = 0
    for s in sites:
        if pos[s] < 0:
            order[m] = s
            pos[s] = m
            m += 1
    return order, pos, m


@njit(cache=True)
def h_touches(order, m, n, R):
    for k in range(m):
        if in_collar(order[k], n, R):
            return True
    return False


@njit(cache=True)
def hier_trace(ev_t, ev_s, ev_d, n, R, start, i0, t_grid):
    """Run the hierarchy from ``start`` (ordered) over a sorted time grid.

    Returns per-grid first candidate (-1 when dead), candidate count,
    cumulative collar flag, and the final ordered candidates.
    """
    order, pos, m = h_new(n, start)
    g = t_grid.shape[0]
    first = np.full(g, -1, np.int64)
    count = np.zeros(g, np.int64)
    touched = np.zeros(g, np.bool_)
    tch = h_touches(order, m, n, R)
    i = i0
    E = ev_t.shape[0]
    for j in range(g):
        while i < E and ev_t[i] <= t_grid[j]:
            b = ev_d[i]
            m = h_apply(order, pos, m, ev_s[i], b)
            if b >= 0 and pos[ev_s[i]] >= 0 and in_collar(b, n, R):
                tch = True
            i += 1
        first[j] = order[0] if m > 0 else -1
        count[j] = m
        touched[j] = tch
    return first, count, touched, order[:m].copy()


# ---------------------------------------------------------------------------
# renewal scans


@njit(cache=True)
def scan_renewals(ev_t, ev_s, ev_d, n, R, x, margin, horizon, max_rec):
    """Single-lineage renewal scan.

    Returns (nrec, times, sites, contaminated, status, stop_time, stop_site)
    with status 0 = stopped by the horizon, 1 = ancestry died,
    2 = record buffer full.
    """
    times = np.empty(max_rec, np.float64)
    sites = np.empty(max_rec, np.int64)
    contam = np.zeros(max_rec, np.bool_)
    start = np.empty(1, np.int64)
    start[0] = x
    order, pos, m = h_new(n, start)
    dirty = in_collar(x, n, R)
    E = ev_t.shape[0]
    i = 0
    seg = 0.0
    nrec = 0
    while True:
        target = seg + 1.0
        while i < E and ev_t[i] <= target:
            a = ev_s[i]
            b = ev_d[i]
            if b >= 0 and pos[a] >= 0 and in_collar(b, n, R):
                dirty = True
            m = h_apply(order, pos, m, a, b)
            i += 1
            if m == 0:
                return nrec, times, sites, contam, 1, ev_t[i - 1], -1
        u = target
        cand = order[0]
        while True:
            if u + margin > horizon:
                return nrec, times, sites, contam, 0, u, cand
            alive, tch = point_survives(ev_t, ev_s, ev_d, n, R, cand, i, u + margin)
            if alive:
                break
            if tch:
                dirty = True
            f = order[0]
            changed = False
            while i < E:
                a = ev_s[i]
                b = ev_d[i]
                if b >= 0 and pos[a] >= 0 and in_collar(b, n, R):
                    dirty = True
                m = h_apply(order, pos, m, a, b)
                i += 1
                if m == 0:
                    return nrec, times, sites, contam, 1, ev_t[i - 1], -1
                if order[0] != f:
                    changed = True
                    break
            if not changed:
                return nrec, times, sites, contam, 0, horizon, cand
            u = ev_t[i - 1]
            cand = order[0]
        if nrec >= max_rec:
            return nrec, times, sites, contam, 2, u, cand
        times[nrec] = u
        sites[nrec] = cand
        contam[nrec] = dirty
        nrec += 1
        for k in range(m):
            pos[order[k]] = -1
        order[0] = cand
        pos[cand] = 0
        m = 1
        seg = u


@njit(cache=True)
def scan_joint(ev_t, ev_s, ev_d, n, R, x, y, margin, horizon, max_rec, stop_on_meet):
    """Joint renewal scan of two lineages.

    Status 0 = horizon, 1 = lineage of x died, 2 = lineage of y died,
    3 = buffer full, 4 = stopped at the first coalesced renewal.
    """
    times = np.empty(max_rec, np.float64)
    sx = np.empty(max_rec, np.int64)
    sy = np.empty(max_rec, np.int64)
    contam = np.zeros(max_rec, np.bool_)
    s1 = np.empty(1, np.int64)
    s1[0] = x
    s2 = np.empty(1, np.int64)
    s2[0] = y
    o1, p1, m1 = h_new(n, s1)
    o2, p2, m2 = h_new(n, s2)
    dirty = in_collar(x, n, R) or in_collar(y, n, R)
    E = ev_t.shape[0]
    i = 0
    seg = 0.0
    nrec = 0
    while True:
        target = seg + 1.0
        while i < E and ev_t[i] <= target:
            a = ev_s[i]
            b = ev_d[i]
            if b >= 0 and (p1[a] >= 0 or p2[a] >= 0) and in_collar(b, n, R):
                dirty = True
            m1 = h_apply(o1, p1, m1, a, b)
            m2 = h_apply(o2, p2, m2, a, b)
            i += 1
            if m1 == 0:
                return nrec, times, sx, sy, contam, 1, ev_t[i - 1]
            if m2 == 0:
                return nrec, times, sx, sy, contam, 2, ev_t[i - 1]
        u = target
        while True:
            if u + margin > horizon:
                return nrec, times, sx, sy, contam, 0, u
            c1 = o1[0]
            c2 = o2[0]
            ok1, t1 = point_survives(ev_t, ev_s, ev_d, n, R, c1, i, u + margin)
            ok2 = True
            t2 = False
            if ok1 and c2 != c1:
                ok2, t2 = point_survives(ev_t, ev_s, ev_d, n, R, c2, i, u + margin)
            if ok1 and ok2:
                break
            if (not ok1 and t1) or (not ok2 and t2):
                dirty = True
            changed = False
            while i < E:
                a = ev_s[i]
                b = ev_d[i]
                if b >= 0 and (p1[a] >= 0 or p2[a] >= 0) and in_collar(b, n, R):
                    dirty = True
                m1 = h_apply(o1, p1, m1, a, b)
                m2 = h_apply(o2, p2, m2, a, b)
                i += 1
                if m1 == 0:
                    return nrec, times, sx, sy, contam, 1, ev_t[i - 1]
                if m2 == 0:
                    return nrec, times, sx, sy, contam, 2, ev_t[i - 1]
                if o1[0] != c1 or o2[0] != c2:
                    changed = True
                    break
            if not changed:
                return nrec, times, sx, sy, contam, 0, horizon
            u = ev_t[i - 1]
        if nrec >= max_rec:
            return nrec, times, sx, sy, contam, 3, u
        c1 = o1[0]
        c2 = o2[0]
        times[nrec] = u
        sx[nrec] = c1
        sy[nrec] = c2
        contam[nrec] = dirty
        nrec += 1
        if stop_on_meet and c1 == c2:
            return nrec, times, sx, sy, contam, 4, u
        for k in range(m1):
            p1[o1[k]] = -1
        for k in range(m2):
            p2[o2[k]] = -1
        o1[0] = c1
        p1[c1] = 0
        m1 = 1
        o2[0] = c2
        p2[c2] = 0
        m2 = 1
        seg = u


# ---------------------------------------------------------------------------
# descendancy barrier


@njit(cache=True)
def _barrier_bad(A, L, Rt, X, T1, T2, x, reach, strict, n, aug):
    for y in range(n):
        if X[y]:
            continue
        d = abs(y - x)
        inside = (d < reach) if strict else (d <= reach)
        if inside and (A[y] or (aug and (T1[y] or T2[y]))):
            return True
        if y > x and (L[y] or (aug and T1[y])):
            return True
        if y < x and (Rt[y] or (aug and T2[y])):
            return True
    return False


@njit(cache=True)
def barrier_sweep(ev_t, ev_s, ev_d, n, R, x, rho, t_check):
    """Check the barrier property at ``x`` on [0, t_check].

    Returns (holds_in_window, holds_with_taint, x_touched_collar).
    """
    A = np.ones(n, np.bool_)
    L = np.zeros(n, np.bool_)
    Rt = np.zeros(n, np.bool_)
    X = np.zeros(n, np.bool_)
    T1 = np.zeros(n, np.bool_)
    T2 = np.zeros(n, np.bool_)
    for k in range(n):
        if k < x:
            L[k] = True
        elif k > x:
            Rt[k] = True
        if k < R:
            T1[k] = True
        if k >= n - R:
            T2[k] = True
    X[x] = True
    xt = in_collar(x, n, R)
    ok = True
    ok_aug = True
    ok = not _barrier_bad(A, L, Rt, X, T1, T2, x, 0.0, False, n, False)
    ok_aug = not _barrier_bad(A, L, Rt, X, T1, T2, x, 0.0, False, n, True)
    E = ev_t.shape[0]
    i = 0
    while i < E and ev_t[i] <= t_check and (ok or ok_aug):
        reach = rho * ev_t[i]
        if ok and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, True, n, False):
            ok = False
        if ok_aug and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, True, n, True):
            ok_aug = False
        a = ev_s[i]
        b = ev_d[i]
        if b < 0:
            A[a] = False
            L[a] = False
            Rt[a] = False
            X[a] = False
            T1[a] = a < R
            T2[a] = a >= n - R
        else:
            if A[a]:
                A[b] = True
            if L[a]:
                L[b] = True
            if Rt[a]:
                Rt[b] = True
            if X[a]:
                X[b] = True
                if in_collar(b, n, R):
                    xt = True
            if T1[a]:
                T1[b] = True
            if T2[a]:
                T2[b] = True
        if ok and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, False, n, False):
            ok = False
        if ok_aug and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, False, n, True):
            ok_aug = False
        i += 1
    reach = rho * t_check
    if ok and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, False, n, False):
        ok = False
    if ok_aug and _barrier_bad(A, L, Rt, X, T1, T2, x, reach, False, n, True):
        ok_aug = False
    return ok, ok_aug, xt

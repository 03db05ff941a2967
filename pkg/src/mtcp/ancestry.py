"""Dual ancestry: ordered ancestor lists, renewals, coalescence and related sets.

All functions read the construction as the one driving the ancestry, i.e.
dual time runs forward along ``H``.  The ancestors of ``x`` at time ``t``
are the sites ``y`` with a path from ``(x, 0)`` to ``(y, t)``, ranked by the
path order: a lineage that stays put outranks one that jumps at the same
moment, and the earliest disagreement decides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import AncestryDied, EitherAncestryDied
from .forward import Flagged
from .harris import HarrisConstruction, reverse


class _Delta:
    """The dead ancestor.  Deliberately supports no arithmetic."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DELTA"

    def __reduce__(self):
        return (_Delta, ())


DELTA = _Delta()


def _site(H, k: int):
    return DELTA if k < 0 else int(k) + H.lo


@dataclass(frozen=True)
class AncestorHierarchy:
    """Ranked live candidates of ``source`` at dual time ``dual_clock``."""

    source: int
    dual_clock: float
    candidates: tuple
    boundary_flags: tuple
    boundary_contaminated: bool

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, k):
        return self.candidates[k]

    def __eq__(self, other):
        if isinstance(other, AncestorHierarchy):
            return self.candidates == other.candidates
        if isinstance(other, (list, tuple)):
            return list(self.candidates) == list(other)
        return NotImplemented

    def __hash__(self):
        return hash(self.candidates)

    @property
    def dead(self) -> bool:
        return not self.candidates

    @property
    def first(self):
        return self.candidates[0] if self.candidates else DELTA


def _hier(H, start_sites, s, grid):
    start = np.array([H.index(v) for v in start_sites], dtype=np.int64)
    return K.hier_trace(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, start, H.events_upto(s), np.asarray(grid, dtype=np.float64))


def trace_ancestry(H: HarrisConstruction, x: int, t: float, start_time: float = 0.0) -> AncestorHierarchy:
    """Ancestors of ``(x, start_time)`` at dual time ``t``, best first."""
    if t > H.horizon:
        raise ValueError("t beyond horizon")
    first, count, touched, order = _hier(H, [x], start_time, [t])
    n, R = H.n_sites, H.R
    flags = tuple(bool(K.in_collar(k, n, R)) for k in order)
    return AncestorHierarchy(x, float(t), tuple(int(k) + H.lo for k in order), flags, bool(touched[0]))


class Trajectory(list):
    """List of ``(t, ancestor)`` pairs with per-point contamination flags."""

    boundary_contaminated: list


def first_ancestor_trajectory(H: HarrisConstruction, x: int, t_grid) -> Trajectory:
    grid = [float(t) for t in t_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted")
    if grid and grid[-1] > H.horizon:
        raise ValueError("grid beyond horizon")
    first, _, touched, _ = _hier(H, [x], 0.0, grid)
    out = Trajectory((t, _site(H, int(f))) for t, f in zip(grid, first))
    out.boundary_contaminated = [bool(v) for v in touched]
    return out


def count_live_ancestors(H: HarrisConstruction, x: int, s: float) -> int:
    return len(trace_ancestry(H, x, s))


# ---------------------------------------------------------------------------
# renewals


@dataclass(frozen=True)
class RenewalRecord:
    index: int
    time: float
    site: object
    increment_space: int | None
    increment_time: float
    censored: bool
    boundary_contaminated: bool = False


@dataclass(frozen=True)
class JointRenewalRecord:
    index: int
    time: float
    site_x: object
    site_y: object
    censored: bool
    boundary_contaminated: bool = False

    @property
    def difference(self):
        if self.site_x is DELTA or self.site_y is DELTA:
            return None
        return self.site_y - self.site_x


_MAX_REC = 4096


def _check_margin(H, margin):
    if margin <= 0:
        raise ValueError("margin must be positive")
    if H.horizon - margin <= 1:
        raise ValueError("horizon must exceed margin + 1")


def _raw_renewals(H, x, margin):
    return K.scan_renewals(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, H.index(x), float(margin), float(H.horizon), _MAX_REC)


def find_renewals(H: HarrisConstruction, x: int, margin: float = 30.0) -> list[RenewalRecord]:
    """Renewal points of the first-ancestor lineage of ``x``.

    A point counts as surviving forever when its cluster is alive ``margin``
    time units later.  The list ends with one censored record marking where
    the search stopped (``site`` is DELTA if the lineage died).
    """
    _check_margin(H, margin)
    nrec, times, sites, contam, status, stop_t, stop_site = _raw_renewals(H, x, margin)
    if status == 1 and nrec == 0:
        raise AncestryDied(f"ancestry of {x} died at {stop_t}")
    out = []
    prev_t, prev_s = 0.0, x
    for k in range(nrec):
        s = int(sites[k]) + H.lo
        t = float(times[k])
        out.append(RenewalRecord(k + 1, t, s, s - prev_s, t - prev_t, False, bool(contam[k])))
        prev_t, prev_s = t, s
    last = _site(H, int(stop_site))
    inc = None if last is DELTA else last - prev_s
    dirty = bool(contam[nrec - 1]) if nrec else False
    out.append(RenewalRecord(nrec + 1, float(stop_t), last, inc, float(stop_t) - prev_t, True, dirty))
    return out


def _raw_joint(H, x, y, margin, stop_on_meet):
    return K.scan_joint(
        H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, H.index(x), H.index(y),
        float(margin), float(H.horizon), _MAX_REC, stop_on_meet,
    )


def find_joint_renewals(H: HarrisConstruction, x: int, y: int, margin: float = 30.0, stop_on_meet: bool = False) -> list[JointRenewalRecord]:
    _check_margin(H, margin)
    nrec, times, sx, sy, contam, status, stop_t = _raw_joint(H, x, y, margin, stop_on_meet)
    if status in (1, 2) and nrec == 0:
        who = x if status == 1 else y
        raise EitherAncestryDied(f"ancestry of {who} died at {stop_t}")
    out = [
        JointRenewalRecord(k + 1, float(times[k]), int(sx[k]) + H.lo, int(sy[k]) + H.lo, False, bool(contam[k]))
        for k in range(nrec)
    ]
    if status != 4:
        dirty = bool(contam[nrec - 1]) if nrec else False
        dx = DELTA if status == 1 else None
        dy = DELTA if status == 2 else None
        out.append(JointRenewalRecord(nrec + 1, float(stop_t), dx, dy, True, dirty))
    return out


@dataclass(frozen=True)
class Coalescence:
    """First renewal after coalescence.

    ``time`` is None when censored; ``lower_bound`` then bounds it below.
    ``differences`` lists y - x at the clean joint renewals, starting with
    the initial pair when both lineages survive.
    """

    time: float | None
    kind: str
    lower_bound: float
    boundary_contaminated: bool = False
    differences: tuple = ()

    def exceeds(self, t: float) -> bool | None:
        """Whether J > t, or None when censoring leaves it undecided."""
        if self.time is not None:
            return self.time > t
        return True if self.lower_bound >= t else None


def _lifetime(H, x):
    init = np.array([H.index(x)], dtype=np.int64)
    alive, end, _, touched, _ = K.cluster_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, init, 0, float(H.horizon), init[0])
    return bool(alive), float(end), bool(touched)


def _after_death(H, survivor, death, margin, dirty):
    nrec, times, sites, contam, status, stop_t, _ = _raw_renewals(H, survivor, margin)
    for k in range(nrec):
        if times[k] > death:
            return Coalescence(float(times[k]), "one-died", float(times[k]), bool(contam[k]) or dirty)
    bad = dirty or (bool(contam[nrec - 1]) if nrec else False)
    return Coalescence(None, "censored", float(stop_t), bad)


def coalescence_time(H: HarrisConstruction, x: int, y: int, margin: float = 30.0) -> Coalescence:
    _check_margin(H, margin)
    ax, dx, tx = _lifetime(H, x)
    ay, dy, ty = _lifetime(H, y)
    if not ax and not ay:
        return Coalescence(0.0, "both-died", 0.0, tx or ty)
    if ax and ay:
        nrec, times, sx, sy, contam, status, stop_t = _raw_joint(H, x, y, margin, True)
        # contamination is sticky, so the clean records form a prefix
        diffs = (y - x,) + tuple(int(sy[k] - sx[k]) for k in range(nrec) if not contam[k])
        if status == 4:
            return Coalescence(float(times[nrec - 1]), "both-survive", float(times[nrec - 1]), bool(contam[nrec - 1]), diffs)
        bad = bool(contam[nrec - 1]) if nrec else False
        return Coalescence(None, "censored", float(stop_t), bad, diffs)
    if ax:
        return _after_death(H, x, dy, margin, ty)
    return _after_death(H, y, dx, margin, tx)


# ---------------------------------------------------------------------------
# whole-window ancestor tables


@dataclass(frozen=True)
class AncestorTable:
    """Top-``N`` ancestors at time ``t`` for every window site."""

    lo: int
    t: float
    lists: np.ndarray  # window indices, -1 padded
    length: np.ndarray
    uncertain: np.ndarray

    def ancestors(self, x: int) -> list[int]:
        k = x - self.lo
        return [int(v) + self.lo for v in self.lists[k, : self.length[k]]]

    def first(self) -> np.ndarray:
        """First ancestors as absolute sites; dead entries are masked."""
        f = self.lists[:, 0].astype(np.float64)
        f[self.length == 0] = np.nan
        return f + self.lo


def ancestor_table(H: HarrisConstruction, t: float, N: int) -> AncestorTable:
    if N < 1:
        raise ValueError("N must be positive")
    G = reverse(H, t)
    lists, length, unc = K.topn_sweep(G.ev_src, G.ev_dst, G.n_events, G.n_sites, int(N), G.R)
    return AncestorTable(H.lo, float(t), lists, length, unc)


@dataclass(frozen=True)
class FlaggedSet:
    sites: frozenset
    boundary_contaminated: bool = False

    def __contains__(self, v):
        return v in self.sites

    def __iter__(self):
        return iter(sorted(self.sites))

    def __len__(self):
        return len(self.sites)

    def __eq__(self, other):
        if isinstance(other, FlaggedSet):
            return self.sites == other.sites
        return self.sites == set(other)

    def __hash__(self):
        return hash(self.sites)


def truncated_ancestor_set(H: HarrisConstruction, sites, N: int, t: float) -> FlaggedSet:
    table = ancestor_table(H, t, N)
    out = set()
    dirty = False
    for x in sites:
        out.update(table.ancestors(x))
        dirty = dirty or bool(table.uncertain[H.index(x)])
    return FlaggedSet(frozenset(out), dirty)


def site_in_ancestor_set(H: HarrisConstruction, site: int, N: int, t: float) -> Flagged:
    """Whether ``site`` is among the top-N ancestors of some window site.

    Only sites reached by the label of ``site`` can carry it, so the answer
    is exact unless that label could travel through the exterior.
    """
    table = ancestor_table(H, t, N)
    k = H.index(site)
    hits = np.any(table.lists == k, axis=1)
    if hits.any():
        dirty = bool(np.all(table.uncertain[hits]))
        return Flagged(True, dirty)
    G = reverse(H, t)
    init = np.array([k], dtype=np.int64)
    _, _, _, touched, _ = K.cluster_sweep(G.ev_time, G.ev_src, G.ev_dst, G.n_sites, G.R, init, 0, float(t), k)
    return Flagged(False, bool(touched))


# ---------------------------------------------------------------------------
# relevant sites and the interface event


@dataclass(frozen=True)
class RelevantSites:
    mapping: dict
    sites: frozenset
    boundary_contaminated: bool = False


def relevant_sites(H: HarrisConstruction, s: float, t: float, sites=None) -> RelevantSites:
    """For each live ``x``, the best-ranked ancestor at ``s`` whose point
    survives to ``t``."""
    if not 0 < s < t <= H.horizon:
        raise ValueError("need 0 < s < t <= horizon")
    sites = range(H.lo, H.hi + 1) if sites is None else sites
    n, R = H.n_sites, H.R
    i_s = H.events_upto(s)
    survive: dict[int, tuple[bool, bool]] = {}
    mapping = {}
    dirty = False
    for x in sites:
        h = trace_ancestry(H, x, s)
        dirty = dirty or h.boundary_contaminated
        for y in h.candidates:
            if y not in survive:
                alive, touched = K.point_survives(H.ev_time, H.ev_src, H.ev_dst, n, R, y - H.lo, i_s, float(t))
                survive[y] = (bool(alive), bool(touched))
            alive, touched = survive[y]
            if alive:
                mapping[x] = y
                break
            dirty = dirty or touched
    return RelevantSites(mapping, frozenset(mapping.values()), dirty)


def check_interface_event(H: HarrisConstruction, s: float, t: float, sites=None) -> Flagged:
    rel = relevant_sites(H, s, t, sites)
    dirty = rel.boundary_contaminated
    low = None  # sup of relevant sites whose lineage ends at <= 0
    high = None  # inf of those ending at > 0
    for y in rel.sites:
        h = trace_ancestry(H, y, t, start_time=s)
        dirty = dirty or h.boundary_contaminated
        e = h.first
        if e is DELTA:
            continue
        if e <= 0:
            low = y if low is None else max(low, y)
        else:
            high = y if high is None else min(high, y)
    ok = low is None or high is None or low < high
    return Flagged(ok, dirty)


@dataclass(frozen=True)
class DualInversions:
    count: int
    pairs: list
    boundary_contaminated: bool = False

    def __iter__(self):
        return iter((self.count, self.pairs))


def inversions_from_first(first: np.ndarray, sites: np.ndarray, with_pairs: bool = True):
    """Count pairs x < y with first[x] > 0 >= first[y]; NaN marks a dead lineage."""
    alive = ~np.isnan(first)
    pos = alive & (first > 0)
    neg = alive & (first <= 0)
    before = np.cumsum(pos) - pos
    count = int(np.sum(before[neg]))
    pairs = []
    if with_pairs and count:
        ps = sites[pos]
        for y in sites[neg]:
            pairs.extend((int(a), int(y)) for a in ps[ps < y])
    return count, pairs


def count_dual_inversions(H: HarrisConstruction, t: float, window=None, with_pairs: bool = True) -> DualInversions:
    lo, hi = H.window if window is None else window
    table = ancestor_table(H, t, 1)
    first = table.first()
    a, b = lo - H.lo, hi - H.lo + 1
    count, pairs = inversions_from_first(first[a:b], np.arange(lo, hi + 1), with_pairs)
    return DualInversions(count, pairs, bool(np.any(table.uncertain[a:b])))

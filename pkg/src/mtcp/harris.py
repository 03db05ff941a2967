"""Harris constructions: sampling, re-basing, time reversal and path queries.

Event times live on a dyadic grid of spacing ``QUANTUM`` so that ``t - s``
is computed exactly and reversing twice returns the original times bit for
bit.  Events are stored merged in time order; per-stream views are derived.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels as K
from .errors import AsymmetricKernel, SimultaneousEvents, WindowTooSmall, ZeroMass

QUANTUM = 2.0 ** -42
MAX_TIME = 2048.0


def snap_time(t: float) -> float:
    """Round a time to the event grid."""
    t = float(t)
    if t < 0 or t > MAX_TIME:
        raise ValueError(f"time {t} outside [0, {MAX_TIME}]")
    return round(t / QUANTUM) * QUANTUM


@dataclass(frozen=True)
class Kernel:
    R: int
    weights: dict  # displacement -> mass

    def support(self) -> list[int]:
        return sorted(d for d, w in self.weights.items() if w > 0)

    def to_json(self) -> dict:
        return {str(d): w for d, w in sorted(self.weights.items())}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Kernel":
        return build_kernel({int(d): float(w) for d, w in obj.items()})


def build_kernel(weights: Mapping[int, float]) -> Kernel:
    if not weights:
        raise ZeroMass("empty kernel")
    w = {}
    for d, m in weights.items():
        d = int(d)
        m = float(m)
        if m < 0 or not math.isfinite(m):
            raise ValueError(f"mass at {d} must be finite and >= 0")
        if d == 0 and m > 0:
            raise ValueError("displacement 0 carries no meaning for infections")
        w[d] = w.get(d, 0.0) + m
    total = sum(w.values())
    if total <= 0:
        raise ZeroMass("kernel has zero total mass")
    for d in list(w):
        if abs(w[d] - w.get(-d, 0.0)) > 1e-12 * max(1.0, total):
            raise AsymmetricKernel(f"p({d}) != p({-d})")
    w = {d: m / total for d, m in w.items() if m > 0}
    R = max(abs(d) for d in w)
    return Kernel(R=R, weights=dict(sorted(w.items())))


def nearest_neighbour() -> Kernel:
    return build_kernel({-1: 0.5, 1: 0.5})


def uniform_kernel(R: int) -> Kernel:
    return build_kernel({d: 1.0 for d in range(-R, R + 1) if d != 0})


@dataclass(eq=False)
class HarrisConstruction:
    """Poisson death marks and arrows on ``window`` x (0, horizon].

    ``ev_src``/``ev_dst`` hold window-relative indices; ``ev_dst == -1``
    marks a death at ``ev_src``.
    """

    window: tuple[int, int]
    horizon: float
    lam: float
    kernel: Kernel
    ev_time: np.ndarray
    ev_src: np.ndarray
    ev_dst: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ev_time = np.ascontiguousarray(self.ev_time, dtype=np.float64)
        self.ev_src = np.ascontiguousarray(self.ev_src, dtype=np.int64)
        self.ev_dst = np.ascontiguousarray(self.ev_dst, dtype=np.int64)
        for a in (self.ev_time, self.ev_src, self.ev_dst):
            a.setflags(write=False)

    # -- basic views --------------------------------------------------------
    @property
    def lo(self) -> int:
        return self.window[0]

    @property
    def hi(self) -> int:
        return self.window[1]

    @property
    def n_sites(self) -> int:
        return self.window[1] - self.window[0] + 1

    @property
    def R(self) -> int:
        return self.kernel.R

    @property
    def n_events(self) -> int:
        return int(self.ev_time.shape[0])

    def index(self, site: int) -> int:
        if not self.lo <= site <= self.hi:
            raise ValueError(f"site {site} outside window {self.window}")
        return site - self.lo

    def events_upto(self, t: float) -> int:
        """Number of events with time <= t."""
        return int(np.searchsorted(self.ev_time, t, side="right"))

    @property
    def deaths(self) -> dict[int, np.ndarray]:
        mask = self.ev_dst < 0
        out = {}
        for k in np.unique(self.ev_src[mask]):
            out[int(k) + self.lo] = self.ev_time[mask & (self.ev_src == k)]
        return out

    @property
    def arrows(self) -> dict[tuple[int, int], np.ndarray]:
        mask = self.ev_dst >= 0
        src = self.ev_src[mask]
        dst = self.ev_dst[mask]
        tt = self.ev_time[mask]
        out: dict[tuple[int, int], list] = {}
        for a, b, t in zip(src.tolist(), dst.tolist(), tt.tolist()):
            out.setdefault((a + self.lo, b + self.lo), []).append(t)
        return {k: np.array(v) for k, v in out.items()}

    def same_events(self, other: "HarrisConstruction") -> bool:
        return (
            self.window == other.window
            and self.horizon == other.horizon
            and np.array_equal(self.ev_time, other.ev_time)
            and np.array_equal(self.ev_src, other.ev_src)
            and np.array_equal(self.ev_dst, other.ev_dst)
        )

    def __eq__(self, other):
        if not isinstance(other, HarrisConstruction):
            return NotImplemented
        return self.same_events(other) and self.lam == other.lam and self.kernel == other.kernel

    # -- serialization ------------------------------------------------------
    def to_json(self) -> dict:
        deaths = {str(k): v.tolist() for k, v in sorted(self.deaths.items())}
        arrows = {f"{a}>{b}": v.tolist() for (a, b), v in sorted(self.arrows.items())}
        meta = {
            "lambda": self.lam,
            "window": list(self.window),
            "horizon": self.horizon,
            "seed": self.seed,
            "kernel": self.kernel.to_json(),
        }
        meta.update(self.meta)
        return {"meta": meta, "deaths": deaths, "arrows": arrows}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: Mapping) -> "HarrisConstruction":
        meta = dict(obj["meta"])
        lo, hi = (int(v) for v in meta.pop("window"))
        kern = Kernel.from_json(meta.pop("kernel"))
        lam = float(meta.pop("lambda"))
        horizon = float(meta.pop("horizon"))
        seed = meta.pop("seed", None)
        ts, ss, ds = [], [], []
        for site, times in obj.get("deaths", {}).items():
            for t in times:
                ts.append(float(t))
                ss.append(int(site) - lo)
                ds.append(-1)
        for key, times in obj.get("arrows", {}).items():
            a, b = (int(v) for v in key.split(">"))
            for t in times:
                ts.append(float(t))
                ss.append(a - lo)
                ds.append(b - lo)
        return from_events(kern, lam, (lo, hi), horizon, ts, ss, ds, seed=seed, meta=meta, relative=True)


def from_events(kernel, lam, window, horizon, times, srcs, dsts, seed=None, meta=None, relative=False):
    """Build a construction from explicit event lists.

    Sites are absolute unless ``relative``; ``dst`` of ``None`` or -1 (relative)
    denotes a death mark.  Times are rounded to the event grid.  Used by
    fixtures and deserialization.
    """
    lo, hi = int(window[0]), int(window[1])
    n = hi - lo + 1
    # snap onto the event grid so that reversal stays exact
    t = np.round(np.asarray(times, dtype=np.float64).reshape(-1) / QUANTUM) * QUANTUM
    if relative:
        s = np.asarray(srcs, dtype=np.int64).reshape(-1)
        d = np.asarray(dsts, dtype=np.int64).reshape(-1)
    else:
        s = np.asarray(srcs, dtype=np.int64).reshape(-1) - lo
        d = np.array([-1 if v is None else int(v) - lo for v in dsts], dtype=np.int64).reshape(-1)
    if t.size:
        if np.any(t <= 0) or np.any(t > horizon):
            raise ValueError("event times must lie in (0, horizon]")
        if np.any(s < 0) or np.any(s >= n) or np.any(d >= n) or np.any(d < -1):
            raise ValueError("event site outside window")
        arrows = d >= 0
        if np.any(np.abs(d[arrows] - s[arrows]) > kernel.R) or np.any(d[arrows] == s[arrows]):
            raise ValueError("arrow displacement outside kernel range")
    order = np.argsort(t, kind="stable")
    t, s, d = t[order], s[order], d[order]
    if t.size > 1 and np.any(np.diff(t) == 0):
        raise SimultaneousEvents("duplicate event timestamps")
    return HarrisConstruction((lo, hi), float(horizon), float(lam), kernel, t, s, d, seed, dict(meta or {}))


def _stream_layout(kernel: Kernel, lam: float, n: int):
    """Stream sources, targets and rates in a fixed deterministic order."""
    src = [np.arange(n, dtype=np.int64)]
    dst = [np.full(n, -1, dtype=np.int64)]
    rate = [np.ones(n)]
    for d in kernel.support():
        a = np.arange(max(0, -d), min(n, n - d), dtype=np.int64)
        src.append(a)
        dst.append(a + d)
        rate.append(np.full(a.size, lam * kernel.weights[d]))
    return np.concatenate(src), np.concatenate(dst), np.concatenate(rate)


def sample_harris(kernel: Kernel, lam: float, window, horizon: float, seed: int) -> HarrisConstruction:
    """Sample all event streams of the window on (0, horizon].

    Arrows leaving the window are not materialized; queries that could see
    them report contamination instead.
    """
    lo, hi = int(window[0]), int(window[1])
    n = hi - lo + 1
    if n < 2 * kernel.R + 1:
        raise WindowTooSmall(f"window of {n} sites is narrower than 2R+1 = {2 * kernel.R + 1}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    horizon = snap_time(horizon)
    ticks = int(round(horizon / QUANTUM))
    src, dst, rate = _stream_layout(kernel, lam, n)
    rng = np.random.Generator(np.random.PCG64(seed))
    if ticks <= 1:
        e = np.empty(0)
        return HarrisConstruction((lo, hi), horizon, float(lam), kernel, e, e, e, seed)
    counts = rng.poisson(rate * horizon)
    total = int(counts.sum())
    tk = rng.integers(1, ticks, size=total, dtype=np.int64)
    stream = np.repeat(np.arange(src.size, dtype=np.int64), counts)
    sbits = max(1, int(src.size - 1).bit_length())
    if ticks.bit_length() + sbits <= 62:
        # one packed sort; ties in the tick part would be collisions
        key = np.sort((tk << sbits) | stream)
        tk = key >> sbits
        stream = key & ((1 << sbits) - 1)
    else:
        order = np.argsort(tk, kind="stable")
        tk = tk[order]
        stream = stream[order]
    if total > 1 and np.any(tk[1:] == tk[:-1]):
        raise SimultaneousEvents(f"duplicate timestamps for seed {seed}")
    times = tk.astype(np.float64) * QUANTUM
    return HarrisConstruction((lo, hi), horizon, float(lam), kernel, times, src[stream], dst[stream], seed)


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from integer keys (splittable scheme)."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)
    return int(state[0] >> np.uint64(1))


def sample_replica(kernel, lam, window, horizon, master_seed: int, index: int, attempts: int = 8):
    """Sample replica ``index``; a timestamp collision moves on to a fresh key."""
    for k in range(attempts):
        try:
            return sample_harris(kernel, lam, window, horizon, derive_seed(master_seed, index, k))
        except SimultaneousEvents:
            continue
    raise SimultaneousEvents(f"repeated timestamp collisions for replica {index}")


# ---------------------------------------------------------------------------
# transformations


def restrict(H: HarrisConstruction, t: float) -> HarrisConstruction:
    t = float(t)
    if not 0 <= t <= H.horizon:
        raise ValueError("restriction time outside [0, horizon]")
    k = H.events_upto(t)
    return HarrisConstruction(H.window, t, H.lam, H.kernel, H.ev_time[:k], H.ev_src[:k], H.ev_dst[:k], H.seed, dict(H.meta))


def reverse(H: HarrisConstruction, t: float) -> HarrisConstruction:
    """Invert time and arrow direction on [0, t]: s -> t - s."""
    t = snap_time(t)
    if t > H.horizon:
        raise ValueError("reversal time beyond horizon")
    k = H.events_upto(t)
    times = t - H.ev_time[:k][::-1]
    src = H.ev_src[:k][::-1]
    dst = H.ev_dst[:k][::-1]
    arrow = dst >= 0
    new_src = np.where(arrow, dst, src)
    new_dst = np.where(arrow, src, dst)
    keep = times > 0
    meta = dict(H.meta)
    meta["reversed_at"] = t
    return HarrisConstruction(H.window, t, H.lam, H.kernel, times[keep], new_src[keep], new_dst[keep], H.seed, meta)


def shift(H: HarrisConstruction, origin: tuple[int, float]) -> HarrisConstruction:
    """Re-base so that ``origin = (x, s)`` becomes the space-time origin.

    Events at times <= s are dropped; the window is translated (never
    widened) and the cumulative origin is kept in ``meta['origin']``.
    """
    x, s = int(origin[0]), float(origin[1])
    if not 0 <= s <= H.horizon:
        raise ValueError("origin time outside [0, horizon]")
    k = H.events_upto(s)
    prev = H.meta.get("origin", [0, 0.0])
    meta = dict(H.meta)
    meta["origin"] = [prev[0] + x, prev[1] + s]
    meta["clipped_to"] = [H.lo, H.hi]
    return HarrisConstruction(
        (H.lo - x, H.hi - x), H.horizon - s, H.lam, H.kernel,
        H.ev_time[k:] - s, H.ev_src[k:], H.ev_dst[k:], H.seed, meta,
    )


# ---------------------------------------------------------------------------
# path queries


@dataclass(frozen=True)
class ClusterResult:
    alive: bool
    end_time: float
    max_displacement: int
    occupied: frozenset
    boundary_contaminated: bool


def cluster(H: HarrisConstruction, sites, s: float, until: float, origin: int | None = None) -> ClusterResult:
    """One-type occupied set at ``until`` started from ``sites`` at time ``s``."""
    init = np.array([H.index(v) for v in sites], dtype=np.int64)
    org = H.index(origin) if origin is not None else (int(init[0]) if init.size else 0)
    i0 = H.events_upto(s)
    alive, end, maxd, touched, occ = K.cluster_sweep(
        H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, init, i0, float(until), org
    )
    occupied = frozenset((np.flatnonzero(occ) + H.lo).tolist()) if alive else frozenset()
    return ClusterResult(bool(alive), float(end) if not alive else float(until), int(maxd), occupied, bool(touched))


def path_exists(H: HarrisConstruction, frm: tuple[int, float], to: tuple[int, float]) -> bool:
    (x, s), (y, t) = frm, to
    if not s < t:
        raise ValueError("path query needs from.time < to.time")
    H.index(y)
    res = cluster(H, [x], s, t)
    return y in res.occupied


@dataclass(frozen=True)
class Lifetime:
    """Death time of a cluster, or censoring at the horizon."""

    time: float
    censored: bool
    boundary_contaminated: bool

    @property
    def survives(self) -> bool:
        return self.censored


def death_time(H: HarrisConstruction, frm: tuple[int, float], until: float | None = None) -> Lifetime:
    x, s = frm
    end = H.horizon if until is None else float(until)
    res = cluster(H, [x], s, end)
    if res.alive:
        return Lifetime(end, True, False)
    return Lifetime(res.end_time, False, res.boundary_contaminated)


def max_displacement(H: HarrisConstruction, frm: tuple[int, float], until: float) -> int:
    x, s = frm
    if until < s:
        raise ValueError("until must not precede the start time")
    return cluster(H, [x], s, until, origin=x).max_displacement

"""Forward evolution of the one-type and two-type processes on a construction.

Typed configurations carry, next to the concrete window state, the set of
states each site could hold on the whole line given any exterior
behaviour compatible with the initial fill.  A site with a single possible
state is certain; everything else is boundary contamination.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import PreconditionViolated
from .harris import HarrisConstruction, snap_time

_BIT = {0: 1, 1: 2, 2: 4}


def _bits_of(states: np.ndarray) -> np.ndarray:
    return np.left_shift(np.uint8(1), states.astype(np.uint8))


def _ext_bits(fill: int) -> int:
    return 0 if fill == 0 else _BIT[fill]


@dataclass
class TypedConfig:
    """States in {0, 1, 2} on ``window``; ``exterior`` is the fill outside."""

    window: tuple[int, int]
    states: np.ndarray
    exterior: tuple[int, int] = (0, 0)
    possible: np.ndarray | None = None
    exterior_possible: tuple[int, int] | None = None

    def __post_init__(self):
        self.window = (int(self.window[0]), int(self.window[1]))
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.shape != (self.window[1] - self.window[0] + 1,):
            raise ValueError("states must cover the window exactly")
        if np.any((self.states < 0) | (self.states > 2)):
            raise ValueError("states must be 0, 1 or 2")

    def __getitem__(self, site: int) -> int:
        return int(self.states[site - self.window[0]])

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)

    def sites_of(self, kind: int) -> list[int]:
        return (np.flatnonzero(self.states == kind) + self.window[0]).tolist()

    def possible_bits(self) -> np.ndarray:
        if self.possible is None:
            return _bits_of(self.states)
        return self.possible

    def exterior_bits(self) -> tuple[int, int]:
        if self.exterior_possible is None:
            return (_ext_bits(self.exterior[0]), _ext_bits(self.exterior[1]))
        return self.exterior_possible

    @property
    def uncertain(self) -> np.ndarray:
        """Window sites whose state on the full line is not determined."""
        if self.possible is None:
            return np.zeros(0, dtype=np.int64)
        single = np.isin(self.possible, (1, 2, 4))
        return np.flatnonzero(~single) + self.window[0]

    @property
    def boundary_contaminated(self) -> bool:
        return self.uncertain.size > 0

    def to_json(self) -> dict:
        out = {"window": list(self.window), "states": encode_states(self.states)}
        if self.exterior != (0, 0):
            out["exterior"] = list(self.exterior)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TypedConfig":
        lo, hi = (int(v) for v in obj["window"])
        states = decode_states(obj["states"])
        if states.size != hi - lo + 1:
            raise ValueError("run-length string does not match the window")
        return cls((lo, hi), states, tuple(obj.get("exterior", (0, 0))))

    def same_states(self, other: "TypedConfig") -> bool:
        return self.window == other.window and np.array_equal(self.states, other.states)


def encode_states(states) -> str:
    """Run-length string such as ``"5*1,3*0,4*2"``."""
    out = []
    states = np.asarray(states)
    k = 0
    while k < states.size:
        j = k
        while j < states.size and states[j] == states[k]:
            j += 1
        out.append(f"{j - k}*{int(states[k])}")
        k = j
    return ",".join(out)


_RUN = re.compile(r"^\s*(\d+)\*([012])\s*$")


def decode_states(text: str) -> np.ndarray:
    parts = []
    for chunk in text.split(",") if text.strip() else []:
        m = _RUN.match(chunk)
        if not m:
            raise ValueError(f"bad run {chunk!r}")
        parts.append(np.full(int(m.group(1)), int(m.group(2)), dtype=np.int8))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int8)


def typed_config(window, ones=(), twos=(), exterior=(0, 0)) -> TypedConfig:
    lo, hi = window
    st = np.zeros(hi - lo + 1, dtype=np.int8)
    for x in ones:
        st[x - lo] = 1
    for x in twos:
        if st[x - lo]:
            raise ValueError(f"site {x} given two types")
        st[x - lo] = 2
    return TypedConfig((lo, hi), st, exterior)


def heaviside(window, at: int = 0) -> TypedConfig:
    """1's on (-inf, at], 2's on (at, inf), restricted to ``window``."""
    lo, hi = window
    if not lo <= at < hi:
        raise ValueError("heaviside split must lie inside the window")
    sites = np.arange(lo, hi + 1)
    st = np.where(sites <= at, 1, 2).astype(np.int8)
    return TypedConfig((lo, hi), st, (1, 2))


@dataclass(frozen=True)
class OneTypeConfig:
    window: tuple[int, int]
    occupied: frozenset = field(default_factory=frozenset)
    boundary_contaminated: bool = False

    def __post_init__(self):
        lo, hi = self.window
        occ = frozenset(int(v) for v in self.occupied)
        if any(not lo <= v <= hi for v in occ):
            raise ValueError("occupied sites outside window")
        object.__setattr__(self, "occupied", occ)


def _check_window(H: HarrisConstruction, window):
    if tuple(window) != tuple(H.window):
        raise ValueError(f"configuration window {window} differs from construction window {H.window}")


def evolve_one_type(H: HarrisConstruction, initial: OneTypeConfig, t: float) -> OneTypeConfig:
    _check_window(H, initial.window)
    if t > H.horizon:
        raise ValueError("t beyond horizon")
    init = np.array(sorted(H.index(v) for v in initial.occupied), dtype=np.int64)
    alive, _, _, touched, occ = K.cluster_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, init, 0, float(t), 0)
    occupied = frozenset((np.flatnonzero(occ) + H.lo).tolist()) if alive else frozenset()
    return OneTypeConfig(H.window, occupied, bool(touched))


def evolve_multitype_grid(H: HarrisConstruction, initial: TypedConfig, t_grid) -> list[TypedConfig]:
    """States at each time of a nondecreasing grid, from one sweep."""
    _check_window(H, initial.window)
    state = initial.states.copy()
    poss = initial.possible_bits().astype(np.uint8).copy()
    ext = np.array(initial.exterior_bits(), dtype=np.uint8)
    n, R = H.n_sites, H.R
    K.typed_init(poss, ext, n, R)
    out = []
    i = 0
    prev = -np.inf
    for t in t_grid:
        t = float(t)
        if t < prev or t > H.horizon:
            raise ValueError("grid must be nondecreasing and within the horizon")
        prev = t
        j = H.events_upto(t)
        K.typed_sweep(H.ev_src, H.ev_dst, i, j, state, poss, ext, n, R)
        i = j
        out.append(TypedConfig(H.window, state.copy(), initial.exterior, poss.copy(), (int(ext[0]), int(ext[1]))))
    return out


def evolve_multitype(H: HarrisConstruction, initial: TypedConfig, t: float) -> TypedConfig:
    return evolve_multitype_grid(H, initial, [t])[0]


@dataclass(frozen=True)
class InterfaceStats:
    """Rightmost 1 and leftmost 2; ``None`` stands for -inf / +inf."""

    r: int | None
    l: int | None
    boundary_contaminated: bool = False

    @property
    def rho(self) -> int | None:
        if self.r is None or self.l is None:
            return None
        return self.r - self.l


def _edge_certain(poss, ext, bit, rightmost: bool):
    """Whether the extreme site holding ``bit`` is determined on the full line."""
    near, far = (ext[1], ext[0]) if rightmost else (ext[0], ext[1])
    if near & bit:
        return False
    idx = np.flatnonzero(poss & bit)
    if idx.size == 0:
        return not (far & bit)
    j = idx[-1] if rightmost else idx[0]
    return int(poss[j]) == bit


def interface_stats(config: TypedConfig) -> InterfaceStats:
    ones = np.flatnonzero(config.states == 1)
    twos = np.flatnonzero(config.states == 2)
    lo = config.window[0]
    r = int(ones[-1]) + lo if ones.size else None
    l = int(twos[0]) + lo if twos.size else None
    poss = config.possible_bits()
    ext = config.exterior_bits()
    ok = _edge_certain(poss, ext, 2, True) and _edge_certain(poss, ext, 4, False)
    return InterfaceStats(r, l, not ok)


def count_k_inversions(config: TypedConfig, k: int) -> int:
    if k < 1:
        raise ValueError("k must be positive")
    s = config.states
    if k >= s.size:
        return 0
    return int(np.count_nonzero((s[:-k] == 2) & (s[k:] == 1)))


def check_monotone_coupling(H: HarrisConstruction, primed: TypedConfig, doubleprimed: TypedConfig, t_grid) -> bool:
    """Evolve both configurations on ``H`` and test the two inclusions.

    The inclusions are checked after every event up to the last grid time,
    which covers every grid time.
    """
    _check_window(H, primed.window)
    _check_window(H, doubleprimed.window)
    a, b = primed.states, doubleprimed.states
    if np.any((b == 1) & (a != 1)) or np.any((a == 2) & (b != 2)):
        raise PreconditionViolated("need {xi'=1} >= {xi''=1} and {xi'=2} <= {xi''=2}")
    grid = list(t_grid)
    if not grid:
        return True
    tmax = max(float(t) for t in grid)
    s1, s2 = a.copy(), b.copy()
    bad = K.pair_sweep(H.ev_src, H.ev_dst, H.events_upto(tmax), s1, s2)
    return bad < 0


@dataclass(frozen=True)
class Flagged:
    """A boolean verdict together with its contamination flag."""

    value: bool
    boundary_contaminated: bool = False

    def __bool__(self):
        return bool(self.value)


def is_descendancy_barrier(H: HarrisConstruction, x: int, rho: float, t_check: float) -> Flagged:
    if t_check > H.horizon:
        raise ValueError("t_check beyond horizon")
    ok, ok_aug, x_touched = K.barrier_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, H.index(x), float(rho), float(t_check))
    contaminated = (ok and not ok_aug) or (not ok and x_touched)
    return Flagged(bool(ok), bool(contaminated))


@dataclass(frozen=True)
class EdgePoint:
    t: float
    edge: int | None
    boundary_contaminated: bool


def edge_of_ones(H: HarrisConstruction, t_grid) -> list[EdgePoint]:
    """Rightmost 1 along a time grid, started from the heaviside state at 0."""
    configs = evolve_multitype_grid(H, heaviside(H.window), t_grid)
    out = []
    for t, c in zip(t_grid, configs):
        st = interface_stats(c)
        out.append(EdgePoint(float(t), st.r, st.boundary_contaminated))
    return out


def extinction_time(points: list[EdgePoint]) -> float | None:
    """First grid time with no 1's left."""
    for p in points:
        if p.edge is None:
            return p.t
    return None


def type_presence(config: TypedConfig, kind: int) -> Flagged:
    """Whether ``kind`` is present anywhere on the line.

    Certain when some window site surely holds it, or when no site and no
    exterior side could hold it; otherwise flagged.
    """
    bit = _BIT[kind]
    poss = config.possible_bits()
    if np.any(poss == bit):
        return Flagged(True, False)
    could = bool(np.any(poss & bit)) or any(e & bit for e in config.exterior_bits())
    return Flagged(bool(np.any(config.states == kind)), could)

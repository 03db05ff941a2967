"""Monte Carlo campaigns over replicated Harris constructions.

Each ``run_*`` function maps a replica index to a per-replica outcome,
reduces the outcomes in index order and returns an ``ExperimentReport``
holding per-cell estimates, contamination/censoring counts and the
acceptance checks evaluated on those cells.  Thresholds in the checks are
artifact-level choices.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import perturbed_walk as pw
from . import stats
from .ancestry import coalescence_time, check_interface_event, find_renewals, inversions_from_first
from .errors import AncestryDied, ConfigError, SchemaMismatch, SupercriticalityCheckFailed
from .forward import TypedConfig, evolve_multitype, evolve_multitype_grid, heaviside, interface_stats, type_presence
from .harris import Kernel, build_kernel, derive_seed, nearest_neighbour, reverse, sample_replica, snap_time, uniform_kernel

SCHEMA_VERSION = 1
KINDS = (
    "extinction",
    "survival",
    "interface_tightness",
    "inversion_tightness",
    "density_decay",
    "coalescence_tail",
    "edge_speed",
    "interface_event",
    "rwalk_tail",
    "renewal_structure",
)
MIN_PUBLISHED = 100
SUPERCRITICAL_HORIZON = 30.0
SUPERCRITICAL_THRESHOLD = 0.3


def parse_kernel(obj) -> Kernel:
    """Accepts a Kernel, "nearest", "uniform:R", {"uniform": R} or a weight map."""
    if isinstance(obj, Kernel):
        return obj
    if obj is None or obj == "nearest":
        return nearest_neighbour()
    if isinstance(obj, str) and obj.startswith("uniform:"):
        return uniform_kernel(int(obj.split(":", 1)[1]))
    if isinstance(obj, dict) and set(obj) == {"uniform"}:
        return uniform_kernel(int(obj["uniform"]))
    if isinstance(obj, dict):
        return build_kernel({int(d): float(w) for d, w in obj.items()})
    raise ConfigError(f"cannot read kernel from {obj!r}")


def _tuple(v):
    return tuple(v) if v is not None else None


@dataclass
class ExperimentConfig:
    kind: str
    lam: float = 4.0
    kernel: Kernel = field(default_factory=nearest_neighbour)
    window: tuple | None = None
    horizon: float | None = None
    margin: float = 30.0
    t_grid: tuple = ()
    L_grid: tuple = ()
    L_quantile: float = 0.95
    N: tuple = (1,)
    x: int = 0
    y: int = 1
    distances: tuple = ()
    K: tuple = ()
    beta: float = 1.0
    rho: float = 1.0
    s_grid: tuple = ()
    gap: float = 5.0
    L0: int = 2
    z_values: tuple = (1, 2, 4, 8)
    pool_from: int = 12
    margins: tuple = ()
    x0: tuple = ()
    N_grid: tuple = ()
    family: dict = field(default_factory=dict)
    oracle_W: int | None = None
    coupled_paths: int = 1000
    count_halfwidth: int = 30
    control_replicas: int = 100
    replicas: int = 1000
    replica_offset: int = 0
    master_seed: int = 0
    speed_allowance: float | None = None
    supercritical_check: bool = True
    bootstrap: int = 200
    min_valid: int = MIN_PUBLISHED
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        self.kernel = parse_kernel(self.kernel)
        self.lam = float(self.lam)
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        for name in ("t_grid", "L_grid", "N", "distances", "K", "s_grid", "z_values", "margins", "x0", "N_grid"):
            setattr(self, name, tuple(getattr(self, name)))
        self.window = _tuple(self.window)
        if self.replicas < 1:
            raise ConfigError("replicas must be positive")
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaMismatch(f"config schema {self.schema_version} != {SCHEMA_VERSION}")

    @property
    def kappa(self) -> float:
        if self.speed_allowance is not None:
            return float(self.speed_allowance)
        return 3.0 * self.lam * self.kernel.R

    def to_json(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Kernel):
                v = v.to_json()
            elif isinstance(v, tuple):
                v = list(v)
            out["lambda" if f.name == "lam" else f.name] = v
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - names)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "kind" not in obj:
            raise ConfigError("config needs a kind")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_json()
        d.update({("lambda" if k == "lam" else k): v for k, v in kw.items()})
        return ExperimentConfig.from_json(d)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    return ExperimentConfig.from_json(obj)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    cells: list
    checks: list
    extras: dict = field(default_factory=dict)
    runtime: float = 0.0
    schema_version: int = SCHEMA_VERSION

    @property
    def discarded_contaminated(self) -> int:
        return int(sum(c["contaminated"] for c in self.cells))

    @property
    def censored(self) -> int:
        return int(sum(c["censored"] for c in self.cells))

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks if c["acceptance"])

    def check(self, name: str) -> dict:
        for c in self.checks:
            if c["name"] == name:
                return c
        raise KeyError(name)

    def cell(self, stat: str, **keys) -> dict:
        for c in self.cells:
            if c["stat"] == stat and all(c["key"].get(k) == v for k, v in keys.items()):
                return c
        raise KeyError((stat, keys))

    def select(self, stat: str, **keys) -> list:
        return [c for c in self.cells if c["stat"] == stat and all(c["key"].get(k) == v for k, v in keys.items())]

    def to_json(self, with_runtime: bool = True) -> dict:
        out = {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "config": self.config,
            "cells": self.cells,
            "checks": self.checks,
            "extras": self.extras,
            "discarded_contaminated": self.discarded_contaminated,
            "censored": self.censored,
            "passed": self.passed,
        }
        if with_runtime:
            out["runtime"] = self.runtime
        return out

    def dumps(self, with_runtime: bool = True) -> str:
        return json.dumps(self.to_json(with_runtime), indent=1, sort_keys=True, default=_json_default)

    def to_csv(self) -> str:
        keys = sorted({k for c in self.cells for k in c["key"]})
        cols = ["stat"] + keys + ["estimate", "stderr", "valid", "contaminated", "censored", "published"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for c in self.cells:
            row = [c["stat"]] + [c["key"].get(k, "") for k in keys]
            row += [_fmt(c["estimate"]), _fmt(c["stderr"]), c["valid"], c["contaminated"], c["censored"], int(c["published"])]
            w.writerow(row)
        return buf.getvalue()

    def write(self, outdir: str, stem: str | None = None) -> tuple[str, str]:
        os.makedirs(outdir, exist_ok=True)
        stem = stem or self.kind
        pj = os.path.join(outdir, f"{stem}.json")
        pc = os.path.join(outdir, f"{stem}.csv")
        with open(pj, "w") as fh:
            fh.write(self.dumps())
        with open(pc, "w") as fh:
            fh.write(self.to_csv())
        return pc, pj

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentReport":
        return cls(obj["kind"], obj["config"], obj["cells"], obj["checks"], obj.get("extras", {}), obj.get("runtime", 0.0), obj.get("schema_version", -1))


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def _cell(stat, key, estimate, stderr, valid, contaminated, censored, measure="other", extra=None):
    published = valid >= MIN_PUBLISHED
    c = {
        "stat": stat,
        "key": key,
        "estimate": _clean(estimate) if published else None,
        "stderr": _clean(stderr) if published else None,
        "valid": int(valid),
        "contaminated": int(contaminated),
        "censored": int(censored),
        "published": bool(published),
        "measure": measure,
    }
    if extra:
        c.update(extra)
    return c


def _check(name, passed, acceptance=True, **detail):
    return {"name": name, "passed": bool(passed), "acceptance": bool(acceptance), "detail": detail}


def _est(cells):
    return [c["estimate"] if c["estimate"] is not None else math.nan for c in cells]


def _se(cells):
    return [c["stderr"] if c["stderr"] is not None else math.nan for c in cells]


def _all_published(cells):
    return all(c["published"] for c in cells)


def _no_increase(cells, k=2.0):
    """Acceptance helper: no cell exceeds an earlier one by k combined SEs."""
    if not _all_published(cells):
        return False, {"reason": "unpublished cells"}
    bad = stats.increases_beyond(_est(cells), _se(cells), k)
    return not bad, {"increasing_pairs": bad}


def _no_decrease(cells, k=2.0):
    if not _all_published(cells):
        return False, {"reason": "unpublished cells"}
    neg = [-e for e in _est(cells)]
    bad = stats.increases_beyond(neg, _se(cells), k)
    return not bad, {"decreasing_pairs": bad}


# ---------------------------------------------------------------------------
# replica plumbing


def _indices(cfg):
    return range(cfg.replica_offset, cfg.replica_offset + cfg.replicas)


def _call(args):
    fn, cfg, idx = args
    return [fn(cfg, i) for i in idx]


def map_replicas(fn, cfg: ExperimentConfig, jobs: int = 1, indices=None) -> list:
    """``fn(cfg, i)`` over replica indices, returned in index order."""
    idx = list(_indices(cfg) if indices is None else indices)
    if jobs <= 1 or len(idx) < 2:
        return [fn(cfg, i) for i in idx]
    chunk = max(1, len(idx) // (4 * jobs))
    parts = [idx[k : k + chunk] for k in range(0, len(idx), chunk)]
    out = []
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        for res in ex.map(_call, [(fn, cfg, p) for p in parts]):
            out.extend(res)
    return out


def _window(cfg: ExperimentConfig, T: float, extra: int = 0) -> tuple[int, int]:
    R = cfg.kernel.R
    need = 2 * cfg.kappa * T + 2 * R
    if cfg.window is not None:
        lo, hi = cfg.window
        if hi - lo + 1 < need:
            raise ConfigError(f"window width {hi - lo + 1} below 2*kappa*horizon + 2R = {need:.1f}")
        return int(lo), int(hi)
    half = int(math.ceil(cfg.kappa * T)) + 2 * R + int(extra)
    return -half, half


def _replica(cfg, index, T, window=None, tag=None):
    w = window or _window(cfg, T)
    master = cfg.master_seed if tag is None else derive_seed(cfg.master_seed, tag)
    return sample_replica(cfg.kernel, cfg.lam, w, snap_time(T), master, index)


def _single_site(cfg, index):
    w = _window(cfg, SUPERCRITICAL_HORIZON)
    H = _replica(cfg, index, SUPERCRITICAL_HORIZON, w, tag=0x5C)
    k = H.index(0)
    init = np.array([k], dtype=np.int64)
    alive, _, _, _, _ = K.cluster_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, init, 0, H.horizon, k)
    return bool(alive)


def supercriticality(cfg: ExperimentConfig, replicas: int = 200, jobs: int = 1) -> float:
    """Fraction of single sites whose cluster is alive at horizon 30."""
    c = dataclasses.replace(cfg, replicas=replicas, replica_offset=0, window=None)
    res = map_replicas(_single_site, c, jobs)
    return float(np.mean(res))


def _precheck(cfg, jobs):
    if not cfg.supercritical_check:
        return {"supercritical_check": "waived"}
    frac = supercriticality(cfg, jobs=jobs)
    if frac <= SUPERCRITICAL_THRESHOLD:
        raise SupercriticalityCheckFailed(
            f"single-site survival fraction {frac:.3f} at horizon {SUPERCRITICAL_HORIZON:g} is not above "
            f"{SUPERCRITICAL_THRESHOLD}; lambda={cfg.lam:g} with R={cfg.kernel.R} looks subcritical, "
            "raise lambda (arrows fire at rate lambda*p(d))"
        )
    return {"single_site_survival": frac}


def _need(cfg, *names):
    for n in names:
        if not getattr(cfg, n):
            raise ConfigError(f"kind {cfg.kind} needs {n}")


def _grid(cfg):
    _need(cfg, "t_grid")
    g = [snap_time(t) for t in cfg.t_grid]
    if any(b <= a for a, b in zip(g, g[1:])) or g[0] < 0:
        raise ConfigError("t_grid must be increasing and nonnegative")
    return g


def _prop_cell(stat, key, flags, measure="proportion"):
    """flags: list of (value | None, contaminated) where None means censored."""
    vals = [v for v, c in flags if v is not None and not c]
    cont = sum(1 for v, c in flags if c)
    cens = sum(1 for v, c in flags if v is None and not c)
    p, se = stats.proportion_se(int(sum(vals)), len(vals))
    return _cell(stat, key, p, se, len(vals), cont, cens, measure)


# ---------------------------------------------------------------------------
# extinction


def _extinction_initial(window, L0, ones=True):
    lo, hi = window
    sites = np.arange(lo, hi + 1)
    if ones:
        st = np.where(np.abs(sites) <= L0, 1, 2).astype(np.int8)
        return TypedConfig(window, st, (2, 2))
    return TypedConfig(window, np.ones(sites.size, np.int8), (1, 1))


def _segmented(cfg, index, window, grid, init, tag, stop_when_extinct=True):
    """Evolve over independent per-segment constructions; stops early once
    the 1's are surely extinct (the later cells are then known)."""
    out = []
    conf = init
    prev = 0.0
    seed = derive_seed(cfg.master_seed, tag, index)
    for k, t in enumerate(grid):
        dt = snap_time(t - prev)
        if dt > 0:
            H = sample_replica(cfg.kernel, cfg.lam, window, dt, seed, k)
            conf = evolve_multitype(H, conf, H.horizon)
        prev = t
        pres = type_presence(conf, 1)
        out.append((not pres.value, pres.boundary_contaminated))
        if stop_when_extinct and not pres.value and not pres.boundary_contaminated:
            out.extend([(True, False)] * (len(grid) - k - 1))
            break
    return out


def _rep_extinction(cfg, index):
    grid = _grid(cfg)
    w = _window(cfg, grid[-1], cfg.L0)
    return _segmented(cfg, index, w, grid, _extinction_initial(w, cfg.L0), 0xE1)


def _rep_extinction_control(cfg, index):
    grid = _grid(cfg)
    half = max(cfg.L0, cfg.count_halfwidth) + 2 * cfg.kernel.R
    w = (-half, half)
    return _segmented(cfg, index, w, grid, _extinction_initial(w, cfg.L0, ones=False), 0xE2, False)


def run_extinction(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    extras = _precheck(cfg, jobs)
    grid = _grid(cfg)
    res = map_replicas(_rep_extinction, cfg, jobs)
    cells = [_prop_cell("extinct", {"t": t}, [r[j] for r in res]) for j, t in enumerate(grid)]
    ctl_cfg = dataclasses.replace(cfg, replicas=cfg.control_replicas, replica_offset=0)
    ctl = map_replicas(_rep_extinction_control, ctl_cfg, jobs)
    cells += [_prop_cell("extinct_control", {"t": t}, [r[j] for r in ctl]) for j, t in enumerate(grid)]
    main = cells[: len(grid)]
    est = _est(main)
    mono = _all_published(main) and all(b >= a for a, b in zip(est, est[1:]))
    checks = [
        _check("extinct fraction nondecreasing in t", mono, estimates=est),
        _check("final extinct fraction > 0.9", main[-1]["published"] and est[-1] > 0.9, final=est[-1]),
    ]
    c_last = cells[-1]
    if c_last["published"] and main[-1]["published"]:
        checks.append(_check("control below dichotomy cell", c_last["estimate"] < main[-1]["estimate"], False, control=c_last["estimate"]))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# survival


def _rep_survival(cfg, index):
    T = float(cfg.horizon)
    kmax = max(cfg.K)
    w = _window(cfg, T, kmax)
    H = _replica(cfg, index, T, w)
    sites = np.arange(w[0], w[1] + 1)
    out = []
    for Kv in cfg.K:
        st = np.where(sites < 0, 2, np.where(sites <= Kv, 1, 0)).astype(np.int8)
        c = evolve_multitype(H, TypedConfig(w, st, (2, 0)), H.horizon)
        p = type_presence(c, 1)
        out.append((bool(p.value), p.boundary_contaminated))
    k = H.index(0)
    alive, _, _, touched, _ = K.cluster_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, np.array([k]), 0, H.horizon, k)
    out.append((bool(alive), bool(touched) and not alive))
    return out


def run_survival(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "K", "horizon")
    extras = _precheck(cfg, jobs)
    res = map_replicas(_rep_survival, cfg, jobs)
    nK = len(cfg.K)
    cells = [_prop_cell("survives", {"K": int(Kv)}, [r[j] for r in res]) for j, Kv in enumerate(cfg.K)]
    cells.append(_prop_cell("single_site_survives", {}, [r[nK] for r in res]))
    checks = []
    # paired differences between consecutive K
    for j in range(nK - 1):
        d = [int(r[j + 1][0]) - int(r[j][0]) for r in res if not r[j][1] and not r[j + 1][1]]
        m, se = stats.mean_se(d)
        ok = len(d) >= MIN_PUBLISHED and se > 0 and m > 2 * se
        cells.append(_cell("paired_difference", {"K": int(cfg.K[j + 1]), "K_prev": int(cfg.K[j])}, m, se, len(d), len(res) - len(d), 0, "mean"))
        checks.append(_check(f"survival increases from K={cfg.K[j]} to K={cfg.K[j + 1]} (paired, > 2 SE)", ok, difference=m, stderr=se))
    if 0 in cfg.K:
        j = cfg.K.index(0)
        d = [int(r[nK][0]) - int(r[j][0]) for r in res if not r[j][1] and not r[nK][1]]
        m, se = stats.mean_se(d)
        checks.append(_check("K=0 survival <= single-site survival (paired)", min(d, default=0) >= 0, False, difference=m, stderr=se))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# interface tightness


def _rep_interface(cfg, index):
    grid = _grid(cfg)
    T = grid[-1]
    w = _window(cfg, T, cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    out = []
    for c in evolve_multitype_grid(H, heaviside(w), grid):
        s = interface_stats(c)
        rho = s.rho
        out.append((None if rho is None else abs(int(rho)), s.boundary_contaminated))
    return out


def run_interface_tightness(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    if cfg.kernel.R < 2:
        raise ConfigError("interface tightness needs range R >= 2")
    extras = _precheck(cfg, jobs)
    grid = _grid(cfg)
    res = map_replicas(_rep_interface, cfg, jobs)
    first = [r[0][0] for r in res if r[0][0] is not None and not r[0][1]]
    Ls = [int(v) for v in cfg.L_grid]
    if first:
        Lq = int(np.quantile(first, cfg.L_quantile, method="inverted_cdf"))
        extras["L_quantile_value"] = Lq
        if Lq not in Ls:
            Ls.append(Lq)
    cells = []
    for j, t in enumerate(grid):
        col = [r[j] for r in res]
        und = sum(1 for v, c in col if v is None and not c)
        for L in Ls:
            flags = [(None if v is None else v > L, c) for v, c in col]
            cells.append(_prop_cell("abs_rho_exceeds", {"t": t, "L": L}, flags, "proportion") | {"undefined": und})
    checks = []
    for L in Ls:
        cs = [c for c in cells if c["key"]["L"] == L]
        ok, det = _no_increase(cs)
        mk = stats.mann_kendall(_est(cs))
        tag = " (quantile rule)" if L == extras.get("L_quantile_value") else ""
        checks.append(_check(f"P(|rho_t| > {L}){tag} shows no increase beyond 2 SE", ok, **det))
        checks.append(_check(f"P(|rho_t| > {L}){tag} Mann-Kendall increasing trend not detected", not mk.rejects(), False, S=mk.S, p=mk.p_increasing))
    valid = min((c["valid"] for c in cells), default=0)
    checks.append(_check(f"valid replicas per t >= {cfg.min_valid}", valid >= cfg.min_valid, min_valid=valid))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# dual inversions


def _inversions_at(H, t, c):
    G = reverse(H, t)
    lists, length, unc = K.topn_sweep(G.ev_src, G.ev_dst, G.n_events, G.n_sites, 1, G.R)
    first = lists[:, 0].astype(np.float64)
    first[length == 0] = np.nan
    first += H.lo
    sites = np.arange(H.lo, H.hi + 1)
    inner = np.abs(sites) <= c
    count, _ = inversions_from_first(first[inner], sites[inner], False)
    dirty = bool(np.any(unc[inner]))
    # outside the counting window each certain lineage must keep its side
    out = ~inner & ~unc.astype(bool) & ~np.isnan(first)
    wrong = (sites < -c) & (first > 0) | (sites > c) & (first <= 0)
    dirty = dirty or bool(np.any(out & wrong))
    return count, dirty


def _rep_inversions(cfg, index):
    grid = _grid(cfg)
    T = grid[-1]
    w = _window(cfg, T, cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    out = []
    for t in grid:
        if t == 0:
            out.append((0, False))
        else:
            out.append(_inversions_at(H, t, cfg.count_halfwidth))
    return out


QUANTILES = (0.5, 0.9, 0.95)


def run_inversion_tightness(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    extras = _precheck(cfg, jobs)
    grid = _grid(cfg)
    res = map_replicas(_rep_inversions, cfg, jobs)
    cells = []
    seed = derive_seed(cfg.master_seed, 0xB007)
    for j, t in enumerate(grid):
        vals = np.array([r[j][0] for r in res if not r[j][1]], dtype=float)
        cont = sum(1 for r in res if r[j][1])
        m, se = stats.mean_se(vals)
        cells.append(_cell("B_mean", {"t": t}, m, se, vals.size, cont, 0, "mean"))
        for q in QUANTILES:
            est = float(np.quantile(vals, q)) if vals.size else math.nan
            bse = stats.bootstrap_se(vals, lambda v, q=q: np.quantile(v, q), cfg.bootstrap, seed) if vals.size > 1 else math.nan
            cells.append(_cell(f"B_q{int(q * 100)}", {"t": t}, est, bse, vals.size, cont, 0, "other"))
    checks = []
    for stat in ["B_mean"] + [f"B_q{int(q * 100)}" for q in QUANTILES]:
        cs = [c for c in cells if c["stat"] == stat and c["key"]["t"] > 0]
        ok, det = _no_increase(cs)
        checks.append(_check(f"{stat} shows no increase beyond 2 SE", ok, **det))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# density decay


def _rep_density(cfg, index):
    grid = _grid(cfg)
    T = grid[-1]
    w = _window(cfg, T, cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    k0 = H.index(0)
    Nmax = max(cfg.N)
    out = []
    for t in grid:
        if t == 0:
            out.append([(True, False)] * len(cfg.N))
            continue
        G = reverse(H, t)
        lists, length, unc = K.topn_sweep(G.ev_src, G.ev_dst, G.n_events, G.n_sites, Nmax, G.R)
        row = []
        touched = None
        for N in cfg.N:
            hits = np.any(lists[:, :N] == k0, axis=1)
            if hits.any():
                row.append((True, bool(np.all(unc[hits]))))
                continue
            if touched is None:
                init = np.array([k0], dtype=np.int64)
                _, _, _, touched, _ = K.cluster_sweep(G.ev_time, G.ev_src, G.ev_dst, G.n_sites, G.R, init, 0, G.horizon, k0)
            row.append((False, bool(touched)))
        out.append(row)
    return out


def run_density_decay(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "N")
    extras = _precheck(cfg, jobs)
    grid = _grid(cfg)
    res = map_replicas(_rep_density, cfg, jobs)
    cells = []
    checks = []
    seed = derive_seed(cfg.master_seed, 0xB007)
    tpos = [t for t in grid if t > 0]
    for a, N in enumerate(cfg.N):
        cs = [_prop_cell("density", {"N": int(N), "t": t}, [r[j][a] for r in res]) for j, t in enumerate(grid)]
        cells += cs
        # per-replica indicator matrix over positive times; NaN marks discarded
        M = np.array([[np.nan if r[j][a][1] else float(r[j][a][0]) for j, t in enumerate(grid) if t > 0] for r in res])

        def gamma(rows):
            dens = np.nanmean(rows, axis=0)
            return -stats.loglog_slope(tpos, dens)

        g = gamma(M)
        lo, hi = stats.bootstrap_ci(M, gamma, 0.95, max(cfg.bootstrap, 200), seed)
        cells.append(_cell("gamma_hat", {"N": int(N)}, g, (hi - lo) / (2 * 1.96), len(res), 0, 0, "other", {"ci": [lo, hi]}))
        checks.append(_check(f"gamma_hat > 0 with CI excluding 0 (N={N})", g > 0 and lo > 0, gamma=g, ci=[lo, hi]))
        ok, det = _no_increase([c for c in cs if c["key"]["t"] > 0])
        checks.append(_check(f"density nonincreasing in t within 2 SE (N={N})", ok, **det))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# coalescence tail and the difference chain

TV_BINS = 30


def _rep_coalescence(cfg, index):
    grid = _grid(cfg)
    T = grid[-1] + cfg.margin + 2.0
    dmax = max(cfg.distances)
    w = cfg.window or (-(dmax + cfg.count_halfwidth), dmax + cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    classes = list(cfg.z_values) + ["pool"]
    hist = np.zeros((len(classes), 2 * TV_BINS + 1), dtype=np.int32)
    rows = []
    for d in cfg.distances:
        c = coalescence_time(H, cfg.x, cfg.x + d, cfg.margin)
        rows.append(([c.exceeds(t) for t in grid], c.boundary_contaminated))
        z = c.differences
        for a, b in zip(z, z[1:]):
            if a == 0:
                break
            s = 1 if a > 0 else -1
            az, inc = abs(a), s * (b - a)
            if az in cfg.z_values:
                k = cfg.z_values.index(az)
            elif az >= cfg.pool_from:
                k = len(classes) - 1
            else:
                continue
            hist[k, min(max(inc, -TV_BINS), TV_BINS) + TV_BINS] += 1
    return rows, hist


def run_coalescence_tail(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "distances")
    extras = _precheck(cfg, jobs)
    grid = _grid(cfg)
    res = map_replicas(_rep_coalescence, cfg, jobs)
    cells = []
    checks = []
    for a, d in enumerate(cfg.distances):
        cs = []
        for j, t in enumerate(grid):
            flags = [(r[0][a][0][j], r[0][a][1]) for r in res]
            c = _prop_cell("P_J_exceeds", {"d": int(d), "t": t}, flags)
            cells.append(c)
            scale = math.sqrt(t) / d if d else math.nan
            cs.append(_cell("normalized_tail", {"d": int(d), "t": t},
                            (c["estimate"] or math.nan) * scale, (c["stderr"] or math.nan) * scale,
                            c["valid"], c["contaminated"], c["censored"], "other"))
        cells += cs
        if d:
            mk = stats.mann_kendall(_est(cs))
            checks.append(_check(f"normalized tail has no Mann-Kendall increasing trend (d={d})", _all_published(cs) and not mk.rejects(), S=mk.S, p=mk.p_increasing))
            ok, det = _no_increase(cs)
            checks.append(_check(f"normalized tail shows no increase beyond 2 SE (d={d})", ok, False, **det))
    # total variation of the difference-chain increments
    Hs = np.stack([r[1] for r in res]).astype(np.float64)  # replicas x classes x bins
    nz = len(cfg.z_values)
    seed = derive_seed(cfg.master_seed, 0xB007)

    def tvs(h):
        tot = h.sum(axis=0)
        return np.array([stats.tv(tot[k], tot[nz]) if tot[k].sum() and tot[nz].sum() else math.nan for k in range(nz)])

    obs = tvs(Hs)
    rng = np.random.default_rng(seed)
    boots = []
    n = Hs.shape[0]
    for _ in range(cfg.bootstrap):
        wts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        boots.append(tvs(np.tensordot(wts, Hs, axes=1)[None]))
    boots = np.array(boots)
    se = boots.std(axis=0, ddof=1)
    counts = Hs.sum(axis=(0, 2))
    for k, z in enumerate(cfg.z_values):
        cells.append(_cell("tv_to_pool", {"z": int(z)}, obs[k], se[k], int(counts[k]), 0, 0, "other"))
    cells.append(_cell("pool_transitions", {"z": f">={cfg.pool_from}"}, counts[nz], math.nan, int(counts[nz]), 0, 0, "other"))
    diffs = boots[:, :-1] - boots[:, 1:]
    dse = diffs.std(axis=0, ddof=1)
    gaps = obs[:-1] - obs[1:]
    ok = bool(np.all(gaps > 2 * dse)) and bool(np.all(counts[: nz + 1] >= MIN_PUBLISHED))
    checks.append(_check("TV to pooled law strictly decreasing in |z| beyond 2 bootstrap SE", ok, tv=obs.tolist(), gaps=gaps.tolist(), gap_se=dse.tolist()))
    if np.all(obs > 0):
        g, G = pw.fit_tv_constants(np.array(cfg.z_values), obs)
        extras["tv_fit"] = {"g": g, "G": G}
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# edge speed


def _rep_edge(cfg, index):
    grid = _grid(cfg)
    T = grid[-1]
    w = _window(cfg, T, max(cfg.K, default=0))
    H = _replica(cfg, index, T, w)
    edges = []
    dirty = False
    for c in evolve_multitype_grid(H, heaviside(w), grid):
        s = interface_stats(c)
        edges.append(s.r)
        dirty = dirty or s.boundary_contaminated
    viol = []
    for Kv in cfg.K:
        v = any(r is not None and r > Kv + cfg.beta * t for r, t in zip(edges, grid))
        viol.append(v)
    k = H.index(0)
    init = np.arange(0, k + 1, dtype=np.int64)
    speeds = []
    for Th in (T / 2, T):
        alive, _, _, _, occ = K.cluster_sweep(H.ev_time, H.ev_src, H.ev_dst, H.n_sites, H.R, init, 0, snap_time(Th), k)
        idx = np.flatnonzero(occ)
        right = bool(idx.size) and idx[-1] >= H.n_sites - H.R
        speeds.append((None if not idx.size else (idx[-1] - k) / Th, right))
    return viol, dirty, speeds


def run_edge_speed(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "K")
    extras = _precheck(cfg, jobs)
    res = map_replicas(_rep_edge, cfg, jobs)
    cells = [_prop_cell("violation", {"K": int(Kv)}, [(r[0][a], r[1]) for r in res]) for a, Kv in enumerate(cfg.K)]
    grid = _grid(cfg)
    for h, Th in enumerate((grid[-1] / 2, grid[-1])):
        vals = [r[2][h][0] for r in res if r[2][h][0] is not None and not r[2][h][1]]
        m, se = stats.mean_se(vals)
        cells.append(_cell("alpha_hat", {"horizon": Th}, m, se, len(vals), sum(r[2][h][1] for r in res), 0, "mean"))
    ok, det = _no_increase(cells[: len(cfg.K)], 0.0)
    checks = [_check("violation probability nonincreasing in K", ok, **det)]
    a1, a2 = cells[-2], cells[-1]
    if a1["published"] and a2["published"]:
        stable = abs(a1["estimate"] - a2["estimate"]) <= 2 * math.hypot(a1["stderr"], a2["stderr"])
        checks.append(_check("alpha_hat positive and stable across horizons within 2 SE", a2["estimate"] > 0 and stable, alpha=[a1["estimate"], a2["estimate"]]))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# interface event


def _rep_event(cfg, index):
    _need(cfg, "s_grid")
    T = max(cfg.s_grid) + cfg.gap
    w = _window(cfg, T, cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    c = cfg.count_halfwidth
    out = []
    for s in cfg.s_grid:
        f = check_interface_event(H, snap_time(s), snap_time(s + cfg.gap), range(-c, c + 1))
        out.append((bool(f.value), f.boundary_contaminated))
    return out


def run_interface_event(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    extras = _precheck(cfg, jobs)
    res = map_replicas(_rep_event, cfg, jobs)
    cells = [_prop_cell("G_holds", {"s": float(s), "t": float(s + cfg.gap)}, [r[j] for r in res]) for j, s in enumerate(cfg.s_grid)]
    ok, det = _no_decrease(cells)
    checks = [_check("P(G(s,t)) nondecreasing in s within 2 SE", ok, **det)]
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# perturbed random walk


def run_rwalk_tail(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "x0", "N_grid")
    fam = pw.geometric_family(**cfg.family)
    rep = pw.validate_family(fam)
    tab = pw.tables(fam)
    recon = max(pw.decompose(fam, z).reconstruction_error(fam) for z in range(-fam.z_cap, fam.z_cap + 1))
    rng = np.random.default_rng(derive_seed(cfg.master_seed, 0xC0))
    for _ in range(cfg.coupled_paths):
        pw.sample_coupled_path(fam, int(rng.integers(-3 * fam.L - 3, 3 * fam.L + 4)), max(cfg.N_grid), rng, tab)
    sigma = math.sqrt(sum(x * x * fam.base(x) for x in range(fam.base.lo, fam.base.hi + 1)))
    W = cfg.oracle_W or int(12 * sigma * math.sqrt(max(cfg.N_grid))) + 2 * max(abs(v) for v in cfg.x0) + fam.base.hi
    cells = []
    checks = [
        _check("family satisfies the structural assumptions", rep.passed, failed=[c.name for c in rep.checks if not c.passed]),
        _check("decomposition reconstruction within 1e-12", recon <= 1e-12, max_error=recon),
        _check("coupled-path identity Y_n = X_n for n < T", True, paths=cfg.coupled_paths),
    ]
    for x0 in cfg.x0:
        mc = pw.hitting_tail_mc(fam, x0, cfg.N_grid, cfg.replicas, derive_seed(cfg.master_seed, x0), tab)
        orc = pw.oracle_hitting(fam, x0, cfg.N_grid, W, tol=1e-9)
        norm = []
        agree = True
        for m, o in zip(mc, orc):
            cells.append(_cell("hitting_tail", {"x0": int(x0), "N": m.N}, m.estimate, m.stderr, m.replicas, 0, 0, "proportion", {"oracle": o.tail, "oracle_leak": o.leak}))
            s = math.sqrt(m.N) / abs(x0)
            norm.append(_cell("normalized_tail", {"x0": int(x0), "N": m.N}, m.estimate * s, m.stderr * s, m.replicas, 0, 0, "other"))
            agree = agree and abs(m.estimate - o.tail) <= 3 * m.stderr + o.leak
        cells += norm
        checks.append(_check(f"Monte Carlo within 3 SE of oracle (x0={x0})", agree))
        mk = stats.mann_kendall(_est(norm))
        checks.append(_check(f"normalized tail has no Mann-Kendall increasing trend (x0={x0})", not mk.rejects(), S=mk.S, p=mk.p_increasing))
        ok, det = _no_increase(norm)
        checks.append(_check(f"normalized tail shows no increase beyond 2 SE (x0={x0})", ok, False, **det))
    extras = {"constants": {"f": fam.f, "F": fam.F, "g": fam.g, "G": fam.G, "L": fam.L}, "oracle_W": W, "delta_hat": pw.delta_hat(fam)}
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# renewal structure


def _rep_renewals(cfg, index):
    T = float(cfg.horizon)
    w = _window(cfg, T, cfg.count_halfwidth)
    H = _replica(cfg, index, T, w)
    out = []
    for m in cfg.margins:
        try:
            recs = find_renewals(H, cfg.x, m)
        except AncestryDied:
            out.append(None)
            continue
        inc = [(r.increment_space, r.increment_time) for r in recs if not r.censored and not r.boundary_contaminated]
        dirty = any(r.boundary_contaminated for r in recs)
        out.append((np.array(inc, dtype=np.float64).reshape(-1, 2), dirty))
    return out


def _clustered_mean(groups):
    """Mean over pooled rows with a replica-clustered standard error."""
    sums = np.array([g.sum() for g in groups])
    ns = np.array([g.size for g in groups], dtype=float)
    N = ns.sum()
    if N == 0:
        return math.nan, math.nan
    m = sums.sum() / N
    r = len(groups)
    if r < 2:
        return m, math.nan
    var = r / (r - 1) * np.sum((sums - m * ns) ** 2) / N**2
    return float(m), float(math.sqrt(var))


def run_renewal_structure(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    _need(cfg, "margins", "horizon")
    extras = _precheck(cfg, jobs)
    res = map_replicas(_rep_renewals, cfg, jobs)
    cells = []
    summary = {}
    for a, m in enumerate(cfg.margins):
        got = [r[a] for r in res if r[a] is not None]
        died = sum(1 for r in res if r[a] is None)
        groups = [g for g, _ in got if len(g)]
        cont = sum(1 for _, d in got if d)
        n_inc = int(sum(len(g) for g in groups))
        key = {"margin": float(m)}
        ms, ses = _clustered_mean([g[:, 0] for g in groups])
        mt, set_ = _clustered_mean([g[:, 1] for g in groups])
        m2, se2 = _clustered_mean([g[:, 0] ** 2 for g in groups])
        extra = {"increments": n_inc, "lineages_died": died}
        cells.append(_cell("mean_space_increment", key, ms, ses, len(groups), cont, died, "other", extra))
        cells.append(_cell("mean_time_increment", key, mt, set_, len(groups), cont, died, "other", extra))
        cells.append(_cell("mean_sq_space_increment", key, m2, se2, len(groups), cont, died, "other", extra))
        summary[m] = (groups, ms, ses, mt, set_, m2, se2, n_inc)
    ref = 30.0 if 30.0 in summary else cfg.margins[0]
    groups, ms, ses, mt, set_, m2, se2, n_inc = summary[ref]
    checks = [
        _check(f"at least 10^4 increments (margin {ref:g})", n_inc >= 10_000, increments=n_inc),
        _check("space increment mean within 3 SE of 0", abs(ms) <= 3 * ses, mean=ms, stderr=ses),
    ]
    feats = [np.column_stack([g[:, 0], np.abs(g[:, 0]), g[:, 1]]) for g in groups]
    stat, p = stats.shuffle_independence(feats, max(cfg.bootstrap, 200), derive_seed(cfg.master_seed, 0x5F))
    checks.append(_check("shuffle test does not reject independence at 5%", p >= 0.05, statistic=stat, p=p))
    for m, (_, ms2, ses2, mt2, st2, m22, se22, _) in summary.items():
        if m == ref:
            continue
        ok = abs(mt2 - mt) <= 2 * math.hypot(st2, set_) and abs(m22 - m2) <= 2 * math.hypot(se22, se2) and abs(ms2 - ms) <= 2 * math.hypot(ses2, ses)
        checks.append(_check(f"margin {m:g} agrees with margin {ref:g} within 2 SE", ok,
                             time=[mt2, mt], sq_space=[m22, m2], space=[ms2, ms]))
    return ExperimentReport(cfg.kind, cfg.to_json(), cells, checks, extras, time.perf_counter() - t0)


RUNNERS = {
    "extinction": run_extinction,
    "survival": run_survival,
    "interface_tightness": run_interface_tightness,
    "inversion_tightness": run_inversion_tightness,
    "density_decay": run_density_decay,
    "coalescence_tail": run_coalescence_tail,
    "edge_speed": run_edge_speed,
    "interface_event": run_interface_event,
    "rwalk_tail": run_rwalk_tail,
    "renewal_structure": run_renewal_structure,
}


def run(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    return RUNNERS[cfg.kind](cfg, jobs)


# ---------------------------------------------------------------------------
# aggregation


_SEED_FIELDS = ("master_seed", "replica_offset", "replicas")


def _pool(cells):
    n = np.array([c["valid"] for c in cells], dtype=float)
    base = dict(cells[0])
    base["valid"] = int(n.sum())
    base["contaminated"] = int(sum(c["contaminated"] for c in cells))
    base["censored"] = int(sum(c["censored"] for c in cells))
    live = [c for c in cells if c["estimate"] is not None]
    if not live:
        return base
    e = np.array([c["estimate"] for c in live])
    s = np.array([c["stderr"] if c["stderr"] is not None else math.nan for c in live])
    w = np.array([c["valid"] for c in live], dtype=float)
    kind = base.get("measure", "other")
    if kind == "proportion":
        p = float((w * e).sum() / w.sum())
        est, se = p, math.sqrt(p * (1 - p) / w.sum())
    elif kind == "mean":
        # exact pooled mean and variance from the per-run summaries
        m = float((w * e).sum() / w.sum())
        var_i = s**2 * w
        ss = ((w - 1) * var_i + w * e**2).sum() - w.sum() * m * m
        est, se = m, math.sqrt(max(ss, 0.0) / (w.sum() - 1) / w.sum())
    elif np.all(np.isfinite(s)) and np.all(s > 0):
        est, se = stats.pool_inverse_variance(e, s)
    else:
        est, se = float((w * e).sum() / w.sum()), math.nan
    base["published"] = base["valid"] >= MIN_PUBLISHED
    base["estimate"] = _clean(est)
    base["stderr"] = _clean(se)
    return base


def aggregate(reports: list) -> ExperimentReport:
    """Pool reports of the same experiment run with different seeds or
    replica ranges.  Proportions and means pool exactly (count weights);
    other statistics use inverse-variance weights."""
    if not reports:
        raise ValueError("nothing to aggregate")
    first = reports[0]
    strip = lambda c: {k: v for k, v in c.items() if k not in _SEED_FIELDS}  # noqa: E731
    for r in reports:
        if r.schema_version != SCHEMA_VERSION or r.kind != first.kind:
            raise SchemaMismatch("reports differ in schema version or kind")
        if strip(r.config) != strip(first.config):
            raise SchemaMismatch("reports differ in configuration beyond seeds and replica counts")
    if len(reports) == 1:
        return first
    order = []
    groups = {}
    for r in reports:
        for c in r.cells:
            k = (c["stat"], json.dumps(c["key"], sort_keys=True))
            if k not in groups:
                order.append(k)
                groups[k] = []
            groups[k].append(c)
    cells = [_pool(groups[k]) for k in order]
    cfg = dict(first.config)
    cfg["replicas"] = int(sum(r.config["replicas"] for r in reports))
    cfg["master_seed"] = [r.config["master_seed"] for r in reports]
    cfg["replica_offset"] = [r.config["replica_offset"] for r in reports]
    return ExperimentReport(first.kind, cfg, cells, [], {"pooled_reports": len(reports)}, sum(r.runtime for r in reports))

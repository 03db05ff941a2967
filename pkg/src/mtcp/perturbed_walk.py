"""Perturbed random walks: a symmetric law pi, site-dependent laws pi_z close
to pi in total variation, the mixture decompositions behind the coupled
chain (X, Z) and walk Y, hitting-time estimators and an exact oracle.

Paths are frozen once X reaches 0, so pi_0 is never consulted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EpsilonTooSmall, WindowLeakTooLarge


@dataclass(frozen=True)
class Pmf:
    """Probability mass on the integer interval [lo, lo + len(mass) - 1].

    ``tail_bound`` = (f, F), when given, is checked as mass(x) < F exp(-f|x|)
    at every stored atom.
    """

    lo: int
    mass: np.ndarray
    tail_bound: tuple | None = None

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("mass must be a nonempty vector")
        if np.any(m < 0):
            raise ValueError("negative mass")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum()!r}, not 1")
        if self.tail_bound is not None:
            f, F = self.tail_bound
            x = np.arange(self.lo, self.lo + m.size)
            bad = m >= F * np.exp(-f * np.abs(x))
            if bad.any():
                raise ValueError(f"tail bound fails at x={int(x[bad][0])}")
        object.__setattr__(self, "mass", m)

    @property
    def hi(self) -> int:
        return self.lo + self.mass.size - 1

    def __call__(self, x: int) -> float:
        k = x - self.lo
        return float(self.mass[k]) if 0 <= k < self.mass.size else 0.0

    def on(self, lo: int, hi: int) -> np.ndarray:
        out = np.zeros(hi - lo + 1)
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a <= b:
            out[a - lo : b - lo + 1] = self.mass[a - self.lo : b - self.lo + 1]
        return out

    def total(self) -> float:
        return float(self.mass.sum())

    def mean(self) -> float:
        return float(np.dot(np.arange(self.lo, self.hi + 1), self.mass))

    def to_json(self) -> dict:
        return {"support": [self.lo, self.hi], "mass": self.mass.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Pmf":
        lo, hi = obj["support"]
        m = np.asarray(obj["mass"], dtype=np.float64)
        if m.size != hi - lo + 1:
            raise ValueError("support and mass length disagree")
        return cls(int(lo), m)


def tv_distance(p: Pmf, q: Pmf) -> float:
    """Total variation as half the L1 distance."""
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    return 0.5 * float(np.abs(p.on(lo, hi) - q.on(lo, hi)).sum())


@dataclass
class PerturbedFamily:
    base: Pmf
    perturbed: dict
    f: float
    F: float
    g: float
    G: float
    L: int
    z_cap: int = 64

    def pmf(self, z: int) -> Pmf:
        if abs(z) > self.z_cap:
            return self.base
        return self.perturbed.get(int(z), self.base)

    def epsilon(self, z: int) -> float:
        if abs(z) <= self.L:
            return 1.0
        return self.G * math.exp(-self.g * abs(z))

    @property
    def support(self) -> tuple[int, int]:
        lo = min([self.base.lo] + [p.lo for p in self.perturbed.values()])
        hi = max([self.base.hi] + [p.hi for p in self.perturbed.values()])
        return lo, hi

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "perturbed": {str(z): p.to_json() for z, p in sorted(self.perturbed.items())},
            "constants": {"f": self.f, "F": self.F, "g": self.g, "G": self.G, "L": self.L},
            "z_cap": self.z_cap,
        }

    @classmethod
    def from_json(cls, obj) -> "PerturbedFamily":
        c = obj["constants"]
        pert = {int(z): Pmf.from_json(p) for z, p in obj.get("perturbed", {}).items()}
        return cls(Pmf.from_json(obj["base"]), pert, float(c["f"]), float(c["F"]), float(c["g"]), float(c["G"]), int(c["L"]), int(obj.get("z_cap", 64)))


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    passed: bool
    witness: object = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_family(family: PerturbedFamily) -> ValidationReport:
    rep = ValidationReport()
    b = family.base
    lo, hi = family.support

    top = max(abs(lo), abs(hi))
    bad = [x for x in range(1, top + 1) if abs(b(x) - b(-x)) > 1e-12]
    rep.checks.append(Check("symm", not bad, bad[0] if bad else None))

    laws = [("base", b)] + sorted(family.perturbed.items())
    wit = None
    for name, p in laws:
        if abs(p.total() - 1.0) > 1e-12:
            wit = (name, "total")
            break
        if np.any(p.mass <= 0):
            wit = (name, int(p.lo + np.flatnonzero(p.mass <= 0)[0]))
            break
    rep.checks.append(Check("support", wit is None, wit, "positivity on the stored support"))

    wit = None
    for name, p in laws:
        x = np.arange(p.lo, p.hi + 1)
        over = p.mass >= family.F * np.exp(-family.f * np.abs(x))
        if over.any():
            wit = (name, int(x[over][0]))
            break
    rep.checks.append(Check("pitail", wit is None, wit))

    wit = None
    for z, p in sorted(family.perturbed.items()):
        if z == 0:
            continue
        if tv_distance(p, b) >= family.G * math.exp(-family.g * abs(z)):
            wit = z
            break
    rep.checks.append(Check("totvar", wit is None, wit))

    ok = family.G * math.exp(-family.g * family.L) < 1 and family.L > 0
    rep.checks.append(Check("L", ok, family.L))
    return rep


# ---------------------------------------------------------------------------
# decompositions


@dataclass(frozen=True)
class Decomposition:
    z: int
    epsilon: float
    b1: Pmf
    b2: Pmf
    g_shared: Pmf

    def reconstruction_error(self, family: PerturbedFamily) -> float:
        lo = min(self.b1.lo, self.b2.lo, self.g_shared.lo)
        hi = max(self.b1.hi, self.b2.hi, self.g_shared.hi)
        e = self.epsilon
        pz = family.pmf(self.z).on(lo, hi)
        p = family.base.on(lo, hi)
        mix1 = e * self.b1.on(lo, hi) + (1 - e) * self.g_shared.on(lo, hi)
        mix2 = e * self.b2.on(lo, hi) + (1 - e) * self.g_shared.on(lo, hi)
        return float(max(np.abs(mix1 - pz).max(), np.abs(mix2 - p).max()))


def decompose(family: PerturbedFamily, z: int) -> Decomposition:
    pz, p = family.pmf(z), family.base
    eps = family.epsilon(z)
    if eps >= 1.0:
        return Decomposition(z, 1.0, pz, p, p)
    lo, hi = min(pz.lo, p.lo), max(pz.hi, p.hi)
    a, b = pz.on(lo, hi), p.on(lo, hi)
    h = np.minimum(a, b)
    tv = 0.5 * float(np.abs(a - b).sum())
    if eps < tv:
        raise EpsilonTooSmall(f"epsilon {eps:.3g} below TV {tv:.3g} at z={z}")
    m = 1.0 - tv
    # closed forms avoiding cancellation
    share = h * ((eps - tv) / m)
    b1 = (np.maximum(a - b, 0.0) + share) / eps
    b2 = (np.maximum(b - a, 0.0) + share) / eps
    g = h / m
    return Decomposition(z, eps, Pmf(lo, b1 / b1.sum()), Pmf(lo, b2 / b2.sum()), Pmf(lo, g / g.sum()))


# ---------------------------------------------------------------------------
# compiled tables for sampling


@dataclass
class _Tables:
    lo: int
    zc: int
    eps: np.ndarray  # per row, row k <-> z = k - zc
    c1: np.ndarray  # cdf of b1, rows x support
    cg: np.ndarray
    c2: np.ndarray
    cb: np.ndarray  # cdf of pi
    G: float
    g: float
    L: int


def _cdf(v):
    c = np.cumsum(v)
    c /= c[-1]
    return c


def tables(family: PerturbedFamily) -> _Tables:
    lo, hi = family.support
    zc = family.z_cap
    rows = 2 * zc + 1
    width = hi - lo + 1
    eps = np.ones(rows)
    c1 = np.zeros((rows, width))
    cg = np.zeros((rows, width))
    c2 = np.zeros((rows, width))
    for k in range(rows):
        z = k - zc
        d = decompose(family, z)
        eps[k] = d.epsilon
        c1[k] = _cdf(d.b1.on(lo, hi))
        cg[k] = _cdf(d.g_shared.on(lo, hi))
        c2[k] = _cdf(d.b2.on(lo, hi))
    cb = _cdf(family.base.on(lo, hi))
    return _Tables(lo, zc, eps, c1, cg, c2, cb, family.G, family.g, family.L)


@njit(cache=True)
def _draw(cdf, lo):
    return lo + np.searchsorted(cdf, np.random.random(), side="right")


@njit(cache=True)
def _row(x, zc):
    if x < -zc or x > zc:
        return -1
    return x + zc


@njit(cache=True)
def _eps(x, row, eps, G, g, L):
    if row >= 0:
        return eps[row]
    if abs(x) <= L:
        return 1.0
    return G * np.exp(-g * abs(x))


@njit(cache=True)
def _step(x, lo, zc, eps, c1, cg, cb, G, g, L):
    r = _row(x, zc)
    e = _eps(x, r, eps, G, g, L)
    if np.random.random() < e:
        cdf = c1[r] if r >= 0 else cb
        return x + _draw(cdf, lo), 1
    cdf = cg[r] if r >= 0 else cb
    return x + _draw(cdf, lo), 0


@njit(cache=True)
def _coupled(x0, n_steps, seed, lo, zc, eps, c1, cg, c2, cb, G, g, L):
    np.random.seed(seed)
    X = np.zeros(n_steps + 1, np.int64)
    Z = np.zeros(n_steps + 1, np.int64)
    Y = np.zeros(n_steps + 1, np.int64)
    X[0] = x0
    Y[0] = x0
    T = -1
    for n in range(1, n_steps + 1):
        x = X[n - 1]
        if x == 0:
            X[n] = 0
            Z[n] = 1
        else:
            X[n], Z[n] = _step(x, lo, zc, eps, c1, cg, cb, G, g, L)
        if T < 0 and Z[n] == 1:
            T = n
            r = _row(x, zc)
            cdf = c2[r] if r >= 0 else cb
            Y[n] = x + _draw(cdf, lo)
        elif T < 0:
            Y[n] = X[n]
        else:
            Y[n] = Y[n - 1] + _draw(cb, lo)
    return X, Z, Y, T


@dataclass
class CoupledPath:
    X: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    T: int | None


def _seed_from(rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


def step_chain(x: int, family: PerturbedFamily, tab: _Tables | None, rng) -> tuple[int, int]:
    """One (X, Z) transition from ``x`` using the numpy generator ``rng``."""
    tab = tab or tables(family)
    r = x + tab.zc if abs(x) <= tab.zc else -1
    e = tab.eps[r] if r >= 0 else family.epsilon(x)
    if rng.random() < e:
        cdf, bit = (tab.c1[r] if r >= 0 else tab.cb), 1
    else:
        cdf, bit = (tab.cg[r] if r >= 0 else tab.cb), 0
    return x + tab.lo + int(np.searchsorted(cdf, rng.random(), side="right")), bit


def sample_coupled_path(family: PerturbedFamily, x0: int, n_steps: int, rng, tab: _Tables | None = None) -> CoupledPath:
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    t = tab or tables(family)
    X, Z, Y, T = _coupled(int(x0), int(n_steps), _seed_from(rng), t.lo, t.zc, t.eps, t.c1, t.cg, t.c2, t.cb, t.G, t.g, t.L)
    T = None if T < 0 else int(T)
    lim = n_steps + 1 if T is None else T
    assert np.array_equal(X[:lim], Y[:lim]), "coupling identity Y_n = X_n for n < T failed"
    return CoupledPath(X, Z, Y, T)


@njit(cache=True)
def _hitting(x0, n_max, reps, seed, lo, zc, eps, c1, cg, cb, G, g, L):
    np.random.seed(seed)
    out = np.full(reps, n_max + 1, np.int64)
    for r in range(reps):
        x = x0
        for n in range(1, n_max + 1):
            x, _ = _step(x, lo, zc, eps, c1, cg, cb, G, g, L)
            if x == 0:
                out[r] = n
                break
    return out


@dataclass(frozen=True)
class TailEstimate:
    N: int
    estimate: float
    stderr: float
    replicas: int


def hitting_times(family: PerturbedFamily, x0: int, n_max: int, replicas: int, seed: int, tab=None) -> np.ndarray:
    """H_0 for each replica (``n_max + 1`` when not hit by ``n_max``)."""
    if x0 == 0:
        return np.zeros(replicas, dtype=np.int64)
    t = tab or tables(family)
    return _hitting(int(x0), int(n_max), int(replicas), int(seed) % (2**31 - 1), t.lo, t.zc, t.eps, t.c1, t.cg, t.cb, t.G, t.g, t.L)


def hitting_tail_mc(family: PerturbedFamily, x0: int, N_grid, replicas: int, seed: int = 0, tab=None) -> list[TailEstimate]:
    grid = [int(n) for n in N_grid]
    h = hitting_times(family, x0, max(grid), replicas, seed, tab)
    out = []
    for N in grid:
        p = float(np.mean(h > N))
        out.append(TailEstimate(N, p, math.sqrt(p * (1 - p) / replicas), replicas))
    return out


@dataclass(frozen=True)
class OracleTail:
    N: int
    tail: float
    leak: float


def oracle_hitting(family: PerturbedFamily, x0: int, N_grid, W: int, tol: float = 1e-9) -> list[OracleTail]:
    """Exact P(H_0 > N) for the chain killed on leaving [-W, W].

    ``tail`` counts paths still inside and away from 0; ``leak`` is the mass
    that left the window, an upper bound on the error.
    """
    grid = sorted(int(n) for n in N_grid)
    if x0 == 0:
        return [OracleTail(N, 0.0, 0.0) for N in grid]
    if not -W <= x0 <= W:
        raise ValueError("x0 outside the oracle window")
    states = np.arange(-W, W + 1)
    n = states.size
    P = np.zeros((n, n))
    for i, z in enumerate(states):
        if z == 0:
            continue
        p = family.pmf(int(z))
        P[i] = p.on(-W - z, W - z)
    P[:, W] = 0.0  # absorbed at 0
    P[W, :] = 0.0
    row_out = 1.0 - np.array([family.pmf(int(z)).on(-W - z, W - z).sum() if z else 1.0 for z in states])
    v = np.zeros(n)
    v[x0 + W] = 1.0
    leak = 0.0
    out = []
    k = 0
    for N in grid:
        while k < N:
            leak += float(v @ row_out)
            v = v @ P
            k += 1
        if leak > tol:
            raise WindowLeakTooLarge(f"leaked mass {leak:.3g} exceeds {tol:.3g}; enlarge W")
        out.append(OracleTail(N, float(v.sum()), max(leak, 0.0)))
    return out


# ---------------------------------------------------------------------------
# stopping times


@njit(cache=True)
def _suite(x0, n_max, reps, seed, lo, zc, eps, c1, cg, cb, G, g, L):
    np.random.seed(seed)
    # columns: T, H_I, T', H_0, H_neg, X_tau1, X_Hneg, X_lambda1
    out = np.full((reps, 8), -1, np.int64)
    for r in range(reps):
        x = x0
        inI = abs(x) <= L
        seenI = inI
        seenO = not inI
        T = -1
        HI = 0 if inI else -1
        Tp = 0 if (seenI and seenO) else -1
        H0 = 0 if x == 0 else -1
        Hn = 0 if x < 0 else -1
        Xt = x if inI else 0
        Xh = x if x < 0 else 0
        for n in range(1, n_max + 1):
            if T >= 0 and HI >= 0 and Tp >= 0 and H0 >= 0 and Hn >= 0:
                break
            if x == 0:
                break
            x, z = _step(x, lo, zc, eps, c1, cg, cb, G, g, L)
            if z == 1 and T < 0:
                T = n
                if HI < 0:
                    Xt = x
            inI = abs(x) <= L
            if inI and HI < 0:
                HI = n
                if T < 0:
                    Xt = x
            if inI:
                seenI = True
            else:
                seenO = True
            if Tp < 0 and seenI and seenO:
                Tp = n
                if H0 < 0:
                    out[r, 7] = x
            if x == 0 and H0 < 0:
                H0 = n
            if x < 0 and Hn < 0:
                Hn = n
                Xh = x
        out[r, 0] = T
        out[r, 1] = HI
        out[r, 2] = Tp
        out[r, 3] = H0
        out[r, 4] = Hn
        out[r, 5] = Xt
        out[r, 6] = Xh
    return out


@dataclass
class StoppingSummary:
    """Monte Carlo draws of the stopping times; -1 marks 'not by n_max'."""

    x0: int
    n_max: int
    T: np.ndarray
    H_I: np.ndarray
    T_prime: np.ndarray
    H_0: np.ndarray
    H_neg: np.ndarray
    X_tau1: np.ndarray
    X_Hneg: np.ndarray

    @staticmethod
    def _min(a, b):
        out = np.where((a >= 0) & (b >= 0), np.minimum(a, b), np.maximum(a, b))
        return np.where((a < 0) & (b < 0), -1, out)

    @property
    def tau1(self) -> np.ndarray:
        return self._min(self.T, self.H_I)

    @property
    def lambda1(self) -> np.ndarray:
        return self._min(self.T_prime, self.H_0)

    def tail(self, times: np.ndarray, N: int) -> float:
        return float(np.mean((times < 0) | (times > N)))

    def mean_abs_x_tau1_before_HI(self) -> float:
        t1 = self.tau1
        sel = (t1 >= 0) & ((self.H_I < 0) | (t1 < self.H_I))
        return float(np.sum(np.abs(self.X_tau1[sel])) / self.X_tau1.size)

    def mean_abs_x_neg_before_H0(self) -> float:
        sel = (self.H_neg >= 0) & ((self.H_0 < 0) | (self.H_neg < self.H_0))
        return float(np.sum(np.abs(self.X_Hneg[sel])) / self.X_Hneg.size)


def stopping_time_suite(family: PerturbedFamily, x0: int, replicas: int, seed: int = 0, n_max: int = 4096, tab=None) -> StoppingSummary:
    t = tab or tables(family)
    o = _suite(int(x0), int(n_max), int(replicas), int(seed) % (2**31 - 1), t.lo, t.zc, t.eps, t.c1, t.cg, t.cb, t.G, t.g, t.L)
    return StoppingSummary(int(x0), int(n_max), o[:, 0], o[:, 1], o[:, 2], o[:, 3], o[:, 4], o[:, 5], o[:, 6])


def tails_to_csv(rows, path: str, seed: int) -> None:
    """rows: (quantity, x0, TailEstimate) triples."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "x0", "N", "estimate", "stderr", "replicas", "seed"])
        for q, x0, e in rows:
            w.writerow([q, x0, e.N, repr(e.estimate), repr(e.stderr), e.replicas, seed])


@njit(cache=True)
def _visits(y, n_max, reps, seed, lo, cb):
    np.random.seed(seed)
    out = np.zeros(reps, np.int64)
    for r in range(reps):
        x = y
        v = 1
        for n in range(n_max):
            x += _draw(cb, lo)
            if x == 0:
                break
            if x == y:
                v += 1
        out[r] = v
    return out


def visits_before_zero(family: PerturbedFamily, ys, replicas: int, seed: int = 0, n_max: int = 100_000) -> list[tuple[int, float, float]]:
    """Mean number of visits to y before hitting 0 for the pure pi-walk from y.

    Paths are cut at ``n_max`` steps, which biases the means slightly low.
    """
    tab = tables(family)
    out = []
    for y in ys:
        v = _visits(int(y), int(n_max), int(replicas), (int(seed) + 7919 * int(y)) % (2**31 - 1), tab.lo, tab.cb)
        out.append((int(y), float(v.mean()), float(v.std(ddof=1) / math.sqrt(replicas))))
    return out


def delta_hat(family: PerturbedFamily) -> float:
    """min over x in I, x != 0, of pi_x(-x)."""
    vals = [family.pmf(x)(-x) for x in range(-family.L, family.L + 1) if x != 0]
    return float(min(vals)) if vals else 1.0


# ---------------------------------------------------------------------------
# families


def certify(base: Pmf, perturbed: dict, z_cap: int, g: float | None = None, slack: float = 1.01):
    """Smallest constants (f, F, g, G, L) that certify a family.

    ``f`` and ``g`` are fitted slopes (or given); ``F`` and ``G`` are then
    the pointwise maxima inflated by ``slack``.
    """
    laws = [base] + list(perturbed.values())
    xs = np.concatenate([np.arange(p.lo, p.hi + 1) for p in laws])
    ms = np.concatenate([p.mass for p in laws])
    keep = (ms > 0) & (xs != 0)
    f = float(max(1e-6, -np.polyfit(np.abs(xs[keep]), np.log(ms[keep]), 1)[0] * 0.95))
    F = float(np.max(ms * np.exp(f * np.abs(xs))) * slack)
    zs = np.array([z for z in perturbed if z != 0])
    tvs = np.array([tv_distance(perturbed[z], base) for z in zs])
    if g is None:
        pos = tvs > 0
        g = float(max(1e-6, -np.polyfit(np.abs(zs[pos]), np.log(tvs[pos]), 1)[0] * 0.95)) if pos.sum() >= 2 else 1.0
    G = float(max(np.max(tvs * np.exp(g * np.abs(zs))) * slack, 1e-300)) if zs.size else 1.0
    L = max(1, int(math.floor(math.log(G) / g)) + 1) if G >= 1 else 1
    return f, F, g, G, L


def geometric_family(a: float = 1.0, S: int = 40, c: float = 0.4, b: float = 0.35, z_cap: int = 64) -> PerturbedFamily:
    """Symmetric geometric base with a drift toward 0 that decays in |z|.

    pi(x) is proportional to exp(-a|x|) on [-S, S]; pi_z tilts pi by
    1 - c*exp(-b|z|)*sign(z)*tanh(x).
    """
    xs = np.arange(-S, S + 1)
    base = np.exp(-a * np.abs(xs))
    base /= base.sum()
    pert = {}
    for z in range(-z_cap, z_cap + 1):
        if z == 0:
            continue
        w = base * (1.0 - c * math.exp(-b * abs(z)) * np.sign(z) * np.tanh(xs))
        pert[z] = Pmf(-S, w / w.sum())
    bp = Pmf(-S, base)
    f, F, g, G, L = certify(bp, pert, z_cap, g=b)
    return PerturbedFamily(bp, pert, f, F, g, G, L, z_cap)


def lazy_family(tail: float = 0.0, S: int = 1) -> PerturbedFamily:
    """pi(0) = 1/2, pi(+-1) = 1/4, optionally with tiny geometric tails."""
    xs = np.arange(-S, S + 1)
    m = np.where(xs == 0, 0.5, np.where(np.abs(xs) == 1, 0.25, tail * np.exp(-np.abs(xs).astype(float))))
    m = m / m.sum()
    base = Pmf(-S, m)
    return PerturbedFamily(base, {}, 0.5, 2.0, 1.0, 0.5, 1, 0)


def fit_tv_constants(z: np.ndarray, tv: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of log TV against |z|: returns (g, G)."""
    z = np.abs(np.asarray(z, dtype=float))
    tv = np.asarray(tv, dtype=float)
    keep = tv > 0
    slope, icpt = np.polyfit(z[keep], np.log(tv[keep]), 1)
    return float(-slope), float(math.exp(icpt))

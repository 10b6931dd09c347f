"""Discrepancy counts, density profiles and Monte Carlo checks of tail bounds.

Every tail check returns a :class:`TailCheck` whose rows are (grid point,
estimate, standard error, bound).  The standard error is computed at the
bound, sqrt(b(1-b)/n), which is the null hypothesis the one-sided 3-sigma
comparison is made against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaincc, gammaln

from .coupled import Pair
from .lattice import Kernel, SiteSpace
from .rates import gain_rate
from .simulate import RngPlan, run_coupled, run_single


# -- discrepancy counts ---------------------------------------------------------

def _line(pair: Pair) -> tuple[np.ndarray, np.ndarray]:
    """Discrepancy field in coordinate order, with the coordinates."""
    if pair.space.ndim != 1:
        raise ValueError("one-dimensional space required")
    c = pair.space.signed_coords()[:, 0]
    order = np.argsort(c, kind="stable")
    return c[order], pair.d[order]


def f_n(pair: Pair, n: int) -> int:
    """Number of positive discrepancies with all coordinates in [-n, n]."""
    return int(((pair.d > 0) & pair.space.window(n)).sum())


def g_interval(pair: Pair, a: int, b: int) -> int:
    """Sites x in [a, b) with d(x) = +1 whose next nonzero discrepancy in (x, b] is -1."""
    c, d = _line(pair)
    nz = d[(c >= a) & (c <= b) & (d != 0)]
    return int(((nz[:-1] == 1) & (nz[1:] == -1)).sum())


def g_n(pair: Pair, n: int) -> int:
    return g_interval(pair, -n, n)


@dataclass
class DiscrepancyProfile:
    n: int
    f: int
    g: int
    sign_changes: list[int]

    @classmethod
    def of(cls, pair: Pair, n: int) -> DiscrepancyProfile:
        c, d = _line(pair)
        keep = (np.abs(c) <= n) & (d != 0)
        cs, ds = c[keep], d[keep]
        changes = [int(cs[i + 1]) for i in range(len(ds) - 1) if ds[i] == 1 and ds[i + 1] == -1]
        return cls(n, f_n(pair, n), g_n(pair, n), changes)


def k_partition(n: int, k: int) -> list[tuple[int, int]]:
    """Blocks [x_i, y_i] covering [-n, n] with y_i - x_i = k except possibly the last."""
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and k >= 1")
    blocks = []
    x = -n
    while x <= n:
        y = min(x + k, n)
        blocks.append((x, y))
        x = y + 1
    return blocks


def partition_bound(pair: Pair, n: int, k: int) -> tuple[int, int]:
    """``(g_n, sum_i g_{x_i, y_i} + m - 1)``; the first never exceeds the second."""
    blocks = k_partition(n, k)
    return g_n(pair, n), sum(g_interval(pair, a, b) for a, b in blocks) + len(blocks) - 1


def run_length(eta, x: int, variant: str = "s") -> int:
    """Longest run of occupied sites (in index order) containing ``x``.

    ``variant="s_prime"`` counts ``x`` as occupied whatever its state.
    """
    eta = np.asarray(eta)
    if variant not in ("s", "s_prime"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "s" and not eta[x]:
        return 0
    lo = x
    while lo - 1 >= 0 and eta[lo - 1]:
        lo -= 1
    hi = x
    while hi + 1 < len(eta) and eta[hi + 1]:
        hi += 1
    return hi - lo + 1


@dataclass
class DensityProfile:
    radii: list[int]
    averages: np.ndarray
    upper: float   # max over the supplied radii, a finite stand-in for the limsup
    lower: float

    @property
    def spread(self) -> float:
        return self.upper - self.lower


def density_bounds(space: SiteSpace, eta, radii: Sequence[int]) -> DensityProfile:
    eta = np.asarray(eta, float)
    avgs = np.array([eta[space.window(r)].mean() for r in radii])
    return DensityProfile(list(radii), avgs, float(avgs.max()), float(avgs.min()))


# -- tail checks ------------------------------------------------------------------

@dataclass
class TailCheck:
    grid: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    samples: int
    info: dict = field(default_factory=dict)

    def slack(self, k: float = 3.0) -> np.ndarray:
        """Bound minus estimate, plus ``k`` standard errors; negative means a violation."""
        return self.bound + k * self.stderr - self.estimate

    def dominated(self, k: float = 3.0) -> bool:
        return bool((self.slack(k) >= 0).all())

    def two_sided(self, k: float = 3.0) -> bool:
        return bool((np.abs(self.estimate - self.bound) <= k * self.stderr).all())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid", "estimate", "stderr", "bound"])
            for row in zip(self.grid, self.estimate, self.stderr, self.bound):
                w.writerow([repr(float(v)) for v in row])


def _tail(values: np.ndarray, grid, bound: np.ndarray, strict: bool) -> TailCheck:
    grid = np.asarray(grid, float)
    n = len(values)
    est = np.array([(values > g).mean() if strict else (values >= g).mean() for g in grid])
    b = np.clip(bound, 0.0, 1.0)
    se = np.sqrt(b * (1 - b) / n)
    return TailCheck(grid, est, se, bound, n)


def integrate_to_target(Q, start: int, targets, samples: int, rng: np.random.Generator,
                        step_cap: int = 10**5) -> np.ndarray:
    """Samples of the integral of Q(X_s, A) up to the hitting time of A."""
    Q = np.asarray(Q, float)
    m = Q.shape[0]
    A = np.zeros(m, bool)
    A[list(targets)] = True
    if A[start]:
        raise ValueError("start must lie outside the target set")
    out_rate = Q.sum(axis=1) - np.diag(Q)
    QA = Q[:, A].sum(axis=1) - np.where(A, np.diag(Q), 0.0)
    jump = np.where(out_rate[:, None] > 0, Q / np.where(out_rate > 0, out_rate, 1.0)[:, None], 0.0)
    np.fill_diagonal(jump, 0.0)
    cdf = np.cumsum(jump, axis=1)
    cdf[:, -1] = np.where(out_rate > 0, 1.0, cdf[:, -1])
    pos = np.full(samples, start)
    total = np.zeros(samples)
    alive = np.arange(samples)
    for _ in range(step_cap):
        if alive.size == 0:
            break
        p = pos[alive]
        lam = out_rate[p]
        hold = rng.exponential(size=alive.size) / np.where(lam > 0, lam, 1.0)
        total[alive] += np.where(lam > 0, hold * QA[p], np.inf * (QA[p] > 0))
        stuck = lam <= 0
        u = rng.random(alive.size)
        nxt = (cdf[p] <= u[:, None]).sum(axis=1)
        nxt = np.minimum(nxt, m - 1)
        pos[alive] = nxt
        alive = alive[~(A[nxt] | stuck)]
    return total


def absorption_integral_tail(Q, start: int, targets, samples: int, rng: np.random.Generator,
                 grid=(0.5, 1.0, 2.0, 4.0)) -> TailCheck:
    """Tail of the target-rate integral up to absorption against e^{-t}."""
    vals = integrate_to_target(Q, start, targets, samples, rng)
    grid = np.asarray(grid, float)
    return _tail(vals, grid, np.exp(-grid), strict=False)


def compound_tail(a: float, tol: float = 1e-13) -> float:
    """P(Z_1 + ... + Z_{N+1} > a) with N ~ Poisson(1), Z_i ~ Exp(1) independent."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    total = 0.0
    n = 0
    while True:
        w = math.exp(-1.0 - gammaln(n + 1))
        total += w * gammaincc(n + 1, a)
        if w < tol and n > a:
            return float(total)
        n += 1


class GainIntegrator:
    """Time integral of the gain rate at one site along a trajectory, cached per configuration."""

    def __init__(self, kernel: Kernel, x: int):
        self.kernel = kernel
        self.x = x
        self.cache: dict[bytes, float] = {}

    def rate(self, eta: np.ndarray) -> float:
        key = eta.tobytes()
        v = self.cache.get(key)
        if v is None:
            v = gain_rate(self.kernel, self.x, eta) if not eta[self.x] else 0.0
            self.cache[key] = v
        return v

    def integral(self, traj) -> float:
        return float(sum((b - a) * self.rate(eta) for a, b, eta in traj.intervals()))


def gain_integral_tail(kernel: Kernel, initial: Callable[[int], np.ndarray], x: int, replicas: int,
                 plan: RngPlan, grid=(0.5, 1.0, 2.0, 4.0), horizon: float = 1.0) -> TailCheck:
    """Tail of the unit-time integral of the gain rate at ``x`` against the compound bound.

    ``initial(i)`` returns the starting configuration of replica ``i``.
    """
    integ = GainIntegrator(kernel, x)
    vals = np.empty(replicas)
    for i in range(replicas):
        tr = run_single(kernel, initial(i), horizon, plan.replica(i))
        vals[i] = integ.integral(tr)
    grid = np.asarray(grid, float)
    chk = _tail(vals, grid, np.array([compound_tail(a) for a in grid]), strict=True)
    chk.info["distinct_configurations"] = len(integ.cache)
    chk.info["mean_integral"] = float(vals.mean())
    return chk


# -- hitting times of vacancies ---------------------------------------------------

def _offsets_1d(kernel: Kernel) -> tuple[np.ndarray, np.ndarray]:
    if kernel.offsets is None or kernel.space.ndim != 1:
        raise ValueError("a one-dimensional offset kernel is required")
    steps = np.array([v[0] for v, _ in kernel.offsets])
    probs = np.array([p for _, p in kernel.offsets])
    return steps, probs / probs.sum()


@dataclass
class SigmaEstimate:
    rho: float
    window: int
    mean: float              # E sigma, direct
    mean_se: float
    second: float            # integral of (E^x sigma(eta))^2, from two walks per eta
    second_se: float
    mean_range: float        # E sigma from the range identity (walks only)
    mean_range_se: float
    envelope: float          # upper bound on E sigma^2 from the range of the walk
    mean_rev: float          # same three for the reversed walk
    second_rev: float
    envelope_rev: float
    censored: int            # walks that reached the window edge
    monotone_violations: int  # samples with sigma(eta_z) > sigma(eta)


def _sigma_walks(steps, probs, occ, W, n_walks, rng, cap):
    """First vacancy times of walks from the origin on rows of ``occ`` (index W = origin).

    Returns (sigma, censored flag, sigma with one random site emptied).
    """
    reps = occ.shape[0]
    occ_z = occ.copy()
    z = rng.integers(0, occ.shape[1], size=reps)
    occ_z[np.arange(reps), z] = 0
    sig = np.zeros((n_walks, reps), dtype=np.int64)
    sig_z = np.zeros((n_walks, reps), dtype=np.int64)
    cens = np.zeros((n_walks, reps), bool)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    for w in range(n_walks):
        pos = np.full(reps, W)
        alive = np.ones(reps, bool)
        alive_z = np.ones(reps, bool)
        for k in range(1, cap + 1):
            idx = np.flatnonzero(alive | alive_z)
            if idx.size == 0:
                break
            pos[idx] += steps[np.searchsorted(cdf, rng.random(idx.size), side="right").clip(0, len(steps) - 1)]
            out = (pos[idx] < 0) | (pos[idx] >= occ.shape[1])
            if out.any():
                o = idx[out]
                cens[w, o[alive[o]]] = True
                sig[w, o[alive[o]]] = k
                sig_z[w, o[alive_z[o]]] = k
                alive[o] = alive_z[o] = False
                idx = idx[~out]
            p = pos[idx]
            hit = alive[idx] & (occ[idx, p] == 0)
            sig[w, idx[hit]] = k
            alive[idx[hit]] = False
            hit_z = alive_z[idx] & (occ_z[idx, p] == 0)
            sig_z[w, idx[hit_z]] = k
            alive_z[idx[hit_z]] = False
        cens[w] |= alive
    return sig, cens, sig_z


def _range_terms(steps, probs, rho, reps, rng, cap, tol=1e-16):
    """Per-walk sums of rho^{|{X_1..X_j}|} and (j+1)^2 rho^{R_j} over j >= 0.

    A walk is frozen once both terms are below ``tol`` for good; since
    (j+1)^2 <= cap^2, that happens as soon as its range exceeds ``r_cap``.
    An unfrozen walk stays within J * r_cap of the origin, which sizes the grid.
    """
    J = int(np.abs(steps).max())
    r_cap = int(math.ceil(math.log(tol / (cap + 1) ** 2) / math.log(rho))) + 2
    W = J * (r_cap + 1)
    vis = np.zeros((reps, 2 * W + 1), bool)
    pos = np.full(reps, W)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    inner = np.zeros(reps, dtype=np.int64)   # |{X_1..X_j}|
    vis0 = np.zeros(reps, bool)              # whether the origin is among X_1..X_j
    s_mean = np.ones(reps)                   # j = 0 term: empty set
    s_env = np.full(reps, rho)               # (0+1)^2 rho^{R_0}, R_0 = 1
    live = np.arange(reps)
    for j in range(1, cap + 1):
        if live.size == 0:
            break
        p = pos[live] + steps[np.searchsorted(cdf, rng.random(live.size), side="right").clip(0, len(steps) - 1)]
        pos[live] = p
        inner[live] += ~vis[live, p]
        vis[live, p] = True
        vis0[live] |= p == W
        term = rho ** inner[live].astype(float)
        s_mean[live] += term
        R = inner[live] + (~vis0[live])
        s_env[live] += (j + 1) ** 2 * rho ** R.astype(float)
        live = live[R <= r_cap]
    return s_mean, s_env


def sigma_moment_estimate(kernel: Kernel, rho: float, replicas: int, rng: np.random.Generator,
                          window: int | None = None, range_replicas: int | None = None,
                          max_censored: float = 1e-4) -> SigmaEstimate:
    """Moments of the first vacancy time sigma for eta ~ Bernoulli(rho), from the origin.

    Direct estimates draw eta on a finite window; two independent walks per eta
    give an unbiased estimate of the square of the quenched mean.  The range
    estimates only simulate the walk: E sigma = sum_{k>=1} E rho^{|{X_1..X_{k-1}}|},
    and (1/rho) sum_{k>=0} (k+1)^2 E rho^{R_k} bounds E sigma^2 from above.
    Raises ``RuntimeError`` when more than ``max_censored`` of the walks reach
    the window edge.
    """
    if not 0 < rho < 1:
        raise ValueError("need 0 < rho < 1")
    steps, probs = _offsets_1d(kernel)
    J = int(np.abs(steps).max())
    if window is None:
        # leaving the window needs more than window/J distinct occupied sites
        window = J * (int(math.ceil(math.log(1e-6) / math.log(rho))) + 2) * 4
    cap = 200 * window * window
    rrep = range_replicas or replicas

    def one(stp):
        occ = (rng.random((replicas, 2 * window + 1)) < rho).astype(np.uint8)
        sig, cens, sig_z = _sigma_walks(stp, probs, occ, window, 2, rng, cap)
        prod = sig[0].astype(float) * sig[1]
        s_mean, s_env = _range_terms(stp, probs, rho, rrep, rng, cap=max(4 * window * window, 2000))
        viol = int((sig_z > sig).sum())
        return sig, cens, prod, s_mean, s_env, viol

    sig, cens, prod, s_mean, s_env, viol = one(steps)
    sig_r, cens_r, prod_r, s_mean_r, s_env_r, viol_r = one(-steps)
    censored = int(cens.sum() + cens_r.sum())
    if censored > max_censored * 4 * replicas:
        raise RuntimeError(f"window radius {window} too small: {censored} walks reached the edge")
    flat = sig.ravel().astype(float)
    return SigmaEstimate(
        rho=rho, window=window,
        mean=float(flat.mean()), mean_se=float(flat.std(ddof=1) / math.sqrt(flat.size)),
        second=float(prod.mean()), second_se=float(prod.std(ddof=1) / math.sqrt(prod.size)),
        mean_range=float(s_mean.mean()), mean_range_se=float(s_mean.std(ddof=1) / math.sqrt(rrep)),
        envelope=float(s_env.mean() / rho),
        mean_rev=float(sig_r.mean()), second_rev=float(prod_r.mean()), envelope_rev=float(s_env_r.mean() / rho),
        censored=censored, monotone_violations=viol + viol_r,
    )


# -- ordering of coupled runs --------------------------------------------------------

@dataclass
class OrderedFraction:
    times: np.ndarray
    fraction: np.ndarray
    ordering_times: np.ndarray       # inf when not ordered by the horizon

    @property
    def mean_time(self) -> float:
        done = self.ordering_times[np.isfinite(self.ordering_times)]
        return float(done.mean()) if done.size else math.inf


def _is_ordered(eta, xi) -> bool:
    return bool((eta >= xi).all() or (eta <= xi).all())


def ordered_fraction(kernel: Kernel, sampler: Callable[[int], tuple[np.ndarray, np.ndarray]],
                     horizon: float, replicas: int, plan: RngPlan, times=None) -> OrderedFraction:
    """Fraction of coupled runs that have become ordered by each time.

    Ordered pairs stay ordered, so each run stops at its first ordered state.
    """
    T = np.full(replicas, math.inf)
    for i in range(replicas):
        eta, xi = sampler(i)
        if _is_ordered(eta, xi):
            T[i] = 0.0
            continue
        hit: list[float] = []

        def stop(t, e, s, hit=hit):
            if _is_ordered(e, s):
                hit.append(t)
                return True
            return False
        run_coupled(kernel, eta, xi, horizon, plan.replica(i), on_event=stop)
        if hit:
            T[i] = hit[0]
    times = np.linspace(0, horizon, 21) if times is None else np.asarray(times, float)
    frac = np.array([(T <= t).mean() for t in times])
    return OrderedFraction(times, frac, T)


def single_discrepancy_pair(n: int, rho: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Common Bernoulli background with one positive and one negative discrepancy."""
    base = (rng.random(n) < rho).astype(np.uint8)
    a, b = rng.choice(n, size=2, replace=False)
    eta, xi = base.copy(), base.copy()
    eta[a], xi[a] = 1, 0
    eta[b], xi[b] = 0, 1
    return eta, xi

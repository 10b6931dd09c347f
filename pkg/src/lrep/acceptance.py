"""Acceptance suite: twelve numbered checks, each returning one report row.

A criterion never raises: an exception becomes a failed row whose detail holds
the error.  Thresholds live here, next to the checks that use them.
"""

from __future__ import annotations

import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .coupled import Pair, fault_injection, marginal_consistency_check
from .exact import (Measure, build_generator, invariance_report, ordered_absorption_report,
                    stationary, transition_probabilities)
from .lattice import Kernel, SiteSpace, absorb, range_statistics, sample_exits
from .rates import displacement_sum, to_bitstring
from .simulate import RngPlan, empirical_law, run_coupled
from .stats import (absorption_integral_tail, compound_tail, gain_integral_tail, ordered_fraction,
                    single_discrepancy_pair)

DEFAULT_SEED = 2005


@dataclass
class Row:
    id: int
    name: str
    measured: float
    threshold: float
    passed: bool
    runtime: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.id:2d} {verdict}  {self.name}: measured={self.measured:.6g} "
                f"threshold={self.threshold:.6g} ({self.runtime:.1f}s)")


def _rng(seed: int, cid: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, cid, *extra])


# -- 1: rates against sampled walks ----------------------------------------------

def _random_instance(i: int, rng: np.random.Generator) -> tuple[Kernel, np.ndarray, int]:
    kind = i % 5
    n = int(rng.integers(4, 13))
    if kind in (0, 1):
        space = SiteSpace.torus(n) if kind == 0 else SiteSpace.segment(n)
        kernel = Kernel.nearest_neighbor(space, float(rng.uniform(0.05, 0.95)))
    elif kind in (2, 3):
        space = SiteSpace.torus(max(n, 7)) if kind == 2 else SiteSpace.segment(n)
        offs = [-2, -1, 1, 2, 3]
        w = rng.dirichlet(np.ones(len(offs)))
        kernel = Kernel.from_offsets(space, list(zip(offs, w)))
    else:
        n = int(rng.integers(4, 9))
        M = rng.random((n, n)) * (rng.random((n, n)) < 0.5)
        np.fill_diagonal(M, 0.0)
        for r in range(n):
            if M[r].sum() == 0:
                M[r, (r + 1) % n] = 1.0
        kernel = Kernel.from_matrix(M / M.sum(axis=1, keepdims=True))
    n = kernel.n
    eta = (rng.random(n) < rng.uniform(0.3, 0.9)).astype(np.uint8)
    x = int(rng.integers(n))
    eta[x] = 1
    return kernel, eta, x


def criterion_1(seed: int) -> Row:
    rng = _rng(seed, 1)
    n = 10**5
    worst = 0.0
    comparisons = 0
    zero_bad = 0
    for i in range(50):
        kernel, eta, x = _random_instance(i, rng)
        passable = eta.astype(bool).copy()
        if i % 2 == 0:
            passable[x] = False     # restricted law: a return to x cancels
        law = absorb(kernel, x, passable)
        tally = sample_exits(kernel, x, passable, n, rng, step_cap=10**4)
        exact = np.clip(np.append(law.probs, law.lost), 0.0, 1.0)
        freq = np.append(tally.stops, tally.escaped + tally.step_cap) / n
        pos = exact > 0
        se = np.sqrt(exact[pos] * (1 - exact[pos]) / n)
        z = np.abs(freq[pos] - exact[pos]) / np.maximum(se, 1e-300)
        worst = max(worst, float(z.max(initial=0.0)))
        comparisons += int(pos.sum())
        zero_bad += int((freq[~pos] != 0).sum())
    return Row(1, "rates vs sampled walks", worst, 3.0, worst <= 3.0 and zero_bad == 0,
               detail={"comparisons": comparisons, "nonzero_where_exact_zero": zero_bad})


# -- 2: zero-mean displacement ------------------------------------------------------

def criterion_2(seed: int) -> Row:
    rng = _rng(seed, 2)
    space = SiteSpace.centered(30)
    kernels = [Kernel.nearest_neighbor(space, 0.5),
               Kernel.from_offsets(space, [(2, 1 / 3), (-1, 2 / 3)])]
    c = space.signed_coords()[:, 0]
    worst = 0.0
    for kernel in kernels:
        for _ in range(100):
            eta = np.zeros(space.size, np.uint8)
            supp = np.abs(c) <= 10
            eta[supp] = rng.random(supp.sum()) < rng.uniform(0.2, 0.9)
            x = int(rng.choice(np.flatnonzero(supp)))
            for variant in ("q_bar", "q"):
                signed, _ = displacement_sum(kernel, x, eta, variant)
                worst = max(worst, abs(signed))
    return Row(2, "zero-mean displacement", worst, 1e-10, worst < 1e-10)


# -- 3: marginal consistency of the coupled rates --------------------------------------

def criterion_3(seed: int) -> Row:
    rng = _rng(seed, 3)
    space = SiteSpace.torus(8)
    kernels = [Kernel.nearest_neighbor(space, 0.7),
               Kernel.from_offsets(space, [(1, 0.4), (-1, 0.2), (3, 0.2), (-2, 0.2)])]
    worst = 0.0
    for kernel in kernels:
        for _ in range(200):
            eta = (rng.random(8) < 0.6).astype(np.uint8)
            xi = (rng.random(8) < 0.6).astype(np.uint8)
            x = int(rng.integers(8))
            eta[x] = xi[x] = 1
            for a, b in ((eta, xi), (xi, eta)):
                pair = Pair(space, a, b)
                for y in np.flatnonzero(a == 0):
                    r_move, r_delta = marginal_consistency_check(kernel, x, int(y), pair)
                    worst = max(worst, abs(r_move), abs(r_delta))
    return Row(3, "coupled marginal consistency", worst, 1e-10, worst < 1e-10)


# -- 4: generator integrates to zero under stationary measures ------------------------

def criterion_4(seed: int) -> Row:
    worst = 0.0
    detail = {}
    for N in range(5, 11):
        space = SiteSpace.torus(N)
        kernels = [Kernel.nearest_neighbor(space, 0.7)]
        if N <= 8:
            kernels.append(Kernel.from_offsets(space, [(1, 0.5), (2, 0.2), (-3, 0.3)]))
        for kernel in kernels:
            gen = build_generator(kernel)
            for mu in stationary(gen):
                rep = invariance_report(gen, mu, max_size=3)
                worst = max(worst, rep.cylinder_max)
        detail[f"Z{N}"] = worst
    return Row(4, "stationary cylinder integrals", worst, 1e-8, worst < 1e-8, detail=detail)


# -- 5: exchangeable measures are stationary ----------------------------------------------

def criterion_5(seed: int) -> Row:
    worst = 0.0
    findings = []
    for N in range(4, 11):
        space = SiteSpace.torus(N)
        kernels = {"symmetric": Kernel.nearest_neighbor(space, 0.5),
                   "asymmetric": Kernel.nearest_neighbor(space, 0.7)}
        if N >= 7:
            kernels["long-jump"] = Kernel.from_offsets(space, [(1, 0.5), (3, 0.2), (-2, 0.3)])
        for name, kernel in kernels.items():
            gen = build_generator(kernel)
            for k in range(N + 1):
                res = float(np.abs(gen.Q.T @ Measure.uniform_on_shell(gen, k).p).max())
                worst = max(worst, res)
                if res >= 1e-10:
                    findings.append({"N": N, "kernel": name, "k": k, "residual": res})
    return Row(5, "uniform-on-shell stationarity", worst, 1e-10, worst < 1e-10,
               detail={"findings": findings})


# -- 6: simulator against uniformization ------------------------------------------------

def criterion_6(seed: int) -> Row:
    space = SiteSpace.torus(5)
    kernel = Kernel.nearest_neighbor(space, 0.7)
    eta0 = np.array([1, 1, 0, 0, 0], np.uint8)
    gen = build_generator(kernel, shell=2)
    row = transition_probabilities(gen, 1.0, rows=[gen.lookup(eta0)])[0]
    replicas = 10**5
    counts = empirical_law(kernel, eta0, 1.0, RngPlan(seed, (6,)), replicas)
    emp = np.zeros(gen.size)
    for label, c in counts.items():
        emp[gen.lookup([int(ch) for ch in label])] = c / replicas
    tv = 0.5 * float(np.abs(emp - row).sum())
    return Row(6, "simulator vs uniformization (TV)", tv, 0.01, tv < 0.01)


# -- 7: coupled runs stay ordered ------------------------------------------------------------

def criterion_7(seed: int) -> Row:
    rng = _rng(seed, 7)
    space = SiteSpace.torus(8)
    kernels = [Kernel.nearest_neighbor(space, 0.7),
               Kernel.from_offsets(space, [(1, 0.4), (-1, 0.2), (3, 0.2), (-2, 0.2)])]
    plan = RngPlan(seed, (7,))
    violations = 0
    checked = 0
    for i in range(10**4):
        big = (rng.random(8) < 0.6).astype(np.uint8)
        small = big & (rng.random(8) < 0.6).astype(np.uint8)
        eta, xi = (small, big) if i % 2 == 0 else (big, small)
        sign = 1 if i % 2 else -1

        def check(t, e, s):
            nonlocal violations, checked
            checked += 1
            d = sign * (e.astype(int) - s.astype(int))
            violations += int((d < 0).any())
            return False
        run_coupled(kernels[i % 2], eta, xi, 2.0, plan.replica(i), on_event=check)
    return Row(7, "coupled order preservation", violations, 0, violations == 0,
               detail={"events_checked": checked})


# -- 8: discrepancies of opposite sign annihilate ----------------------------------------------

def criterion_8(seed: int) -> Row:
    space = SiteSpace.torus(4)
    gen = build_generator(Kernel.nearest_neighbor(space, 0.7), mode="coupled")
    rep = ordered_absorption_report(gen)
    mass = max(c["unordered_mass"] for c in rep.classes)
    k10 = Kernel.nearest_neighbor(SiteSpace.torus(10), 0.7)
    of = ordered_fraction(k10, lambda i: single_discrepancy_pair(10, 0.5, _rng(seed, 8, i)),
                          200.0, 500, RngPlan(seed, (8,)), times=[200.0])
    frac = float(of.fraction[-1])
    ok = rep.closed and mass < 1e-8 and frac >= 0.99
    return Row(8, "ordered absorption (unordered mass)", mass, 1e-8, ok,
               detail={"ordered_set_closed": rep.closed, "ordered_fraction_t200": frac,
                       "mean_ordering_time": of.mean_time})


# -- 9: integrated target rate up to absorption -------------------------------------------------

def criterion_9(seed: int) -> Row:
    rng = _rng(seed, 9)
    grid = (0.5, 1.0, 2.0, 4.0)
    worst = -math.inf
    for _ in range(5):
        Q = rng.random((5, 5)) * 2
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        A = [int(a) for a in rng.choice(np.arange(1, 5), size=int(rng.integers(1, 3)), replace=False)]
        chk = absorption_integral_tail(Q, 0, A, 10**5, rng, grid)
        worst = max(worst, float(((chk.estimate - chk.bound) / np.maximum(chk.stderr, 1e-300)).max()))
    c = 1.7
    Q2 = np.array([[-c, c], [0.0, 0.0]])
    eq = absorption_integral_tail(Q2, 0, [1], 10**5, rng, grid)
    z_eq = float((np.abs(eq.estimate - eq.bound) / eq.stderr).max())
    ok = worst <= 3.0 and z_eq <= 3.0
    return Row(9, "integrated rate tail vs exp(-t) (max z)", max(worst, z_eq), 3.0, ok,
               detail={"one_sided_max_z": worst, "equality_case_max_abs_z": z_eq})


# -- 10: gain integral against the compound Poisson tail -------------------------------------------

def criterion_10(seed: int) -> Row:
    space = SiteSpace.torus(12)
    kernel = Kernel.nearest_neighbor(space, 0.7)
    grid = (0.5, 1.0, 2.0, 4.0)
    worst = -math.inf
    detail = {}
    for j, rho in enumerate((0.3, 0.7)):
        init = (lambda i, rho=rho, j=j: (_rng(seed, 10, j, i).random(12) < rho).astype(np.uint8))
        chk = gain_integral_tail(kernel, init, 0, 20000, RngPlan(seed, (10, j)), grid)
        z = float(((chk.estimate - chk.bound) / chk.stderr).max())
        worst = max(worst, z)
        detail[f"rho={rho}"] = {"estimate": chk.estimate.tolist(), "bound": chk.bound.tolist()}
    return Row(10, "gain integral tail vs compound bound (max z)", worst, 3.0, worst <= 3.0, detail=detail)


# -- 11: range of the walk -------------------------------------------------------------------------------

def criterion_11(seed: int) -> Row:
    rng = _rng(seed, 11)
    kernel = Kernel.nearest_neighbor(SiteSpace.centered(40), 0.5)
    # E(tau_2), E(tau_3) and the law of R_k for k <= 30 from 10^6 walks
    short = range_statistics(kernel, 3, 10**6, rng, n_steps=30, step_cap=400)
    tau2_exact = short.mean_tau[2] == 1.0 and short.se_tau[2] == 0.0
    tau3_rel = abs(short.mean_tau[3] - 3.0) / 3.0
    # E(tau_k) up to k = 30 needs long walks; fewer of them
    long = range_statistics(kernel, 30, 20000, rng, step_cap=20000)
    c0 = float(np.nanmax(long.ratio_cubic()))
    probs, _ = short.prob_range_below(0.25)
    ks = np.arange(len(probs))
    tail = probs[ks >= 16]
    increases = [(int(k), float(a), float(b)) for k, a, b in zip(ks[ks >= 16][1:], tail[:-1], tail[1:]) if b > a]
    ok = tau2_exact and tau3_rel < 0.01 and np.isfinite(c0) and not increases
    return Row(11, "range statistics (E tau_3 rel. error)", tau3_rel, 0.01, ok,
               detail={"E_tau2_exactly_1": bool(tau2_exact), "sup_ratio_tau_k_over_k3": c0,
                       "censored": int(short.censored.sum() + long.censored.sum()),
                       "prob_range_below_k^(1/4)": dict(zip(map(int, ks), map(float, probs))),
                       "monotonicity_breaks": increases})


# -- 12: determinism --------------------------------------------------------------------------------------

def criterion_12(seed: int) -> Row:
    space = SiteSpace.torus(8)
    kernel = Kernel.from_offsets(space, [(1, 0.4), (-1, 0.2), (3, 0.2), (-2, 0.2)])

    def fingerprint() -> str:
        plan = RngPlan(seed, (12,))
        parts = []
        for i in range(50):
            eta = (_rng(seed, 12, i).random(8) < 0.5).astype(np.uint8)
            xi = (_rng(seed, 12, i, 1).random(8) < 0.5).astype(np.uint8)
            tr = run_coupled(kernel, eta, xi, 3.0, plan.replica(i))
            parts += [f"{e.time!r},{e.site},{e.ring},{e.outcome},{e.target},{e.marginal}"
                      for e in tr.eta.events + tr.xi.events]
            parts.append(to_bitstring(tr.eta.final()) + to_bitstring(tr.xi.final()))
        parts.append(repr(criterion_9(seed).detail))
        return "\n".join(parts)
    a, b = fingerprint(), fingerprint()
    return Row(12, "determinism under a fixed seed", float(a != b), 0, a == b,
               detail={"bytes_compared": len(a)})


CRITERIA: dict[int, Callable[[int], Row]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
    7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12,
}


def run_criterion(cid: int, seed: int = DEFAULT_SEED, fault: bool = False) -> Row:
    t0 = time.perf_counter()
    try:
        if fault:
            with fault_injection():
                row = CRITERIA[cid](seed)
        else:
            row = CRITERIA[cid](seed)
    except Exception as exc:  # a broken criterion is a failed row, not a crashed suite
        row = Row(cid, CRITERIA[cid].__name__, math.nan, math.nan, False,
                  detail={"error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()})
    row.runtime = time.perf_counter() - t0
    return row


def _job(args):
    return run_criterion(*args)


def run_acceptance(seed: int = DEFAULT_SEED, only=None, fault: bool = False, jobs: int = 1,
                   echo: Callable[[str], None] | None = None) -> list[Row]:
    """Run the selected criteria (all when ``only`` is None) in id order."""
    ids = sorted(CRITERIA) if only is None else sorted(int(i) for i in only)
    unknown = [i for i in ids if i not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}")
    if jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_job, [(i, seed, fault) for i in ids]))
        if echo:
            for r in rows:
                echo(r.line())
        return rows
    rows = []
    for i in ids:
        r = run_criterion(i, seed, fault)
        if echo:
            echo(r.line())
        rows.append(r)
    return rows


def rows_to_dicts(rows: list[Row]) -> list[dict]:
    return [asdict(r) for r in rows]

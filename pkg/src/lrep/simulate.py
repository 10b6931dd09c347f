"""Pathwise construction: Poisson clocks at every site and one chain per (site, ring).

Randomness is attached to (site, ring index), never to the configuration, so
runs from different initial data with the same plan share every clock time and
every chain step.  That is what makes coupled runs and window sequences
monotone pathwise.

Streams are counter-based (Philox): the key comes from the master seed and the
replica key, the counter words carry (stream kind, ring, site).  Opening a
stream is cheap and needs no bookkeeping of previously drawn numbers.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator

import numpy as np

from .lattice import Kernel
from .rates import as_config, to_bitstring

CLOCK, CHAIN = 0, 1
OUTCOMES = ("jump", "cancelled", "disappeared", "step-cap")
_U53 = 1.0 / 9007199254740992.0


@lru_cache(maxsize=4096)
def _philox_key(seed: int, key: tuple[int, ...]) -> tuple[int, int]:
    words = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint64)
    return int(words[0]), int(words[1])


@dataclass(frozen=True)
class RngPlan:
    """Master seed plus a replica key; derives every clock and chain stream."""

    seed: int
    key: tuple[int, ...] = ()

    def replica(self, i: int) -> RngPlan:
        return RngPlan(self.seed, self.key + (int(i),))

    def stream(self, kind: int, site: int, ring: int = 0) -> np.random.Philox:
        k = np.array(_philox_key(self.seed, self.key), dtype=np.uint64)
        return np.random.Philox(key=k, counter=np.array([0, kind, ring, site], dtype=np.uint64))

    def uniforms(self, bg: np.random.Philox, n: int) -> np.ndarray:
        return ((bg.random_raw(n) >> np.uint64(11)) + 1).astype(float) * _U53   # in (0, 1]


class Clocks:
    """Rate-one Poisson clocks at every site, merged in time order."""

    def __init__(self, n: int, plan: RngPlan, block: int = 16):
        self.plan = plan
        self.block = block
        self.streams = [plan.stream(CLOCK, x) for x in range(n)]
        self.buf = [np.empty(0)] * n
        self.pos = [0] * n
        self.ring = [0] * n
        self.heap = [(self._gap(x), x) for x in range(n)]
        heapq.heapify(self.heap)

    def _gap(self, x: int) -> float:
        if self.pos[x] == len(self.buf[x]):
            self.buf[x] = -np.log(self.plan.uniforms(self.streams[x], self.block))
            self.pos[x] = 0
        g = self.buf[x][self.pos[x]]
        self.pos[x] += 1
        return float(g)

    def next(self) -> tuple[float, int, int]:
        """Time, site and ring index (0-based, counting every ring at the site)."""
        t, x = heapq.heappop(self.heap)
        n = self.ring[x]
        self.ring[x] += 1
        heapq.heappush(self.heap, (t + self._gap(x), x))
        return t, x, n


class ChainStore:
    """Lazily generated chain paths X^{n,x}, cached so every run sees the same steps.

    Positions are window indices; on a segment they may leave ``0..N-1``.  An
    open-escape path is cut at its first off-window position.
    """

    def __init__(self, kernel: Kernel, plan: RngPlan, block: int = 32, step_cap: int = 10**5):
        self.kernel = kernel
        self.plan = plan
        self.block = block
        self.step_cap = step_cap
        self.paths: dict[tuple[int, int], list[int]] = {}
        self._streams: dict[tuple[int, int], np.random.Philox] = {}
        self._done: set[tuple[int, int]] = set()
        space = kernel.space
        self.open_exit = space.kind == "segment" and space.boundary == "open-escape"
        self._mode = "matrix"
        if kernel.offsets is not None:
            steps, cdf, nbr = kernel._offset_table
            self._cdf = cdf
            self._steps = steps
            self._nbr = nbr
            self._mode = "torus" if nbr is not None else "line"
        else:
            self._rows = kernel._row_cdf

    def _extend(self, key):
        x, _ = key
        path = self.paths.setdefault(key, [])
        if key not in self._streams:
            self._streams[key] = self.plan.stream(CHAIN, x, key[1])
        u = self.plan.uniforms(self._streams[key], self.block)
        pos = path[-1] if path else x
        n = self.kernel.n
        if self._mode == "matrix":
            rows = self._rows
            new = []
            for v in u:
                pos = min(int(np.searchsorted(rows[pos], v, side="right")), n - 1)
                new.append(pos)
        else:
            k = np.minimum(np.searchsorted(self._cdf, u, side="right"), len(self._cdf) - 1)
            if self._mode == "torus":
                nbr = self._nbr
                new = []
                for kk in k.tolist():
                    pos = int(nbr[pos, kk])
                    new.append(pos)
            else:
                new = (pos + np.cumsum(self._steps[k])).tolist()
        if self.open_exit:
            for i, p in enumerate(new):
                if not 0 <= p < n:
                    new = new[:i + 1]
                    self._done.add(key)
                    break
        path.extend(new)

    def path(self, x: int, ring: int) -> list[int]:
        key = (x, ring)
        if key not in self.paths:
            self._extend(key)
        return self.paths[key]

    def resolve(self, x: int, ring: int, occupied: np.ndarray) -> tuple[str, int | None]:
        """Outcome of ring ``ring`` at occupied site ``x`` for configuration ``occupied``."""
        key = (x, ring)
        path = self.path(x, ring)
        n = self.kernel.n
        i = 0
        while True:
            while i < len(path):
                p = path[i]
                i += 1
                if not 0 <= p < n:
                    if self.open_exit:
                        return "disappeared", None
                    continue
                if p == x:
                    return "cancelled", None
                if not occupied[p]:
                    return "jump", p
            if key in self._done:
                return "disappeared", None
            if len(path) >= self.step_cap:
                return "step-cap", None
            self._extend(key)


@dataclass
class Event:
    time: float
    site: int
    ring: int
    outcome: str
    target: int | None = None
    marginal: str = ""


@dataclass
class Trajectory:
    """Initial configuration plus the ordered events that changed or tried to change it."""

    initial: np.ndarray
    horizon: float
    events: list[Event] = field(default_factory=list)

    @staticmethod
    def apply(eta: np.ndarray, ev: Event) -> None:
        if ev.outcome == "jump":
            eta[ev.site] = 0
            eta[ev.target] = 1
        elif ev.outcome == "disappeared":
            eta[ev.site] = 0

    def final(self) -> np.ndarray:
        eta = self.initial.copy()
        for ev in self.events:
            self.apply(eta, ev)
        return eta

    def config_at(self, times) -> list[np.ndarray]:
        times = np.sort(np.atleast_1d(np.asarray(times, float)))
        out = []
        eta = self.initial.copy()
        i = 0
        for t in times:
            while i < len(self.events) and self.events[i].time <= t:
                self.apply(eta, self.events[i])
                i += 1
            out.append(eta.copy())
        return out

    def intervals(self) -> Iterator[tuple[float, float, np.ndarray]]:
        """(start, end, configuration) pieces on which the state is constant."""
        eta = self.initial.copy()
        t0 = 0.0
        for ev in self.events:
            if ev.outcome in ("jump", "disappeared"):
                yield t0, ev.time, eta
                eta = eta.copy()
                self.apply(eta, ev)
                t0 = ev.time
        yield t0, self.horizon, eta

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "site", "ring", "outcome", "target"])
            for ev in self.events:
                w.writerow([repr(ev.time), ev.site, ev.ring, ev.outcome, "" if ev.target is None else ev.target])

    def snapshot_lines(self, times) -> list[str]:
        return [to_bitstring(c) for c in self.config_at(times)]


@dataclass
class PairTrajectory:
    eta: Trajectory
    xi: Trajectory

    @property
    def horizon(self) -> float:
        return self.eta.horizon

    def write_csv(self, path) -> None:
        rows = [(ev.time, "eta", ev) for ev in self.eta.events] + [(ev.time, "xi", ev) for ev in self.xi.events]
        rows.sort(key=lambda r: (r[0], r[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "site", "ring", "outcome", "target", "marginal"])
            for _, m, ev in rows:
                w.writerow([repr(ev.time), ev.site, ev.ring, ev.outcome, "" if ev.target is None else ev.target, m])


def _check(kernel: Kernel, eta) -> np.ndarray:
    return as_config(eta, kernel.n).copy()


def run_single(kernel: Kernel, eta0, horizon: float, plan: RngPlan,
               chains: ChainStore | None = None) -> Trajectory:
    eta = _check(kernel, eta0)
    traj = Trajectory(eta.copy(), float(horizon))
    if not eta.any():
        return traj
    chains = chains or ChainStore(kernel, plan)
    clocks = Clocks(kernel.n, plan)
    while True:
        t, x, ring = clocks.next()
        if t > horizon:
            return traj
        if not eta[x]:
            continue
        outcome, y = chains.resolve(x, ring, eta)
        ev = Event(t, x, ring, outcome, y)
        traj.apply(eta, ev)
        traj.events.append(ev)


def run_coupled(kernel: Kernel, eta0, xi0, horizon: float, plan: RngPlan,
                chains: ChainStore | None = None,
                on_event: Callable[[float, np.ndarray, np.ndarray], bool] | None = None) -> PairTrajectory:
    """Both marginals share the clocks and the chains; each applies its own stopping rule.

    ``on_event(t, eta, xi)`` is called after every ring that touched either copy;
    returning True stops the run early (the horizon is then set to ``t``).
    """
    eta, xi = _check(kernel, eta0), _check(kernel, xi0)
    te, tx = Trajectory(eta.copy(), float(horizon)), Trajectory(xi.copy(), float(horizon))
    out = PairTrajectory(te, tx)
    if not (eta.any() or xi.any()):
        return out
    chains = chains or ChainStore(kernel, plan)
    clocks = Clocks(kernel.n, plan)
    while True:
        t, x, ring = clocks.next()
        if t > horizon:
            return out
        hit = False
        if eta[x]:
            o, y = chains.resolve(x, ring, eta)
            ev = Event(t, x, ring, o, y, "eta")
            te.apply(eta, ev)
            te.events.append(ev)
            hit = True
        if xi[x]:
            o, y = chains.resolve(x, ring, xi)
            ev = Event(t, x, ring, o, y, "xi")
            tx.apply(xi, ev)
            tx.events.append(ev)
            hit = True
        if hit and on_event is not None and on_event(t, eta, xi):
            te.horizon = tx.horizon = t
            return out


@dataclass
class WindowRuns:
    radii: list[int]
    runs: list[Trajectory]
    check_times: np.ndarray
    violations: int


def run_window_sequence(kernel: Kernel, xi, radii, horizon: float, plan: RngPlan,
                        check_times=None) -> WindowRuns:
    """Runs from xi restricted to growing windows, all on one plan.

    Occupancy must be non-decreasing in the window radius at every checked time;
    ``violations`` counts (time, radius, site) triples where it is not.  By
    default every event time of every run is checked.
    """
    xi = _check(kernel, xi)
    radii = sorted(int(r) for r in radii)
    chains = ChainStore(kernel, plan)
    runs = []
    for r in radii:
        runs.append(run_single(kernel, xi * kernel.space.window(r), horizon, plan, chains))
    if check_times is None:
        check_times = np.unique([ev.time for tr in runs for ev in tr.events] + [0.0, horizon])
    check_times = np.asarray(check_times, float)
    snaps = [tr.config_at(check_times) for tr in runs]
    bad = 0
    for a, b in zip(snaps, snaps[1:]):
        for ca, cb in zip(a, b):
            bad += int((ca > cb).sum())
    return WindowRuns(radii, runs, check_times, bad)


def occupied_durations(traj: Trajectory, x: int) -> tuple[np.ndarray, np.ndarray]:
    """Lengths of completed occupation periods at ``x`` and of censored ones."""
    done, open_ = [], []
    occ = bool(traj.initial[x])
    start = 0.0
    for ev in traj.events:
        if ev.outcome == "jump" and ev.target == x:
            occ, start = True, ev.time
        elif ev.outcome in ("jump", "disappeared") and ev.site == x:
            done.append(ev.time - start)
            occ = False
    if occ:
        open_.append(traj.horizon - start)
    return np.array(done), np.array(open_)


def empirical_law(kernel: Kernel, eta0, horizon: float, plan: RngPlan, replicas: int) -> dict[str, int]:
    """Counts of final configurations (as bitstrings) over independent replicas."""
    counts: dict[str, int] = {}
    for i in range(replicas):
        key = to_bitstring(run_single(kernel, eta0, horizon, plan.replica(i)).final())
        counts[key] = counts.get(key, 0) + 1
    return counts

"""Site spaces, jump kernels and random-walk primitives.

Sites are always addressed by integer index ``0..N-1``.  A :class:`SiteSpace`
maps indices to coordinates; a :class:`Kernel` is a jump matrix bound to a
space.  On a segment the kernel rows may leak mass off the window; that mass is
kept in ``exit_left`` / ``exit_right`` so every row still sums to one.

The exact solver :func:`absorb` is the workhorse for every rate in the package:
it returns the law of the first non-passable site hit by the chain started at
``start`` (the starting site itself is never inspected at time 0).
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

DENSE_SOLVE_LIMIT = 2000
ROW_TOL = 1e-12


class NotComputableError(ValueError):
    """A rate was requested on a geometry where it has no exact value."""


class NumericalFailure(RuntimeError):
    """A linear solve did not meet its residual tolerance."""


class KernelValidationError(ValueError):
    pass


@dataclass(frozen=True)
class SiteSpace:
    """Finite set of sites with a coordinate map.

    ``kind`` is ``"torus"`` (coordinates wrap modulo ``dims``), ``"segment"``
    (one-dimensional window starting at coordinate ``origin``) or
    ``"abstract"`` (explicit matrices; coordinate = index).
    """

    dims: tuple[int, ...]
    kind: str = "torus"
    boundary: str = "open-escape"
    origin: int = 0

    def __post_init__(self):
        if self.kind not in ("torus", "segment", "abstract"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.boundary not in ("open-escape", "occupied-exterior"):
            raise ValueError(f"unknown boundary policy {self.boundary!r}")
        if not self.dims or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must be positive integers")
        if self.kind != "torus" and len(self.dims) != 1:
            raise ValueError(f"{self.kind} spaces are one-dimensional")

    @classmethod
    def torus(cls, *dims: int) -> SiteSpace:
        return cls(tuple(int(d) for d in dims), "torus")

    @classmethod
    def segment(cls, length: int, boundary: str = "open-escape", origin: int = 0) -> SiteSpace:
        return cls((int(length),), "segment", boundary, int(origin))

    @classmethod
    def centered(cls, radius: int, boundary: str = "open-escape") -> SiteSpace:
        """Segment covering coordinates ``-radius..radius``."""
        return cls.segment(2 * radius + 1, boundary, -radius)

    @classmethod
    def abstract(cls, n: int) -> SiteSpace:
        return cls((int(n),), "abstract")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def coord(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.size:
            raise IndexError(f"site {i} outside space of size {self.size}")
        if self.kind == "torus":
            return tuple(int(c) for c in np.unravel_index(i, self.dims))
        return (i + self.origin,)

    def index(self, coord) -> int:
        """Index of a coordinate; tori wrap, segments reject off-window points."""
        c = (coord,) if np.isscalar(coord) else tuple(coord)
        if len(c) != self.ndim:
            raise ValueError(f"coordinate {coord!r} has wrong dimension")
        if self.kind == "torus":
            return int(np.ravel_multi_index(tuple(int(a) % d for a, d in zip(c, self.dims)), self.dims))
        i = int(c[0]) - self.origin
        if not 0 <= i < self.size:
            raise IndexError(f"coordinate {coord!r} outside the window")
        return i

    def contains(self, coord) -> bool:
        if self.kind == "torus":
            return True
        i = int(coord if np.isscalar(coord) else coord[0]) - self.origin
        return 0 <= i < self.size

    def signed_coords(self) -> np.ndarray:
        """Coordinates as an ``(N, d)`` array, torus entries folded into ``[-m//2, m//2]``."""
        idx = np.arange(self.size)
        if self.kind == "torus":
            cs = np.stack(np.unravel_index(idx, self.dims), axis=1)
            dims = np.asarray(self.dims)
            return np.where(cs > dims // 2, cs - dims, cs)
        return (idx + self.origin)[:, None]

    def window(self, radius: int) -> np.ndarray:
        """Boolean mask of sites with every coordinate in ``[-radius, radius]``."""
        if self.kind == "torus" and any(2 * radius + 1 > d for d in self.dims):
            raise ValueError(f"window radius {radius} does not fit in torus {self.dims}")
        return np.all(np.abs(self.signed_coords()) <= radius, axis=1)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dims": list(self.dims)}
        if self.kind == "segment":
            d.update(boundary=self.boundary, origin=self.origin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SiteSpace:
        d = dict(d)
        kind = d.pop("kind", "torus")
        dims = d.pop("dims")
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        space = cls(tuple(int(x) for x in dims), kind, d.pop("boundary", "open-escape"), int(d.pop("origin", 0)))
        if d:
            raise ValueError(f"unknown space keys: {sorted(d)}")
        return space


class Kernel:
    """Row-stochastic jump matrix on a :class:`SiteSpace`.

    Build with :meth:`from_offsets` (translation-invariant walks),
    :meth:`nearest_neighbor` or :meth:`from_matrix`.
    """

    def __init__(self, space: SiteSpace, matrix, exit_left=None, exit_right=None,
                 offsets=None, stochastic: bool = True):
        self.space = space
        self.P = sparse.csr_matrix(matrix, dtype=float)
        n = space.size
        if self.P.shape != (n, n):
            raise KernelValidationError(f"matrix shape {self.P.shape} does not match {n} sites")
        self.exit_left = np.zeros(n) if exit_left is None else np.asarray(exit_left, float)
        self.exit_right = np.zeros(n) if exit_right is None else np.asarray(exit_right, float)
        self.offsets = offsets
        self.stochastic = stochastic
        if stochastic:
            self._validate()
        self.succ = [self.P.indices[self.P.indptr[i]:self.P.indptr[i + 1]] for i in range(n)]

    def _validate(self):
        data = self.P.toarray() if self.space.size <= 4096 else None
        if (self.P.data < 0).any():
            rows = np.unique(np.repeat(np.arange(self.space.size), np.diff(self.P.indptr))[self.P.data < 0])
            raise KernelValidationError(f"negative entry in row {int(rows[0])}")
        sums = np.asarray(self.P.sum(axis=1)).ravel() + self.exit_left + self.exit_right
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
        if bad.size:
            raise KernelValidationError(f"row {int(bad[0])} sums to {float(sums[bad[0]])!r}, not 1")
        diag = self.P.diagonal() if data is None else np.diag(data)
        bad = np.flatnonzero(diag != 0)
        if bad.size:
            raise KernelValidationError(f"row {int(bad[0])} has p(x,x) = {float(diag[bad[0]])!r}; self-jumps are not allowed")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_offsets(cls, space: SiteSpace, offsets: Iterable) -> Kernel:
        """Translation-invariant walk; ``offsets`` is ``[(vector, prob), ...]``."""
        if space.kind == "abstract":
            raise KernelValidationError("offset kernels need a torus or segment")
        offs = []
        for item in offsets:
            vec, prob = item
            vec = (int(vec),) if np.isscalar(vec) else tuple(int(v) for v in vec)
            if len(vec) != space.ndim:
                raise KernelValidationError(f"offset {vec} has wrong dimension")
            if prob < 0:
                raise KernelValidationError(f"offset {vec} has negative probability")
            if not any(vec):
                raise KernelValidationError("zero offset would give p(x,x) > 0")
            if prob > 0:
                offs.append((vec, float(prob)))
        total = sum(p for _, p in offs)
        if abs(total - 1.0) > ROW_TOL:
            raise KernelValidationError(f"offset probabilities sum to {float(total)!r}, not 1")
        n = space.size
        rows, cols, vals = [], [], []
        exit_l, exit_r = np.zeros(n), np.zeros(n)
        for i in range(n):
            c = space.coord(i)
            for vec, prob in offs:
                target = tuple(a + b for a, b in zip(c, vec))
                if space.contains(target):
                    j = space.index(target)
                    if j == i:
                        raise KernelValidationError(f"row {i}: offset {vec} wraps onto its own site")
                    rows.append(i), cols.append(j), vals.append(prob)
                elif vec[0] < 0:
                    exit_l[i] += prob
                else:
                    exit_r[i] += prob
        P = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        P.sum_duplicates()
        return cls(space, P, exit_l, exit_r, offsets=tuple(offs))

    @classmethod
    def nearest_neighbor(cls, space: SiteSpace, p: float) -> Kernel:
        """One-dimensional walk stepping +1 with probability ``p``, else -1."""
        return cls.from_offsets(space, [(1, p), (-1, 1.0 - p)])

    @classmethod
    def from_matrix(cls, matrix, space: SiteSpace | None = None) -> Kernel:
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise KernelValidationError(f"matrix must be square, got shape {M.shape}")
        return cls(space or SiteSpace.abstract(M.shape[0]), M)

    @classmethod
    def from_config(cls, cfg: dict, space: SiteSpace | None = None) -> Kernel:
        """``{"offsets": [[1, 0.7], [-1, 0.3]]}``, ``{"nn": 0.7}`` or ``{"matrix": [[...]]}``."""
        cfg = dict(cfg)
        if "matrix" in cfg:
            return cls.from_matrix(cfg.pop("matrix"), space)
        if space is None:
            raise KernelValidationError("offset kernels need a site space")
        if "nn" in cfg:
            return cls.nearest_neighbor(space, float(cfg["nn"]))
        if "offsets" in cfg:
            return cls.from_offsets(space, [(o, p) for o, p in cfg["offsets"]])
        raise KernelValidationError(f"kernel config needs 'offsets', 'nn' or 'matrix', got {sorted(cfg)}")

    @classmethod
    def load(cls, path: str | Path, space: SiteSpace | None = None) -> Kernel:
        return cls.from_config(json.loads(Path(path).read_text()), space)

    # -- derived quantities ---------------------------------------------

    @property
    def n(self) -> int:
        return self.space.size

    @cached_property
    def dense(self) -> np.ndarray:
        return self.P.toarray()

    @property
    def exit(self) -> np.ndarray:
        return self.exit_left + self.exit_right

    @property
    def is_nearest_neighbor(self) -> bool:
        if self.offsets is None or self.space.ndim != 1:
            return False
        return {v[0] for v, _ in self.offsets} <= {1, -1}

    @property
    def p_right(self) -> float:
        if not self.is_nearest_neighbor:
            raise NotComputableError("p_right is defined for nearest-neighbour kernels only")
        return sum(p for v, p in self.offsets if v[0] == 1)

    def mean(self) -> np.ndarray:
        """Mean jump vector of an offset kernel."""
        if self.offsets is None:
            raise NotComputableError("mean jump needs an offset kernel")
        return sum(np.asarray(v, float) * p for v, p in self.offsets)

    @property
    def max_jump(self) -> int:
        if self.offsets is None:
            return self.n
        return max(max(abs(c) for c in v) for v, _ in self.offsets)

    def reverse(self) -> Kernel:
        """Kernel of the reversed walk, p*(x, y) = p(y, x).

        Offset kernels reverse their offsets.  A matrix that is not doubly
        stochastic is kept as the formal transpose (``stochastic=False``).
        """
        if self.offsets is not None:
            return Kernel.from_offsets(self.space, [(tuple(-c for c in v), p) for v, p in self.offsets])
        T = self.dense.T.copy()
        ok = np.allclose(T.sum(axis=1), 1.0, atol=1e-12)
        return Kernel(self.space, T, stochastic=ok)

    def to_dict(self) -> dict:
        if self.offsets is not None:
            return {"offsets": [[list(v) if len(v) > 1 else v[0], p] for v, p in self.offsets]}
        return {"matrix": self.dense.tolist()}

    # -- sampling helpers ------------------------------------------------

    @cached_property
    def _offset_table(self):
        vecs = np.array([v for v, _ in self.offsets])
        cdf = np.cumsum([p for _, p in self.offsets])
        cdf[-1] = 1.0
        if self.space.kind == "torus":
            nbr = np.array([[self.space.index(tuple(np.add(self.space.coord(i), v))) for v in vecs]
                            for i in range(self.n)])
        else:
            nbr = None
        return vecs[:, 0], cdf, nbr

    @cached_property
    def _row_cdf(self):
        cdf = np.cumsum(self.dense, axis=1)
        cdf[:, -1] = 1.0
        return cdf

    def advance(self, pos: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One step of the chain from positions ``pos`` driven by uniforms ``u``.

        On segments, positions are window indices and may leave ``0..N-1``; the
        caller decides what an off-window position means.
        """
        if self.offsets is not None:
            steps, cdf, nbr = self._offset_table
            k = np.searchsorted(cdf, u, side="right")
            k = np.minimum(k, len(cdf) - 1)
            if nbr is not None:
                return nbr[pos, k]
            return pos + steps[k]
        cdf = self._row_cdf[pos]
        k = (cdf <= np.asarray(u)[..., None]).sum(axis=-1)
        return np.minimum(k, self.n - 1)

    def in_window(self, pos):
        return (pos >= 0) & (pos < self.n)


# ---------------------------------------------------------------------------
# Exact absorption


@dataclass
class Absorption:
    """Law of the first non-passable site hit at a time ``n >= 1``.

    ``probs[j]`` is the probability of stopping at site ``j`` (zero on passable
    sites).  ``escape`` is mass lost off the window, ``trapped`` the mass that
    stays in passable sites forever.
    """

    probs: np.ndarray
    escape: float = 0.0
    trapped: float = 0.0

    @property
    def lost(self) -> float:
        return self.escape + self.trapped


def _exterior_return(kernel: Kernel):
    """Return probabilities from the occupied exterior, nearest-neighbour walks only."""
    p = kernel.p_right
    q = 1.0 - p
    right = 1.0 if p <= q else q / p
    left = 1.0 if q <= p else p / q
    return left, right


def absorb(kernel: Kernel, start: int, passable: np.ndarray) -> Absorption:
    """Exact first-exit law of the chain from ``start`` through ``passable`` sites.

    Solves ``v (I - T) = u`` on the passable sites reachable from ``start``
    that can still leave the passable set; the rest of the reachable passable
    sites form closed classes and contribute ``trapped`` mass.
    """
    n = kernel.n
    passable = np.asarray(passable, bool)
    space = kernel.space
    ext_closed = space.kind == "segment" and space.boundary == "occupied-exterior"

    nn_exterior = ext_closed and kernel.is_nearest_neighbor

    # reachable passable sites; exterior excursions of a NN walk re-enter at the edges
    seen = np.zeros(n, bool)
    order = []
    queue = deque(int(j) for j in kernel.succ[start] if passable[j])
    if nn_exterior:
        queue.extend(e for e in {0, n - 1} if passable[e] and e not in queue)
    for j in queue:
        seen[j] = True
    while queue:
        i = queue.popleft()
        order.append(i)
        for j in kernel.succ[i]:
            if passable[j] and not seen[j]:
                seen[j] = True
                queue.append(int(j))
    C = np.array(sorted(order), dtype=int)

    leaks = kernel.exit[np.r_[start, C]] > 0
    if ext_closed and leaks.any() and not kernel.is_nearest_neighbor:
        raise NotComputableError(
            "walk can leave the window into an occupied exterior; "
            "exact rates there are only available for nearest-neighbour kernels")

    ext_states = []
    if nn_exterior and leaks.any():
        ret_left, ret_right = _exterior_return(kernel)
        ext_states = [("L", ret_left, 0), ("R", ret_right, n - 1)]

    k = len(C)
    m = k + len(ext_states)
    idx = {int(c): a for a, c in enumerate(C)}
    dense = n <= 4096

    def row(i):
        return kernel.dense[i] if dense else kernel.P.getrow(i).toarray().ravel()

    # transitions among transient states, into sites, and into escape
    T = np.zeros((m, m))
    to_site = np.zeros((m, n))
    esc = np.zeros(m)
    for a, c in enumerate(C):
        r = row(c)
        T[a, :k] = r[C]
        to_site[a] = np.where(passable, 0.0, r)
        if ext_states:
            T[a, k] = kernel.exit_left[c]
            T[a, k + 1] = kernel.exit_right[c]
        else:
            esc[a] = kernel.exit[c]
    for e, (_, ret, edge) in enumerate(ext_states):
        if passable[edge]:
            T[k + e, idx[edge]] = ret
        else:
            to_site[k + e, edge] = ret
        esc[k + e] = 1.0 - ret

    r0 = row(start)
    u = np.zeros(m)
    u[:k] = r0[C]
    first_site = np.where(passable, 0.0, r0)
    first_esc = 0.0
    if ext_states:
        u[k] = kernel.exit_left[start]
        u[k + 1] = kernel.exit_right[start]
    else:
        first_esc = kernel.exit[start]

    if m == 0:
        return Absorption(first_site, first_esc, 0.0)

    # states that can reach an outlet; the others are trapped
    outlet = (to_site.sum(axis=1) + esc) > 0
    live = outlet.copy()
    adj_rev = [np.flatnonzero(T[:, b] > 0) for b in range(m)]
    stack = list(np.flatnonzero(outlet))
    while stack:
        b = stack.pop()
        for a in adj_rev[b]:
            if not live[a]:
                live[a] = True
                stack.append(a)
    L = np.flatnonzero(live)
    D = np.flatnonzero(~live)

    probs = first_site.copy()
    escape = first_esc
    trapped = float(u[D].sum())
    if L.size:
        A = np.eye(L.size) - T[np.ix_(L, L)]
        if L.size <= DENSE_SOLVE_LIMIT:
            v = np.linalg.solve(A.T, u[L])
        else:
            v = spsolve(sparse.csc_matrix(A.T), u[L])
        res = np.abs(v @ A - u[L]).max()
        if not np.isfinite(res) or res > 1e-10:
            raise NumericalFailure(f"absorbing solve residual {res:.3e}")
        probs += v @ to_site[L]
        escape += float(v @ esc[L])
        if D.size:
            trapped += float(v @ T[np.ix_(L, D)].sum(axis=1))
    np.clip(probs, 0.0, None, out=probs)
    return Absorption(probs, max(escape, 0.0), max(trapped, 0.0))


def hitting_probability(kernel: Kernel, start: int, targets: Iterable[int],
                        forbidden: Iterable[int] = ()) -> dict[int, float]:
    """Probability that the walk from ``start`` hits each target first.

    Targets and forbidden sites are absorbing; every other site is transient.
    Probabilities may sum to less than one (escape or forbidden mass).
    """
    targets = [int(t) for t in targets]
    forbidden = [int(f) for f in forbidden]
    if set(targets) & set(forbidden):
        raise ValueError("targets and forbidden sets must be disjoint")
    passable = np.ones(kernel.n, bool)
    passable[targets] = False
    passable[forbidden] = False
    ab = absorb(kernel, start, passable)
    return {t: float(ab.probs[t]) for t in targets}


def escape_probability(kernel: Kernel) -> float:
    """Probability that a nearest-neighbour walk on Z never returns to its start.

    Closed form ``|p - q|`` (gambler's ruin).
    """
    if not kernel.is_nearest_neighbor:
        raise NotComputableError("closed-form escape probability needs a nearest-neighbour kernel; "
                                 "use hitting_probability on a wide window instead")
    p = kernel.p_right
    q = 1.0 - p
    return max(p - q, q - p, 0.0)


# ---------------------------------------------------------------------------
# Sampled walks


TERMINATIONS = ("hit-target", "returned-to-start", "hit-vacant", "escaped", "step-cap")


@dataclass
class WalkPath:
    start: int
    sites: list[int]
    termination: str

    @property
    def steps(self) -> int:
        return len(self.sites) - 1

    @property
    def end(self) -> int:
        return self.sites[-1]


def until_vacant(eta, start: int) -> Callable[[int], str | None]:
    """Stop rule of a long jump: back at ``start`` cancels, a vacant site stops."""
    eta = np.asarray(eta)

    def rule(site):
        if site == start:
            return "returned-to-start"
        if not eta[site]:
            return "hit-vacant"
        return None
    return rule


def sample_walk(kernel: Kernel, start: int, stop: Callable[[int], object], rng: np.random.Generator,
                step_cap: int = 10**6) -> WalkPath:
    """Run the chain from ``start`` until ``stop(site)`` fires at some ``n >= 1``.

    ``stop`` returns ``None``/``False`` to continue, ``True`` for
    ``"hit-target"`` or a termination label.  Leaving an open-escape window
    ends the walk as ``"escaped"``; an occupied exterior is walked through.
    """
    if step_cap < 1:
        raise ValueError("step_cap must be >= 1")
    open_exit = kernel.space.kind == "segment" and kernel.space.boundary == "open-escape"
    pos = np.array([start])
    sites = [start]
    block = rng.random(64)
    b = 0
    for _ in range(step_cap):
        if b == len(block):
            block, b = rng.random(64), 0
        pos = kernel.advance(pos, block[b:b + 1])
        b += 1
        site = int(pos[0])
        sites.append(site)
        if not 0 <= site < kernel.n:
            if open_exit:
                return WalkPath(start, sites, "escaped")
            continue
        verdict = stop(site)
        if verdict:
            return WalkPath(start, sites, "hit-target" if verdict is True else str(verdict))
    return WalkPath(start, sites, "step-cap")


@dataclass
class WalkTally:
    """Outcome counts of many sampled first-exit walks."""

    n: int
    stops: np.ndarray          # counts per stopping site
    escaped: int
    step_cap: int

    def frequencies(self) -> np.ndarray:
        return self.stops / self.n


def sample_exits(kernel: Kernel, start: int, passable: np.ndarray, n: int,
                 rng: np.random.Generator, step_cap: int = 10**6) -> WalkTally:
    """Vectorised Monte Carlo counterpart of :func:`absorb`."""
    passable = np.asarray(passable, bool)
    space = kernel.space
    open_exit = space.kind == "segment" and space.boundary == "open-escape"
    pos = np.full(n, start, dtype=np.int64)
    alive = np.arange(n)
    stops = np.zeros(kernel.n, dtype=np.int64)
    escaped = 0
    for _ in range(step_cap):
        if alive.size == 0:
            break
        p = kernel.advance(pos[alive], rng.random(alive.size))
        pos[alive] = p
        inside = kernel.in_window(p)
        if open_exit:
            escaped += int((~inside).sum())
        stop_here = inside.copy()
        stop_here[inside] = ~passable[p[inside]]
        np.add.at(stops, p[stop_here], 1)
        keep = ~stop_here & (inside | (not open_exit))
        alive = alive[keep]
    return WalkTally(n, stops, escaped, int(alive.size))


# ---------------------------------------------------------------------------
# Range statistics


@dataclass
class RangeStats:
    """Per-k estimates of E(tau_k) and the law of R_k."""

    K: int
    replicas: int
    mean_tau: np.ndarray        # index k -> estimate of E(tau_k), k = 1..K (index 0 unused)
    se_tau: np.ndarray
    censored: np.ndarray        # replicas whose range never reached k within the cap
    range_counts: np.ndarray    # [k, r] = #replicas with R_k = r, k = 0..n_steps

    def ratio_cubic(self) -> np.ndarray:
        k = np.arange(len(self.mean_tau), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.mean_tau / k**3

    def prob_range_below(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """Estimate and standard error of P(R_k < k**alpha) for each step count k."""
        counts = self.range_counts
        ks = np.arange(counts.shape[0])
        r = np.arange(counts.shape[1])
        below = (r[None, :] < (ks[:, None].astype(float) ** alpha)) & (r[None, :] >= 0)
        p = (counts * below).sum(axis=1) / self.replicas
        return p, np.sqrt(p * (1 - p) / self.replicas)


def range_statistics(kernel: Kernel, K: int, replicas: int, rng: np.random.Generator,
                     n_steps: int | None = None, step_cap: int = 10**4) -> RangeStats:
    """Monte Carlo for the range ``R_k`` and the times ``tau_k`` of a walk on Z.

    ``R_k`` is the number of distinct sites among ``X_0..X_k``; ``tau_1 = 0``
    and ``tau_k`` is the first time the range reaches ``k``.  Walks run until
    both the range hits ``K`` and ``n_steps`` steps are done, or ``step_cap``.
    """
    if K < 2 or replicas < 1:
        raise ValueError("need K >= 2 and replicas >= 1")
    if kernel.offsets is None or kernel.space.ndim != 1:
        raise NotComputableError("range statistics are implemented for one-dimensional offset kernels")
    n_steps = K if n_steps is None else int(n_steps)
    steps, cdf, _ = kernel._offset_table
    J = int(np.abs(steps).max())
    width = 2 * J * step_cap + 1
    chunk = max(1, min(replicas, int(2e7 // width)))

    tau_sum = np.zeros(K + 1)
    tau_sq = np.zeros(K + 1)
    tau_n = np.zeros(K + 1, dtype=np.int64)
    counts = np.zeros((n_steps + 1, n_steps + 2), dtype=np.int64)
    done = 0
    while done < replicas:
        m = min(chunk, replicas - done)
        done += m
        rows = np.arange(m)
        visited = np.zeros((m, width), dtype=bool)
        pos = np.full(m, J * step_cap, dtype=np.int64)
        visited[rows, pos] = True
        R = np.ones(m, dtype=np.int64)
        tau = np.full((m, K + 1), -1, dtype=np.int64)
        tau[:, 1] = 0
        counts[0, 1] += m
        t = 0
        while t < step_cap:
            t += 1
            k = np.minimum(np.searchsorted(cdf, rng.random(m), side="right"), len(cdf) - 1)
            pos += steps[k]
            new = ~visited[rows, pos]
            visited[rows, pos] = True
            R += new
            hit = new & (R <= K)
            tau[rows[hit], R[hit]] = t
            if t <= n_steps:
                np.add.at(counts[t], np.minimum(R, n_steps + 1), 1)
            if t >= n_steps and (R >= K).all():
                break
        for kk in range(1, K + 1):
            ok = tau[:, kk] >= 0
            tau_n[kk] += ok.sum()
            tau_sum[kk] += tau[ok, kk].sum()
            tau_sq[kk] += (tau[ok, kk].astype(float) ** 2).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = tau_sum / tau_n
        var = tau_sq / tau_n - mean**2
        se = np.sqrt(np.maximum(var, 0) / np.maximum(tau_n - 1, 1))
    mean[0] = se[0] = np.nan
    censored = replicas - tau_n
    censored[0] = 0
    return RangeStats(K, replicas, mean, se, censored, counts)

"""Generator matrices on enumerable instances, and what can be read off them.

States are integers whose binary expansion is the configuration with site 0 as
the most significant bit, so numeric order is lexicographic order on
bitstrings.  Coupled states concatenate the eta and xi bitstrings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve
from scipy.stats import poisson

from .coupled import Pair, transitions
from .lattice import Kernel, NumericalFailure
from .rates import RateTable, generator_apply, to_bitstring

SINGLE_LIMIT = 14         # sites; 2^14 states
COUPLED_LIMIT = 7         # sites; 4^7 pair states
DENSE_STATIONARY = 4096
ROW_SUM_TOL = 1e-12


def decode(code: int, n: int) -> np.ndarray:
    return np.array([(code >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)


def encode(eta) -> int:
    out = 0
    for v in eta:
        out = (out << 1) | int(v)
    return out


def _shell_states(n: int, shell) -> list[int]:
    if shell is None:
        return list(range(1 << n))
    counts = {shell} if isinstance(shell, (int, np.integer)) else set(shell)
    states = []
    for k in sorted(counts):
        for occ in combinations(range(n), k):
            states.append(sum(1 << (n - 1 - i) for i in occ))
    return sorted(states)


@dataclass
class Generator:
    """Sparse intensity matrix over an enumerated state list."""

    kernel: Kernel
    mode: str                 # "single" or "coupled"
    states: np.ndarray        # integer codes, increasing
    Q: sparse.csr_matrix
    index: dict[int, int] = field(repr=False, default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.kernel.n

    @property
    def size(self) -> int:
        return len(self.states)

    def config(self, i: int):
        """Configuration (or pair of configurations) of state ``i``."""
        n = self.n_sites
        c = int(self.states[i])
        if self.mode == "single":
            return decode(c, n)
        return decode(c >> n, n), decode(c & ((1 << n) - 1), n)

    def label(self, i: int) -> str:
        c = self.config(i)
        if self.mode == "single":
            return to_bitstring(c)
        return to_bitstring(c[0]) + "|" + to_bitstring(c[1])

    def lookup(self, eta, xi=None) -> int:
        c = encode(eta) if xi is None else (encode(eta) << self.n_sites) | encode(xi)
        return self.index[c]

    def write_coo(self, path) -> None:
        """Coordinate text format: one ``row col rate`` line per stored entry."""
        coo = self.Q.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for k in order:
                fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]!r}\n")


def build_generator(kernel: Kernel, mode: str = "single", shell=None) -> Generator:
    """Intensity matrix of the single or the coupled process.

    ``shell`` restricts the state list to the given particle count(s) (per copy
    as a pair ``(k_eta, k_xi)`` in coupled mode).  A transition leaving the
    shell raises ``ValueError``: restriction is only valid when particles are
    conserved.
    """
    n = kernel.n
    if mode == "single":
        if n > SINGLE_LIMIT:
            raise ValueError(f"single mode enumerates 2^{n} states; limit is 2^{SINGLE_LIMIT}")
        states = _shell_states(n, shell)
    elif mode == "coupled":
        if n > COUPLED_LIMIT:
            raise ValueError(f"coupled mode enumerates 4^{n} states; limit is 4^{COUPLED_LIMIT}")
        if shell is None:
            states = list(range(1 << (2 * n)))
        else:
            ke, kx = shell
            states = sorted((a << n) | b for a in _shell_states(n, ke) for b in _shell_states(n, kx))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []

    def add(i, target_code, rate):
        j = index.get(target_code)
        if j is None:
            raise ValueError("the dynamics leave the requested shell; particle number is not conserved")
        if j != i:
            rows.append(i)
            cols.append(j)
            vals.append(rate)

    for i, s in enumerate(states):
        if mode == "single":
            eta = decode(s, n)
            if not eta.any():
                continue
            table = RateTable.build(kernel, eta)
            for x in np.flatnonzero(eta):
                for y in np.flatnonzero(table.q[x]):
                    e = eta.copy()
                    e[x], e[y] = 0, 1
                    add(i, encode(e), table.q[x, y])
                if table.delta[x] > 0:
                    e = eta.copy()
                    e[x] = 0
                    add(i, encode(e), table.delta[x])
        else:
            eta, xi = decode(s >> n, n), decode(s & ((1 << n) - 1), n)
            if not (eta.any() or xi.any()):
                continue
            for t in transitions(kernel, Pair(kernel.space, eta, xi)):
                add(i, (encode(t.eta) << n) | encode(t.xi), t.rate)
    m = len(states)
    Q = sparse.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    Q.sum_duplicates()
    Q = (Q - sparse.diags(np.asarray(Q.sum(axis=1)).ravel())).tocsr()
    if np.abs(np.asarray(Q.sum(axis=1)).ravel()).max(initial=0.0) > ROW_SUM_TOL * max(1.0, abs(Q).max()):
        raise NumericalFailure("generator rows do not sum to zero")
    return Generator(kernel, mode, np.array(states, dtype=np.int64), Q, index)


# -- measures -------------------------------------------------------------------

@dataclass
class Measure:
    gen: Generator
    p: np.ndarray
    note: str = ""

    def __post_init__(self):
        if (self.p < -1e-15).any() or abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError("a measure must be nonnegative with total mass 1")

    @classmethod
    def point_mass(cls, gen: Generator, eta, xi=None) -> Measure:
        p = np.zeros(gen.size)
        p[gen.lookup(eta, xi)] = 1.0
        return cls(gen, p, "point mass")

    @classmethod
    def bernoulli(cls, gen: Generator, rho: float) -> Measure:
        """Product measure of density rho, conditioned on the enumerated states."""
        if gen.mode != "single":
            raise ValueError("bernoulli measures are defined for single-mode generators")
        k = np.array([bin(int(s)).count("1") for s in gen.states])
        w = rho ** k * (1 - rho) ** (gen.n_sites - k)
        return cls(gen, w / w.sum(), f"bernoulli({rho})")

    @classmethod
    def uniform_on_shell(cls, gen: Generator, k: int) -> Measure:
        if gen.mode != "single":
            raise ValueError("shell measures are defined for single-mode generators")
        on = np.array([bin(int(s)).count("1") == k for s in gen.states], float)
        if not on.any():
            raise ValueError(f"no state with {k} particles in this generator")
        return cls(gen, on / on.sum(), f"uniform on {k}-particle shell")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "probability"])
            for i in range(self.gen.size):
                w.writerow([self.gen.label(i), repr(float(self.p[i]))])


def closed_classes(gen: Generator) -> list[np.ndarray]:
    """Recurrent communicating classes, each as sorted state indices."""
    adj = gen.Q.copy()
    adj.setdiag(0)
    adj.eliminate_zeros()
    ncomp, lab = csgraph.connected_components(adj, directed=True, connection="strong")
    coo = adj.tocoo()
    leaks = np.zeros(ncomp, bool)
    leaks[lab[coo.row][lab[coo.row] != lab[coo.col]]] = True
    return [np.flatnonzero(lab == c) for c in range(ncomp) if not leaks[c]]


def _stationary_block(Qc) -> np.ndarray:
    m = Qc.shape[0]
    if m == 1:
        return np.ones(1)
    if m <= DENSE_STATIONARY:
        A = Qc.toarray().T
        A[-1, :] = 1.0
        b = np.zeros(m)
        b[-1] = 1.0
        v = np.linalg.solve(A, b)
    else:
        lam = float(-Qc.diagonal().min()) * 1.05
        P = (sparse.identity(m, format="csr") + Qc / lam).T.tocsr()
        v = np.full(m, 1.0 / m)
        for _ in range(10**6):
            w = P @ v
            w /= w.sum()
            if np.abs(w - v).max() < 1e-12:
                v = w
                break
            v = w
        else:
            raise NumericalFailure("power iteration did not converge")
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def stationary(gen: Generator, tol: float = 1e-10) -> list[Measure]:
    """One stationary measure per closed class, each checked to ``tol``."""
    out = []
    for cls_ in closed_classes(gen):
        Qc = gen.Q[cls_][:, cls_]
        v = _stationary_block(Qc)
        res = float(np.abs(Qc.T @ v).max())
        if res > tol:
            raise NumericalFailure(f"stationary residual {res:.3e} exceeds {tol:.0e} on a class of size {len(cls_)}")
        p = np.zeros(gen.size)
        p[cls_] = v
        out.append(Measure(gen, p, f"closed class of {len(cls_)} states"))
    return out


# -- transient law ------------------------------------------------------------------

def transition_probabilities(gen: Generator, t: float, rows=None, tol: float = 1e-10,
                             max_terms: int = 10**6) -> np.ndarray:
    """Rows of e^{tQ} by uniformization; the dropped Poisson tail is below ``tol``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    m = gen.size
    rows = np.arange(m) if rows is None else np.atleast_1d(rows)
    V = np.zeros((len(rows), m))
    V[np.arange(len(rows)), rows] = 1.0
    lam = float(-gen.Q.diagonal().min()) if m else 0.0
    if t == 0 or lam == 0:
        return V
    mu = lam * t
    K = int(poisson.isf(tol, mu)) + 1
    if K > max_terms:
        raise NumericalFailure(f"uniformization needs {K} terms (rate*t = {mu:.3g})")
    w = poisson.pmf(np.arange(K + 1), mu)
    PT = (sparse.identity(m, format="csr") + gen.Q / lam).T.tocsr()
    out = w[0] * V
    X = V.T.copy()
    for k in range(1, K + 1):
        X = PT @ X
        out += w[k] * X.T
    return out


# -- checks ------------------------------------------------------------------

@dataclass
class InvarianceReport:
    residual: float
    cylinder_max: float
    cylinders: dict[tuple[int, ...], float]


def invariance_report(gen: Generator, mu: Measure, max_size: int = 3) -> InvarianceReport:
    """Residual ||mu Q||_inf and the integrals of the generator on cylinders.

    The cylinder integrals use the rate formulas directly, not the matrix, so
    they are an independent check of both.
    """
    if gen.mode != "single":
        raise ValueError("cylinder integrals are defined for single-mode generators")
    residual = float(np.abs(gen.Q.T @ mu.p).max())
    n = gen.n_sites
    sets = [R for k in range(1, max_size + 1) for R in combinations(range(n), k)]
    acc = dict.fromkeys(sets, 0.0)
    for i in np.flatnonzero(mu.p):
        eta = gen.config(i)
        table = RateTable.build(gen.kernel, eta)
        for R in sets:
            acc[R] += mu.p[i] * generator_apply(gen.kernel, R, eta, table).value
    worst = max((abs(v) for v in acc.values()), default=0.0)
    return InvarianceReport(residual, worst, acc)


def _adjacent_pairs(kernel: Kernel) -> np.ndarray:
    A = kernel.P.toarray() > 0
    return A | A.T


def _g_linear(d: np.ndarray) -> int:
    nz = d[d != 0]
    return int(((nz[:-1] == 1) & (nz[1:] == -1)).sum())


@dataclass
class OrderedReport:
    closed: bool                      # no transition leaves the ordered set
    classes: list[dict]               # per closed class: sizes and masses
    hit_ordered: np.ndarray           # probability of ever reaching the ordered set, per state
    ordered: np.ndarray               # mask of ordered pair states


def ordered_absorption_report(gen: Generator) -> OrderedReport:
    if gen.mode != "coupled":
        raise ValueError("needs a coupled generator")
    n = gen.n_sites
    adj = _adjacent_pairs(gen.kernel)
    m = gen.size
    ordered = np.zeros(m, bool)
    adjacent_bad = np.zeros(m, bool)
    g2 = np.zeros(m, bool)
    for i in range(m):
        eta, xi = gen.config(i)
        d = eta.astype(int) - xi.astype(int)
        ordered[i] = not ((d > 0).any() and (d < 0).any())
        pos, neg = d > 0, d < 0
        adjacent_bad[i] = bool(adj[np.ix_(pos, neg)].any())
        g2[i] = _g_linear(d) >= 2
    coo = gen.Q.tocoo()
    off = coo.row != coo.col
    closed = not bool((ordered[coo.row[off]] & ~ordered[coo.col[off]] & (coo.data[off] > 0)).any())
    classes = []
    for mu in stationary(gen):
        classes.append({
            "states": int((mu.p > 0).sum()),
            "unordered_mass": float(mu.p[~ordered].sum()),
            "adjacent_discrepancy_mass": float(mu.p[adjacent_bad].sum()),
            "g_at_least_2_mass": float(mu.p[g2].sum()),
        })
    # probability of reaching the ordered set
    h = ordered.astype(float)
    un = np.flatnonzero(~ordered)
    if un.size:
        adjT = gen.Q.copy()
        adjT.setdiag(0)
        adjT.eliminate_zeros()
        # states that can reach the ordered set, by reverse search from it
        rev = adjT.T.tocsr()
        can = ordered.copy()
        frontier = list(np.flatnonzero(ordered))
        while frontier:
            j = frontier.pop()
            for i in rev.indices[rev.indptr[j]:rev.indptr[j + 1]]:
                if not can[i]:
                    can[i] = True
                    frontier.append(i)
        live = np.flatnonzero(~ordered & can)
        if live.size:
            Qll = gen.Q[live][:, live].tocsc()
            b = -np.asarray(gen.Q[live][:, np.flatnonzero(ordered)].sum(axis=1)).ravel()
            h[live] = spsolve(Qll, b) if live.size > 1 else b / Qll.toarray()[0, 0]
    return OrderedReport(closed, classes, h, ordered)

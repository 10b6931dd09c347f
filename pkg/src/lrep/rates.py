"""Exact jump rates and generator terms of the single long-range exclusion process.

Configurations are 0/1 numpy arrays indexed by site.  Every rate is an exact
absorbing solve (:func:`lrep.lattice.absorb`); nothing here samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np

from .lattice import Absorption, Kernel, NotComputableError, absorb


# -- configuration operators -------------------------------------------------

def swap(eta: np.ndarray, x: int, y: int) -> np.ndarray:
    """Copy of ``eta`` with the states of ``x`` and ``y`` interchanged."""
    out = np.array(eta, copy=True)
    out[x], out[y] = eta[y], eta[x]
    return out


def kill(eta: np.ndarray, x: int) -> np.ndarray:
    """Copy of ``eta`` with site ``x`` emptied."""
    out = np.array(eta, copy=True)
    out[x] = 0
    return out


def as_config(eta, n: int | None = None) -> np.ndarray:
    if isinstance(eta, str):
        eta = [int(c) for c in eta]
    a = np.asarray(eta, dtype=np.uint8)
    if a.ndim != 1 or (n is not None and a.size != n):
        raise ValueError(f"configuration must be a length-{n} 0/1 vector")
    if (a > 1).any():
        raise ValueError("at most one particle per site")
    return a


def to_bitstring(eta) -> str:
    return "".join("1" if v else "0" for v in eta)


# -- elementary rates ---------------------------------------------------------

def _walk(kernel: Kernel, x: int, passable: np.ndarray) -> Absorption:
    return absorb(kernel, x, passable)


def jump_law(kernel: Kernel, x: int, eta) -> Absorption:
    """Outcome law of a ring at ``x``: ``probs[y]`` = q(x, y, eta) for vacant y,
    ``probs[x]`` = cancellation, ``lost`` = disappearance rate delta(x, eta)."""
    passable = np.asarray(eta, bool).copy()
    passable[x] = False
    return _walk(kernel, x, passable)


def first_vacancy_law(kernel: Kernel, x: int, eta) -> Absorption:
    """Law of the first vacant site hit from ``x`` with no restriction on returns to x.

    ``probs[y]`` is the unrestricted rate q_bar(x, y, eta) on vacant y.
    """
    return _walk(kernel, x, np.asarray(eta, bool))


def q_rate(kernel: Kernel, x: int, y: int, eta) -> float:
    """Probability the chain from x reaches y before returning to x, through occupied sites."""
    if x == y:
        raise ValueError("q(x, y, eta) needs x != y")
    passable = np.asarray(eta, bool).copy()
    passable[[x, y]] = False
    return float(_walk(kernel, x, passable).probs[y])


def q_bar_rate(kernel: Kernel, x: int, y: int, eta) -> float:
    """As :func:`q_rate` but returns to x are allowed while x is occupied."""
    if x == y:
        raise ValueError("q_bar(x, y, eta) needs x != y")
    passable = np.asarray(eta, bool).copy()
    passable[y] = False
    return float(_walk(kernel, x, passable).probs[y])


def delta_rate(kernel: Kernel, x: int, eta) -> float:
    """Probability the chain from x stays on occupied sites forever without returning.

    On a finite space this is the mass trapped in closed occupied classes; on an
    open-escape window it includes walks leaving the window; on an occupied
    exterior it is exact for nearest-neighbour kernels and raises otherwise.
    """
    return jump_law(kernel, x, eta).lost


def cancel_rate(kernel: Kernel, x: int, eta) -> float:
    return float(jump_law(kernel, x, eta).probs[x])


# -- rate tables and generator -------------------------------------------------

@dataclass
class RateTable:
    """All single-process rates of one configuration.

    ``q[x, y]`` = q(x, y, eta) for vacant ``y`` (zero on occupied ``y`` and on
    the diagonal), ``cancel[x]`` and ``delta[x]`` for each occupied ``x``.
    Rows of vacant sources are zero.
    """

    eta: np.ndarray
    q: np.ndarray
    cancel: np.ndarray
    delta: np.ndarray

    @classmethod
    def build(cls, kernel: Kernel, eta) -> RateTable:
        eta = as_config(eta, kernel.n)
        n = kernel.n
        q = np.zeros((n, n))
        cancel = np.zeros(n)
        delta = np.zeros(n)
        for x in np.flatnonzero(eta):
            law = jump_law(kernel, int(x), eta)
            cancel[x] = law.probs[x]
            row = law.probs.copy()
            row[x] = 0.0
            q[x] = row
            delta[x] = law.lost
        return cls(eta, q, cancel, delta)


@dataclass
class GeneratorValue:
    plus: float
    minus: float

    @property
    def value(self) -> float:
        return self.plus - self.minus


def generator_apply(kernel: Kernel, R: Iterable[int], eta, table: RateTable | None = None) -> GeneratorValue:
    """Gain and loss parts of the generator applied to the cylinder f_R at ``eta``."""
    eta = as_config(eta, kernel.n)
    table = table or RateTable.build(kernel, eta)
    R = sorted(set(int(r) for r in R))
    if not R:
        raise ValueError("cylinder set must be nonempty")
    inR = np.zeros(kernel.n, bool)
    inR[R] = True
    occ = eta.astype(bool)
    plus = 0.0
    # a particle from outside R fills the unique vacancy of R
    vacant_in_R = [y for y in R if not occ[y]]
    if len(vacant_in_R) == 1:
        y = vacant_in_R[0]
        plus = float(table.q[occ & ~inR, y].sum())
    minus = 0.0
    if occ[R].all():
        out = table.q[R].sum(axis=1) + table.delta[R]
        minus = float(out.sum())
    return GeneratorValue(plus, minus)


def arrival_rate(kernel: Kernel, x: int, eta) -> float:
    """Total rate at which particles reach x, whether or not they stop there."""
    eta = as_config(eta, kernel.n)
    total = 0.0
    for y in np.flatnonzero(eta):
        if y != x:
            total += q_rate(kernel, int(y), x, eta)
    return total


def gain_rate(kernel: Kernel, x: int, eta, table: RateTable | None = None) -> float:
    """Gain part of the generator on the single-site cylinder f_x."""
    return generator_apply(kernel, [x], eta, table).plus


# -- displacement sums -------------------------------------------------------

def require_true_lattice(kernel: Kernel, sources: Iterable[int], eta) -> None:
    """Check the window is wide enough to stand in for the whole line.

    Every step taken from an occupied site (or a source) must land inside the
    window, so the walk meets a vacancy before any boundary effect.
    """
    if kernel.space.kind != "segment":
        raise NotComputableError("displacement sums need a one-dimensional segment")
    occ = np.asarray(eta, bool).copy()
    occ[list(sources)] = True
    bad = np.flatnonzero(occ & (kernel.exit > 0))
    if bad.size:
        raise NotComputableError(
            f"site {int(bad[0])} can jump off the window; widen it so the configuration has finite support inside")


def displacement_sum(kernel: Kernel, x: int, eta, variant: str = "q_bar") -> tuple[float, float]:
    """Signed and absolute first moments of the stopping displacement.

    Returns ``(sum_y (y-x)[1-eta(y)] r(x,y,eta), sum_y |y-x|[1-eta(y)] r(x,y,eta))``
    with ``r`` the restricted (``"q"``) or unrestricted (``"q_bar"``) rate.
    """
    eta = as_config(eta, kernel.n)
    require_true_lattice(kernel, [x], eta)
    if variant == "q":
        law = jump_law(kernel, x, eta)
        w = law.probs.copy()
        w[x] = 0.0
    elif variant == "q_bar":
        w = first_vacancy_law(kernel, x, eta).probs
    else:
        raise ValueError(f"unknown variant {variant!r}")
    d = kernel.space.signed_coords()[:, 0] - kernel.space.coord(x)[0]
    w = w * (1 - eta)
    return float(d @ w), float(np.abs(d) @ w)


# -- reports -------------------------------------------------------------------

@dataclass
class RateReport:
    source: int
    targets: list[dict]
    cancel: float
    delta: float

    def to_json(self) -> str:
        return json.dumps({"source": self.source, "targets": self.targets,
                           "cancel": self.cancel, "delta": self.delta}, sort_keys=True)


def rate_report(kernel: Kernel, x: int, eta) -> RateReport:
    eta = as_config(eta, kernel.n)
    law = jump_law(kernel, x, eta)
    bar = first_vacancy_law(kernel, x, eta)
    targets = []
    for y in range(kernel.n):
        if y == x or eta[y]:
            continue
        if law.probs[y] > 0 or bar.probs[y] > 0:
            targets.append({"site": y, "q": float(law.probs[y]), "q_bar": float(bar.probs[y])})
    return RateReport(x, targets, float(law.probs[x]), float(law.lost))


def cylinder_sets(n: int, max_size: int) -> Iterable[tuple[int, ...]]:
    for size in range(1, max_size + 1):
        yield from combinations(range(n), size)

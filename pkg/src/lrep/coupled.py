"""Exact rates of the basic coupling of two long-range exclusion processes.

Both copies use the same clock ring and the same auxiliary chain.  When both
have a particle at the ringing site, the chain is followed jointly until the
first site vacant for either copy; the copy that is not yet stopped continues
from there.  The strong Markov property at that intermediate stop factorises
every two-copy rate into a product of two single-walk solves:

* ``q(x, y, eta*xi)``: first exit from ``x`` through sites occupied in both;
* then ``q_bar(y, z, xi_x)`` (or the symmetric version) for the copy that
  continues from ``y``, with ``x`` counted as vacant.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .lattice import Kernel, SiteSpace, absorb
from .rates import as_config, jump_law, q_rate, delta_rate

FAMILIES = (
    "together",                # both stop at the same vacant site
    "eta_stops_xi_continues",  # eta stops at y, xi goes on to z
    "xi_stops_eta_continues",
    "eta_moves_xi_returns",    # eta stops at y, xi comes back to x
    "xi_moves_eta_returns",
    "eta_alone",               # only eta has a particle at x
    "xi_alone",
    "eta_moves_xi_vanishes",   # eta stops at y, xi never stops
    "xi_moves_eta_vanishes",
    "eta_alone_vanishes",
    "xi_alone_vanishes",
    "both_vanish",
)

_fault = {"together": 0.0}


@contextlib.contextmanager
def fault_injection(eps: float = 1e-3):
    """Scale every joint move rate by ``1 + eps`` while the context is active."""
    _fault["together"] = eps
    try:
        yield
    finally:
        _fault["together"] = 0.0


@dataclass(frozen=True)
class Pair:
    """Two configurations on one site space."""

    space: SiteSpace
    eta: np.ndarray
    xi: np.ndarray

    @classmethod
    def of(cls, space: SiteSpace, eta, xi) -> Pair:
        return cls(space, as_config(eta, space.size), as_config(xi, space.size))

    @property
    def d(self) -> np.ndarray:
        return self.eta.astype(int) - self.xi.astype(int)

    @property
    def product(self) -> np.ndarray:
        return self.eta & self.xi

    def ordered(self) -> bool:
        d = self.d
        return not ((d > 0).any() and (d < 0).any())

    def key(self) -> tuple[bytes, bytes]:
        return self.eta.tobytes(), self.xi.tobytes()


@dataclass
class Transition:
    family: str
    rate: float
    eta: np.ndarray
    xi: np.ndarray
    y: int | None = None
    z: int | None = None


@dataclass
class CoupledRates:
    """Every transition triggered by a ring at ``source``, grouped by family.

    ``rates[family]`` maps the target sites (``y`` or ``(y, z)``; ``None`` for
    disappearances) to rates.  ``cancel`` is the rate of a ring that changes
    neither copy.
    """

    source: int
    rates: dict[str, dict] = field(default_factory=lambda: {f: {} for f in FAMILIES})
    cancel: float = 0.0

    def get(self, family: str, key=None) -> float:
        return self.rates[family].get(key, 0.0)

    def total(self, family: str) -> float:
        return float(sum(self.rates[family].values()))

    def to_json(self) -> str:
        fams = {}
        for f, entries in self.rates.items():
            fams[f] = [{"target": list(k) if isinstance(k, tuple) else k, "rate": v}
                       for k, v in sorted(entries.items(), key=lambda kv: str(kv[0]))]
        return json.dumps({"source": self.source, "cancel": self.cancel, "families": fams}, sort_keys=True)


def _continue(kernel: Kernel, y: int, x: int, occ: np.ndarray):
    """Continuation law from ``y`` for a copy with occupancy ``occ`` and ``x`` vacated."""
    passable = occ.astype(bool).copy()
    passable[x] = False
    return absorb(kernel, y, passable)


def coupled_rates(kernel: Kernel, x: int, pair: Pair) -> CoupledRates:
    """Rates of all coupled transitions caused by a ring at ``x``."""
    eta, xi = pair.eta, pair.xi
    out = CoupledRates(x)
    r = out.rates
    if eta[x] and xi[x]:
        law = jump_law(kernel, x, pair.product)      # q(x, ., eta*xi), x vacated
        out.cancel = float(law.probs[x])
        if law.lost > 0:
            r["both_vanish"][None] = law.lost
        for y in np.flatnonzero(law.probs):
            y = int(y)
            if y == x:
                continue
            a = float(law.probs[y])
            if not eta[y] and not xi[y]:
                r["together"][y] = a * (1.0 + _fault["together"])
            elif not eta[y]:                          # xi continues from y
                cont = _continue(kernel, y, x, xi)
                for z in np.flatnonzero(cont.probs):
                    z = int(z)
                    if z == x:
                        r["eta_moves_xi_returns"][y] = a * cont.probs[x]
                    else:
                        r["eta_stops_xi_continues"][(y, z)] = a * cont.probs[z]
                if cont.lost > 0:
                    r["eta_moves_xi_vanishes"][y] = a * cont.lost
            else:                                     # eta continues from y
                cont = _continue(kernel, y, x, eta)
                for z in np.flatnonzero(cont.probs):
                    z = int(z)
                    if z == x:
                        r["xi_moves_eta_returns"][y] = a * cont.probs[x]
                    else:
                        r["xi_stops_eta_continues"][(y, z)] = a * cont.probs[z]
                if cont.lost > 0:
                    r["xi_moves_eta_vanishes"][y] = a * cont.lost
    elif eta[x] or xi[x]:
        occ, fam, van = (eta, "eta_alone", "eta_alone_vanishes") if eta[x] else (xi, "xi_alone", "xi_alone_vanishes")
        law = jump_law(kernel, x, occ)
        out.cancel = float(law.probs[x])
        for y in np.flatnonzero(law.probs):
            if y != x:
                r[fam][int(y)] = float(law.probs[y])
        if law.lost > 0:
            r[van][None] = law.lost
    return out


def _moved(c: np.ndarray, x: int, y: int | None) -> np.ndarray:
    out = c.copy()
    out[x] = 0
    if y is not None:
        out[y] = 1
    return out


def transitions(kernel: Kernel, pair: Pair, rates: CoupledRates | None = None,
                sources: Iterable[int] | None = None) -> list[Transition]:
    """Explicit list of coupled moves with their target configurations."""
    eta, xi = pair.eta, pair.xi
    out = []
    if sources is None:
        sources = np.flatnonzero(eta | xi)
    for x in sources:
        x = int(x)
        cr = rates if rates is not None and rates.source == x else coupled_rates(kernel, x, pair)
        for fam, entries in cr.rates.items():
            for key, rate in entries.items():
                if rate <= 0:
                    continue
                y = z = None
                if fam == "together":
                    y = key
                    e, s = _moved(eta, x, y), _moved(xi, x, y)
                elif fam == "eta_stops_xi_continues":
                    y, z = key
                    e, s = _moved(eta, x, y), _moved(xi, x, z)
                elif fam == "xi_stops_eta_continues":
                    y, z = key
                    e, s = _moved(eta, x, z), _moved(xi, x, y)
                elif fam == "eta_moves_xi_returns":
                    y = key
                    e, s = _moved(eta, x, y), xi.copy()
                elif fam == "xi_moves_eta_returns":
                    y = key
                    e, s = eta.copy(), _moved(xi, x, y)
                elif fam == "eta_alone":
                    y = key
                    e, s = _moved(eta, x, y), xi.copy()
                elif fam == "xi_alone":
                    y = key
                    e, s = eta.copy(), _moved(xi, x, y)
                elif fam == "eta_moves_xi_vanishes":
                    y = key
                    e, s = _moved(eta, x, y), _moved(xi, x, None)
                elif fam == "xi_moves_eta_vanishes":
                    y = key
                    e, s = _moved(eta, x, None), _moved(xi, x, y)
                elif fam == "eta_alone_vanishes":
                    e, s = _moved(eta, x, None), xi.copy()
                elif fam == "xi_alone_vanishes":
                    e, s = eta.copy(), _moved(xi, x, None)
                else:  # both_vanish
                    e, s = _moved(eta, x, None), _moved(xi, x, None)
                out.append(Transition(fam, float(rate), e, s, y, z))
    return out


# -- consistency ---------------------------------------------------------------

def marginal_consistency_check(kernel: Kernel, x: int, y: int, pair: Pair) -> tuple[float, float]:
    """Residuals of the two marginal identities at a doubly occupied source.

    The first compares q(x, y, eta) with every coupled family in which the eta
    particle ends at ``y``; the second compares delta(x, eta) with every family
    in which the eta particle disappears.
    """
    eta, xi = pair.eta, pair.xi
    if not (eta[x] and xi[x]) or eta[y] or x == y:
        raise ValueError("need eta(x) = xi(x) = 1 and eta(y) = 0, y != x")
    cr = coupled_rates(kernel, x, pair)
    moved = (cr.get("together", y) * (xi[y] == 0)
             + sum(v for (a, _), v in cr.rates["eta_stops_xi_continues"].items() if a == y)
             + sum(v for (_, b), v in cr.rates["xi_stops_eta_continues"].items() if b == y)
             + cr.get("eta_moves_xi_returns", y)
             + cr.get("eta_moves_xi_vanishes", y))
    vanished = cr.get("both_vanish") + cr.total("xi_moves_eta_vanishes")
    return q_rate(kernel, x, y, eta) - moved, delta_rate(kernel, x, eta) - vanished


# -- discrepancy functionals -----------------------------------------------------

@dataclass
class Functionals:
    """Arrays over targets ``y`` of the discrepancy rates at source ``x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


def discrepancy_functionals_all(kernel: Kernel, x: int, pair: Pair) -> Functionals:
    """A, B, C, D at source ``x`` for every target site at once.

    A: a positive discrepancy at x reaches a site vacant in both copies;
    B: same, the target only has to be eta-vacant;
    C: the eta-only analogue, no condition on xi;
    D: the positive discrepancy at x lands on a negative one.
    Each has a direct part (the ring is at x) and a part where a doubly
    occupied site z rings, xi stops at x and eta carries on from x.
    """
    eta, xi = pair.eta, pair.xi
    n = kernel.n
    A, B, C, D = (np.zeros(n) for _ in range(4))
    if not eta[x]:
        return Functionals(A, B, C, D)
    vac_eta = eta == 0
    vac_both = vac_eta & (xi == 0)
    direct = jump_law(kernel, x, eta).probs.copy()
    direct[x] = 0.0
    C += np.where(vac_eta, direct, 0.0)
    positive = bool(eta[x] and not xi[x])
    if positive:
        B += np.where(vac_eta, direct, 0.0)
        A += np.where(vac_both, direct, 0.0)
        D += np.where(vac_eta & (xi == 1), direct, 0.0)
    prod = pair.product
    for z in np.flatnonzero(eta):
        z = int(z)
        if z == x:
            continue
        eta_z = eta.copy()
        eta_z[z] = 0
        # q_bar(x, ., eta_z): first eta_z-vacancy seen from x
        onward = absorb(kernel, x, eta_z.astype(bool)).probs
        onward[x] = 0.0
        pz = eta.astype(bool).copy()
        pz[[z, x]] = False
        qzx = absorb(kernel, z, pz).probs[x]
        C += qzx * np.where(eta_z == 0, onward, 0.0)
        if positive and xi[z]:
            pz = prod.astype(bool).copy()
            pz[z] = False
            qzx_joint = absorb(kernel, z, pz).probs[x]
            B += qzx_joint * np.where(eta_z == 0, onward, 0.0)
            xi_z = xi.copy()
            xi_z[z] = 0
            A += qzx_joint * np.where((eta_z == 0) & (xi_z == 0), onward, 0.0)
    A[x] = B[x] = C[x] = D[x] = 0.0
    return Functionals(A, B, C, D)


def discrepancy_functionals(kernel: Kernel, x: int, y: int, pair: Pair) -> tuple[float, float, float, float]:
    f = discrepancy_functionals_all(kernel, x, pair)
    return float(f.A[y]), float(f.B[y]), float(f.C[y]), float(f.D[y])


# -- pair functions and the coupled generator -------------------------------------

@dataclass(frozen=True)
class PairCylinder:
    """Linear combination of products prod_{a in R1} eta(a) prod_{b in R2} xi(b)."""

    terms: tuple[tuple[float, tuple[int, ...], tuple[int, ...]], ...]

    def __call__(self, eta, xi) -> float:
        return float(sum(c * np.prod(eta[list(r1)]) * np.prod(xi[list(r2)]) for c, r1, r2 in self.terms))


@dataclass
class CoupledGeneratorValue:
    plus: float
    minus: float
    by_family: dict[str, float]

    @property
    def value(self) -> float:
        return self.plus - self.minus


def coupled_generator_apply(kernel: Kernel, f: Callable, pair: Pair,
                            moves: list[Transition] | None = None) -> CoupledGeneratorValue:
    """Coupled generator applied to a pair function ``f(eta, xi)``.

    Positive and negative parts are accumulated move by move.
    """
    moves = transitions(kernel, pair) if moves is None else moves
    base = f(pair.eta, pair.xi)
    plus = minus = 0.0
    fam = {k: 0.0 for k in FAMILIES}
    for t in moves:
        diff = t.rate * (f(t.eta, t.xi) - base)
        fam[t.family] += diff
        if diff > 0:
            plus += diff
        else:
            minus -= diff
    return CoupledGeneratorValue(plus, minus, fam)

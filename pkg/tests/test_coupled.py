from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrep import Kernel, SiteSpace
from lrep.coupled import (FAMILIES, Pair, PairCylinder, coupled_generator_apply, coupled_rates,
                          discrepancy_functionals, discrepancy_functionals_all, fault_injection,
                          marginal_consistency_check, transitions)
from lrep.rates import delta_rate, jump_law, q_rate
from lrep.simulate import ChainStore, RngPlan
from lrep.stats import f_n

from conftest import config_on, nn_segment

LONG = [(1, 0.4), (-1, 0.2), (3, 0.2), (-2, 0.2)]


def _random_pair(rng, n, rho=0.5, x=None):
    eta = (rng.random(n) < rho).astype(np.uint8)
    xi = (rng.random(n) < rho).astype(np.uint8)
    if x is not None:
        eta[x] = xi[x] = 1
    return eta, xi


def test_joint_move_matches_product_rate(rng):
    k = Kernel.from_offsets(SiteSpace.torus(8), LONG)
    for _ in range(10):
        eta, xi = _random_pair(rng, 8, 0.6, x=0)
        pair = Pair.of(k.space, eta, xi)
        cr = coupled_rates(k, 0, pair)
        for y in np.flatnonzero((eta == 0) & (xi == 0)):
            assert cr.get("together", int(y)) == pytest.approx(q_rate(k, 0, int(y), pair.product), abs=1e-14)


def test_forced_two_phase_path():
    k = nn_segment(5, 0.7)
    i = k.space.index
    eta = config_on(k.space, [0])
    xi = config_on(k.space, [0, 1])
    cr = coupled_rates(k, i(0), Pair.of(k.space, eta, xi))
    assert cr.get("eta_stops_xi_continues", (i(1), i(2))) == pytest.approx(0.49, abs=1e-14)
    assert cr.get("eta_moves_xi_returns", i(1)) == pytest.approx(0.21, abs=1e-14)


def test_no_vanishing_on_irreducible_torus(rng):
    k = Kernel.from_offsets(SiteSpace.torus(7), LONG)
    for _ in range(10):
        eta, xi = _random_pair(rng, 7, 0.6, x=3)
        cr = coupled_rates(k, 3, Pair.of(k.space, eta, xi))
        for fam in ("both_vanish", "eta_moves_xi_vanishes", "xi_moves_eta_vanishes",
                    "eta_alone_vanishes", "xi_alone_vanishes"):
            assert cr.total(fam) == 0.0


def test_vanishing_on_open_window():
    k = nn_segment(3, 1.0)
    full = np.ones(k.n, dtype=np.uint8)
    cr = coupled_rates(k, k.space.index(0), Pair.of(k.space, full, full))
    assert cr.get("both_vanish") == 1.0


def test_total_rate_is_one_per_ring(rng):
    k = nn_segment(6, 0.6)
    for _ in range(10):
        eta, xi = _random_pair(rng, k.n, 0.7)
        x = int(rng.integers(k.n))
        eta[x] = 1
        cr = coupled_rates(k, x, Pair.of(k.space, eta, xi))
        total = cr.cancel + sum(cr.total(f) for f in FAMILIES)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_consistency_equal_pair_puts_everything_together(rng):
    k = Kernel.nearest_neighbor(SiteSpace.torus(8), 0.7)
    eta, _ = _random_pair(rng, 8, 0.5, x=0)
    pair = Pair.of(k.space, eta, eta)
    cr = coupled_rates(k, 0, pair)
    others = [f for f in FAMILIES if f != "together"]
    assert all(cr.total(f) == 0.0 for f in others)
    for y in np.flatnonzero(eta == 0):
        assert marginal_consistency_check(k, 0, int(y), pair) == (0.0, 0.0)


def test_consistency_xi_empty_off_source(rng):
    k = Kernel.from_offsets(SiteSpace.torus(8), LONG)
    eta, _ = _random_pair(rng, 8, 0.5, x=0)
    xi = np.zeros(8, dtype=np.uint8)
    xi[0] = 1
    pair = Pair.of(k.space, eta, xi)
    for y in np.flatnonzero(eta == 0):
        r_move, r_delta = marginal_consistency_check(k, 0, int(y), pair)
        assert abs(r_move) < 1e-14 and abs(r_delta) < 1e-14


@pytest.mark.parametrize("offsets", [[(1, 0.7), (-1, 0.3)], LONG])
def test_consistency_random_pairs(rng, offsets):
    k = Kernel.from_offsets(SiteSpace.torus(8), offsets)
    worst = 0.0
    for _ in range(40):
        eta, xi = _random_pair(rng, 8, 0.6)
        x = int(rng.integers(8))
        eta[x] = xi[x] = 1
        for a, b in ((eta, xi), (xi, eta)):
            pair = Pair.of(k.space, a, b)
            for y in np.flatnonzero(a == 0):
                worst = max(worst, *map(abs, marginal_consistency_check(k, x, int(y), pair)))
    assert worst < 1e-10


def test_consistency_delta_identity_with_escape(rng):
    k = Kernel.from_offsets(SiteSpace.centered(5), LONG)
    for _ in range(30):
        eta, xi = _random_pair(rng, k.n, 0.7)
        x = int(rng.integers(k.n))
        eta[x] = xi[x] = 1
        if eta.all():
            continue
        y = int(rng.choice(np.flatnonzero(eta == 0)))
        r_move, r_delta = marginal_consistency_check(k, x, y, Pair.of(k.space, eta, xi))
        assert abs(r_move) < 1e-10 and abs(r_delta) < 1e-10
        assert delta_rate(k, x, eta) >= 0


def test_consistency_precondition():
    k = Kernel.nearest_neighbor(SiteSpace.torus(4), 0.5)
    with pytest.raises(ValueError):
        marginal_consistency_check(k, 0, 1, Pair.of(k.space, [1, 0, 0, 0], [0, 0, 0, 0]))


def test_fault_injection_breaks_consistency():
    k = Kernel.nearest_neighbor(SiteSpace.torus(6), 0.7)
    pair = Pair.of(k.space, [1, 0, 1, 0, 0, 1], [1, 0, 0, 1, 0, 1])
    with fault_injection(1e-3):
        r, _ = marginal_consistency_check(k, 0, 1, pair)
    assert abs(r) > 1e-4
    assert abs(marginal_consistency_check(k, 0, 1, pair)[0]) < 1e-14


def _outcome_pair(store, x, ring, pair):
    """Resulting pair of configurations when both copies follow one sampled path."""
    out = []
    for c in (pair.eta, pair.xi):
        c = c.copy()
        if c[x]:
            kind, y = store.resolve(x, ring, c.astype(bool))
            if kind != "cancelled":
                c[x] = 0
                if kind == "jump":
                    c[y] = 1
        out.append(c)
    return out[0].tobytes() + out[1].tobytes()


@pytest.mark.parametrize("space", [SiteSpace.torus(7), SiteSpace.centered(3)])
def test_coupled_law_matches_shared_path_sampling(space):
    """Exact family rates reproduce the joint law of two copies driven by one walk."""
    k = Kernel.from_offsets(space, LONG)
    r = np.random.default_rng(7)
    n = 20_000
    for trial in range(3):
        eta, xi = _random_pair(r, k.n, 0.6)
        x = int(r.integers(k.n))
        eta[x] = 1
        xi[x] = trial != 2
        pair = Pair.of(space, eta, xi)
        exact = Counter()
        total = 0.0
        for t in transitions(k, pair, sources=[x]):
            exact[t.eta.tobytes() + t.xi.tobytes()] += t.rate
            total += t.rate
        exact[pair.eta.tobytes() + pair.xi.tobytes()] += 1.0 - total
        store = ChainStore(k, RngPlan(99, (trial,)))
        freq = Counter(_outcome_pair(store, x, ring, pair) for ring in range(n))
        for key in set(exact) | set(freq):
            p = min(max(exact.get(key, 0.0), 0.0), 1.0)
            f = freq.get(key, 0) / n
            if p < 1e-12:
                assert f == 0.0
            else:
                assert abs(f - p) <= 4 * np.sqrt(p * (1 - p) / n) + 1e-12


def test_positive_discrepancy_adjacent_to_negative():
    k = nn_segment(4, 0.7)
    i = k.space.index
    eta = config_on(k.space, [0])
    xi = config_on(k.space, [1])
    A, B, C, D = discrepancy_functionals(k, i(0), i(1), Pair.of(k.space, eta, xi))
    assert D == pytest.approx(0.7, abs=1e-14)
    assert A == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_functional_ordering(seed):
    r = np.random.default_rng(seed)
    k = Kernel.from_offsets(SiteSpace.torus(7), LONG)
    eta, xi = _random_pair(r, 7, 0.6)
    x = int(r.integers(7))
    eta[x] = 1
    f = discrepancy_functionals_all(k, x, Pair.of(k.space, eta, xi))
    assert (f.A <= f.B + 1e-12).all()
    assert (f.B <= f.C + 1e-12).all()
    assert (np.minimum.reduce([f.A, f.B, f.C, f.D]) >= 0).all()


@pytest.mark.parametrize("offsets", [[(1, 0.5), (-1, 0.5)], [(2, 1 / 3), (-1, 2 / 3)]])
def test_zero_mean_b_functional(rng, offsets):
    k = Kernel.from_offsets(SiteSpace.centered(16), offsets)
    c = k.space.signed_coords()[:, 0]
    inner = np.abs(c) <= 4
    x = k.space.index(0)
    for _ in range(6):
        eta, xi = _random_pair(rng, k.n, 0.6)
        eta, xi = eta * inner, xi * inner
        eta[x], xi[x] = 1, 0
        B = discrepancy_functionals_all(k, x, Pair.of(k.space, eta, xi)).B
        assert abs(((c - c[x]) * B).sum()) < 1e-10


def test_joint_rate_dominated_by_marginals(rng):
    k = Kernel.from_offsets(SiteSpace.torus(8), LONG)
    for _ in range(10):
        eta, xi = _random_pair(rng, 8, 0.6, x=0)
        pair = Pair.of(k.space, eta, xi)
        cr = coupled_rates(k, 0, pair)
        for y, v in cr.rates["together"].items():
            assert v <= min(q_rate(k, 0, y, eta), q_rate(k, 0, y, xi)) + 1e-14


def test_generator_constant_function(rng):
    k = Kernel.from_offsets(SiteSpace.torus(7), LONG)
    eta, xi = _random_pair(rng, 7)
    g = coupled_generator_apply(k, lambda e, s: 1.0, Pair.of(k.space, eta, xi))
    assert g.value == 0.0 and g.plus == 0.0


def test_generator_on_diagonal_keeps_discrepancies(rng):
    k = Kernel.from_offsets(SiteSpace.centered(6), LONG)
    eta, _ = _random_pair(rng, k.n)
    pair = Pair.of(k.space, eta, eta)
    for n in range(4):
        g = coupled_generator_apply(k, lambda e, s: f_n(Pair.of(k.space, e, s), n), pair)
        assert g.plus == 0.0 and g.minus == 0.0


def test_generator_cylinder_matches_single_generator(rng):
    from lrep.rates import generator_apply
    k = Kernel.from_offsets(SiteSpace.torus(7), LONG)
    eta, xi = _random_pair(rng, 7)
    f = PairCylinder(((1.0, (2, 3), ()),))
    g = coupled_generator_apply(k, f, Pair.of(k.space, eta, xi))
    assert g.value == pytest.approx(generator_apply(k, [2, 3], eta).value, abs=1e-12)


def test_generator_stationary_pair_measure_integrates_to_zero():
    from lrep.exact import build_generator, stationary
    k = Kernel.nearest_neighbor(SiteSpace.torus(4), 0.7)
    gen = build_generator(k, "coupled")
    f = lambda e, s: f_n(Pair.of(k.space, e, s), 1)
    for mu in stationary(gen):
        total = 0.0
        for i in np.flatnonzero(mu.p > 1e-15):
            e, s = gen.config(i)
            total += mu.p[i] * coupled_generator_apply(k, f, Pair.of(k.space, e, s)).value
        assert abs(total) < 1e-8


def test_positive_part_of_window_count_is_entry_rate(rng):
    k = Kernel.from_offsets(SiteSpace.centered(8), LONG)
    c = k.space.signed_coords()[:, 0]
    inner = np.abs(c) <= 5
    n = 2
    for _ in range(15):
        eta, xi = _random_pair(rng, k.n)
        pair = Pair.of(k.space, eta * inner, xi * inner)
        g = coupled_generator_apply(k, lambda e, s: f_n(Pair.of(k.space, e, s), n), pair)
        entry = sum(discrepancy_functionals_all(k, x, pair).A[np.abs(c) <= n].sum()
                    for x in np.flatnonzero(np.abs(c) > n))
        assert g.plus == pytest.approx(entry, abs=1e-12)


def test_rates_json_lists_families():
    k = Kernel.nearest_neighbor(SiteSpace.torus(4), 0.5)
    cr = coupled_rates(k, 0, Pair.of(k.space, [1, 1, 0, 0], [1, 0, 0, 1]))
    js = cr.to_json()
    for fam in FAMILIES:
        assert fam in js
    assert jump_law(k, 0, [1, 1, 0, 0]).lost == 0.0

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrep import Kernel, NotComputableError, SiteSpace
from lrep.rates import (RateTable, arrival_rate, cancel_rate, cylinder_sets, delta_rate,
                        displacement_sum, generator_apply, jump_law, q_bar_rate, q_rate, rate_report)

from conftest import config_on, nn_segment


def _random_config(rng, n, rho=0.5):
    return (rng.random(n) < rho).astype(np.uint8)


def test_nn_one_step_rate_ignores_configuration(rng):
    k = nn_segment(5, 0.7)
    x, y = k.space.index(0), k.space.index(1)
    for _ in range(20):
        eta = _random_config(rng, k.n)
        eta[x] = 1
        eta[y] = 0
        assert q_rate(k, x, y, eta) == pytest.approx(0.7, abs=1e-12)


def test_two_step_rate_needs_occupied_middle():
    k = nn_segment(5, 0.7)
    i = k.space.index
    eta = config_on(k.space, [0])
    assert q_rate(k, i(0), i(2), eta) == 0.0
    eta = config_on(k.space, [0, 1])
    assert q_rate(k, i(0), i(2), eta) == pytest.approx(0.49, abs=1e-12)


def test_q_rate_rejects_equal_sites():
    k = nn_segment(2, 0.5)
    with pytest.raises(ValueError):
        q_rate(k, 1, 1, np.ones(k.n))


def test_unrestricted_rate_direct_step_only():
    k = nn_segment(5, 0.7)
    i = k.space.index
    eta = config_on(k.space, [0, 2])
    assert q_bar_rate(k, i(0), i(1), eta) == pytest.approx(0.7, abs=1e-12)


def test_unrestricted_rate_symmetric_ruin():
    k = nn_segment(5, 0.5)
    i = k.space.index
    eta = config_on(k.space, [0, -1])
    assert q_bar_rate(k, i(0), i(1), eta) == pytest.approx(2 / 3, abs=1e-12)
    assert q_rate(k, i(0), i(1), eta) == pytest.approx(0.5, abs=1e-12)


def test_delta_vanishes_on_irreducible_torus(rng):
    k = Kernel.from_offsets(SiteSpace.torus(9), [(1, 0.5), (-1, 0.2), (2, 0.3)])
    for _ in range(10):
        eta = _random_config(rng, 9, 0.7)
        eta[0] = 1
        assert delta_rate(k, 0, eta) == 0.0


def test_delta_on_occupied_exterior_drift():
    k = nn_segment(6, 0.7, "occupied-exterior")
    eta = np.ones(k.n, dtype=np.uint8)
    eta[k.space.index(-3)] = 0
    assert delta_rate(k, k.space.index(0), eta) == pytest.approx(0.4, abs=1e-12)


def test_delta_deterministic_drift_into_full_exterior():
    k = nn_segment(6, 1.0, "occupied-exterior")
    eta = np.ones(k.n, dtype=np.uint8)
    eta[k.space.index(-3)] = 0
    assert delta_rate(k, k.space.index(0), eta) == pytest.approx(1.0, abs=1e-12)


def test_delta_open_escape_counts_leaving_walks():
    k = nn_segment(3, 1.0)
    eta = np.ones(k.n, dtype=np.uint8)
    assert delta_rate(k, k.space.index(0), eta) == 1.0


def test_delta_refuses_long_range_occupied_exterior():
    k = Kernel.from_offsets(SiteSpace.centered(4, "occupied-exterior"), [(2, 0.5), (-1, 0.5)])
    eta = np.ones(k.n, dtype=np.uint8)
    with pytest.raises(NotComputableError):
        delta_rate(k, k.space.index(0), eta)


def test_generator_full_torus_is_zero():
    k = Kernel.from_offsets(SiteSpace.torus(5), [(1, 0.6), (-2, 0.4)])
    full = np.ones(5, dtype=np.uint8)
    for R in cylinder_sets(5, 3):
        g = generator_apply(k, R, full)
        assert g.plus == 0.0 and g.minus == 0.0


def test_generator_three_site_torus():
    sym = Kernel.nearest_neighbor(SiteSpace.torus(3), 0.5)
    tasep = Kernel.from_offsets(SiteSpace.torus(3), [(1, 1.0)])
    eta = np.array([0, 1, 0])
    assert generator_apply(sym, [0], eta).value == pytest.approx(0.5, abs=1e-14)
    assert generator_apply(tasep, [0], eta).value == 0.0
    g = generator_apply(sym, [1], eta)
    assert g.plus == 0.0 and g.minus == pytest.approx(1.0)


def test_generator_requires_nonempty_set():
    k = Kernel.nearest_neighbor(SiteSpace.torus(3), 0.5)
    with pytest.raises(ValueError):
        generator_apply(k, [], np.zeros(3))


def test_arrival_rate_examples():
    k = Kernel.from_offsets(SiteSpace.torus(6), [(1, 0.5), (-1, 0.2), (2, 0.3)])
    assert arrival_rate(k, 0, np.zeros(6)) == 0.0
    for z in range(1, 6):
        eta = np.zeros(6, dtype=np.uint8)
        eta[z] = 1
        assert arrival_rate(k, 0, eta) == pytest.approx(k.dense[z, 0], abs=1e-14)
    two = Kernel.nearest_neighbor(SiteSpace.torus(2), 0.5)
    assert arrival_rate(two, 0, np.array([1, 1])) == pytest.approx(1.0)


def test_displacement_zero_mean_nn(rng):
    k = nn_segment(14, 0.5)
    window = np.abs(k.space.signed_coords()[:, 0]) <= 5
    for _ in range(10):
        eta = _random_config(rng, k.n, 0.6) * window
        eta[k.space.index(0)] = 1
        signed, absolute = displacement_sum(k, k.space.index(0), eta)
        assert abs(signed) < 1e-10
        assert absolute >= 1.0 - 1e-12


def test_displacement_zero_mean_long_range(rng):
    k = Kernel.from_offsets(SiteSpace.centered(16), [(2, 1 / 3), (-1, 2 / 3)])
    window = np.abs(k.space.signed_coords()[:, 0]) <= 5
    for _ in range(10):
        eta = _random_config(rng, k.n, 0.6) * window
        x = k.space.index(0)
        eta[x] = 1
        assert abs(displacement_sum(k, x, eta)[0]) < 1e-10


def test_displacement_with_drift_is_kernel_mean():
    k = nn_segment(4, 0.7)
    x = k.space.index(0)
    eta = np.zeros(k.n, dtype=np.uint8)
    signed, absolute = displacement_sum(k, x, eta)
    assert signed == pytest.approx(0.4, abs=1e-14)
    assert absolute == pytest.approx(1.0, abs=1e-14)
    assert displacement_sum(k, x, eta, "q")[0] == pytest.approx(0.4, abs=1e-14)


def test_displacement_needs_room():
    k = nn_segment(3, 0.5)
    eta = np.zeros(k.n, dtype=np.uint8)
    with pytest.raises(NotComputableError):
        displacement_sum(k, 0, eta)
    with pytest.raises(ValueError):
        displacement_sum(k, 3, eta, "bogus")


def test_rate_report_round_trip():
    k = nn_segment(3, 0.7)
    eta = config_on(k.space, [0, 1])
    rep = rate_report(k, k.space.index(0), eta)
    by_site = {t["site"]: t for t in rep.targets}
    assert by_site[k.space.index(2)]["q"] == pytest.approx(0.49)
    assert "cancel" in rep.to_json()


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 8), st.integers(0, 10**6))
def test_rate_inequalities_and_conservation(n, seed):
    r = np.random.default_rng(seed)
    w = r.random(3)
    k = Kernel.from_offsets(SiteSpace.torus(n), [(1, w[0] / w.sum()), (-1, w[1] / w.sum()),
                                                  (2 if n > 4 else -2, w[2] / w.sum())])
    eta = _random_config(r, n, 0.6)
    x = int(r.integers(n))
    eta[x] = 1
    law = jump_law(k, x, eta)
    vac = np.flatnonzero(eta == 0)
    total = law.probs[vac].sum() + cancel_rate(k, x, eta) + delta_rate(k, x, eta)
    assert total == pytest.approx(1.0, abs=1e-12)
    assert delta_rate(k, x, eta) == 0.0
    for y in vac:
        q = q_rate(k, x, int(y), eta)
        qb = q_bar_rate(k, x, int(y), eta)
        assert -1e-15 <= q <= qb + 1e-12 and qb <= 1 + 1e-12
        for z in np.flatnonzero(eta):
            if z == y:
                continue
            eta_z = eta.copy()
            eta_z[z] = 0
            assert q_bar_rate(k, x, int(y), eta_z) <= qb + 1e-12


def test_rate_table_rows_and_stationary_cylinders():
    from lrep.exact import build_generator, stationary
    k = Kernel.from_offsets(SiteSpace.torus(5), [(1, 0.5), (-1, 0.3), (2, 0.2)])
    gen = build_generator(k)
    for mu in stationary(gen):
        for R in cylinder_sets(5, 2):
            total = sum(mu.p[i] * generator_apply(k, R, gen.config(i)).value
                        for i in np.flatnonzero(mu.p > 0))
            assert abs(total) < 1e-10
    t = RateTable.build(k, np.array([1, 1, 0, 1, 0]))
    assert t.q[2].sum() == 0.0

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geosched.accounting import (
    Estimator,
    cloud_objective,
    dc_carbon,
    dc_cost,
    estimate_carbon_player,
    estimate_cost_player,
    network_cost,
    peak_cost_delta,
    realized_ledger,
)
from geosched.errors import InfeasibleProfile, InfeasibleRate
from geosched.fixtures import random_small, simple_scenario
from geosched.power import dc_power_max

from conftest import random_profile


def _dc(**kw):
    return simple_scenario(1, 1, **kw).data_centers[0]


def test_dc_carbon():
    dc = _dc(carbon_factor=0.4)
    assert dc_carbon(dc, 100.0, 1.0) == pytest.approx(40.0)
    assert dc_carbon(dc, 0.0) == 0.0
    assert dc_carbon(dc, -50.0) == pytest.approx(-20.0)


def test_peak_delta_cases():
    assert peak_cost_delta(10.0, 120.0, 100.0) == (200.0, 120.0)
    assert peak_cost_delta(10.0, 90.0, 100.0) == (0.0, 100.0)


@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=60), st.floats(0, 1e3), st.floats(0, 50))
def test_peak_telescoping(draws, start, price):
    pp, total = start, 0.0
    for g in draws:
        delta, pp = peak_cost_delta(price, max(g, pp), pp)
        assert delta >= 0
        total += delta
    assert total == pytest.approx(price * (pp - start), rel=1e-9, abs=1e-9)


def test_network_cost():
    s = simple_scenario(1, 1, network_price=0.05, size_gb=2.0)
    assert network_cost(s, [0]) == 0.0
    assert network_cost(s, [10]) == pytest.approx(1.0)
    nn = s.total_nodes[0]
    est = Estimator(s, 0)
    assert network_cost(s, [nn]) == pytest.approx(est.nc_max[0, 0])


def test_dc_cost_alpha_rule():
    assert dc_cost(_dc(), 100.0, 0.1, 0.0, 0.0) == pytest.approx(10.0)
    assert dc_cost(_dc(net_meter=0.5), -100.0, 0.1, 0.0, 0.0) == pytest.approx(-5.0)
    assert dc_cost(_dc(net_meter=0.0), -100.0, 0.1, 0.0, 0.0) == 0.0


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_alpha_switch_slope(alpha):
    dc = _dc(net_meter=alpha)
    price, h = 0.12, 1e-3

    def energy(x):
        return dc_cost(dc, x, price, 7.0, 3.0)

    above = (energy(5 + h) - energy(5 - h)) / (2 * h)
    below = (energy(-5 + h) - energy(-5 - h)) / (2 * h)
    assert above == pytest.approx(price, rel=1e-9)
    assert below == pytest.approx(alpha * price, rel=1e-9, abs=1e-12)
    # the peak and network terms pass through unchanged on both sides
    assert energy(0.0) == pytest.approx(10.0)


def test_ledger_totals_and_peak(four_dc, rng):
    pp = np.zeros(4)
    for tau in range(24):
        ar = random_profile(four_dc, tau, rng)
        led = realized_ledger(four_dc, tau, ar, pp)
        for col, value in led.totals.items():
            assert value == pytest.approx(np.sum(getattr(led, col)), abs=1e-9)
        assert np.all(led.peak_delta_usd >= 0)
        assert np.all(led.prior_peak_kw >= pp)
        assert np.allclose(
            led.total_cost_usd, led.energy_cost_usd + led.peak_delta_usd + led.network_cost_usd, rtol=1e-12
        )
        pp = led.prior_peak_kw


def test_ledger_month_telescoping(four_dc, rng):
    pp0 = np.zeros(4)
    pp, paid = pp0, np.zeros(4)
    for day in range(30):
        for tau in range(24):
            ar = random_profile(four_dc, tau, rng)
            led = realized_ledger(four_dc, tau, ar, pp)
            paid += led.peak_delta_usd
            pp = led.prior_peak_kw
    assert np.allclose(paid, four_dc.peak_price * (pp - pp0), rtol=0, atol=1e-9 * max(1.0, paid.max()))


def test_carbon_player_examples():
    s = simple_scenario(2, 1, carbon_factor=[0.0, 0.5], car=5.0)
    _, cet = estimate_carbon_player(0, s, 0, [0.0, 0.0])
    assert cet == 0.0
    _, cet = estimate_carbon_player(0, s, 0, [5.0, 0.0])
    assert cet == 0.0
    with pytest.raises(InfeasibleRate):
        estimate_carbon_player(0, s, 0, [s.execution_rates[0, 0] * 1.01, 0.0])


def test_identical_dcs_any_split_same_carbon():
    s = simple_scenario(2, 1, car=20.0)
    values = [estimate_carbon_player(0, s, 0, [f * 20.0, (1 - f) * 20.0])[1] for f in np.linspace(0, 1, 11)]
    assert np.allclose(values, values[0], rtol=1e-12)


def test_cost_player_full_rate_network_term():
    s = simple_scenario(2, 1, car=5.0, elec_price=0.0, peak_price=0.0)
    er = s.execution_rates[0, 0]
    terms, _ = estimate_cost_player(0, s, 0, [er, 0.0], np.zeros((1, 2)), np.zeros(2))
    assert terms[0] == pytest.approx(s.network_price * s.total_nodes[0] * s.task_size[0])


def test_cost_player_zero_prices():
    s = simple_scenario(2, 2, car=5.0, elec_price=0.0, peak_price=0.0, network_price=0.0)
    ctx = np.array([[2.0, 3.0], [1.0, 4.0]])
    _, cct = estimate_cost_player(1, s, 0, [2.5, 2.5], ctx, np.zeros(2))
    assert cct == 0.0


def test_cost_player_direct_substitution():
    s0 = simple_scenario(1, 1, car=1.0)
    dpm = dc_power_max(s0, 0, 0)
    er = s0.execution_rates[0, 0]
    ar = 50.0 / dpm * er
    nprice = 2.0 / (s0.total_nodes[0] * s0.task_size[0] * ar / er)
    s = simple_scenario(1, 1, car=ar, elec_price=0.1, network_price=nprice)
    # prior peak above the estimated draw, so the peak term is 0
    terms, cct = estimate_cost_player(0, s, 0, [ar], np.zeros((1, 1)), [1e6])
    assert cct == pytest.approx(7.0, rel=1e-12)


def test_cloud_objective_zero_profile():
    s = simple_scenario(2, 2, car=0.0)
    assert cloud_objective(s, 0, np.zeros((2, 2)), "carbon") == 0.0
    assert cloud_objective(s, 0, np.zeros((2, 2)), "cost") == 0.0


def test_cloud_objective_is_sum_of_players(four_dc, rng):
    ar = random_profile(four_dc, 9, rng)
    total = sum(estimate_carbon_player(i, four_dc, 9, ar[i])[1] for i in range(10))
    assert cloud_objective(four_dc, 9, ar, "carbon") == pytest.approx(total, rel=1e-9)
    pp = np.full(4, 100.0)
    total = sum(estimate_cost_player(i, four_dc, 9, ar[i], ar, pp)[1] for i in range(10))
    assert cloud_objective(four_dc, 9, ar, "cost", pp) == pytest.approx(total, rel=1e-9)


def test_cloud_objective_rejects_infeasible(simple):
    bad = np.array([[15.0, 1.0], [30.0, 0.0]])
    with pytest.raises(InfeasibleProfile):
        cloud_objective(simple, 0, bad, "carbon")


def test_cloud_objective_matches_explicit_formula():
    s = random_small(5)
    rng = np.random.default_rng(0)
    ar = random_profile(s, 0, rng)
    pp = np.array([3.0, 0.0])
    k = (s.gross_power_max - s.renewable[:, 0]) / s.execution_rates
    dp = k * ar
    alpha = np.where(s.gross_power_max - s.renewable[:, 0] > 0, 1.0, s.net_meter)
    nc = s.network_price * s.total_nodes[None, :] * s.task_size[:, None] * ar / s.execution_rates
    draw = np.maximum(dp, 0).sum(axis=0)
    delta = s.peak_price * np.maximum(draw - pp, 0)
    cost = (s.elec_price[:, 0] * alpha * dp + nc).sum() + s.n_tasks * delta.sum()
    assert cloud_objective(s, 0, ar, "cost", pp) == pytest.approx(cost, rel=1e-12)
    assert cloud_objective(s, 0, ar, "carbon") == pytest.approx((s.carbon_factor * dp).sum(), rel=1e-12)


def test_prorated_peak_counts_delta_once():
    s = simple_scenario(2, 2, car=[5.0, 9.0], prorate_peak=True)
    est = Estimator(s, 0)
    ar = np.array([[2.0, 3.0], [4.0, 5.0]])
    full = est.cost_terms_matrix(ar, np.zeros(2))
    linear = est.linear_cost_coef * ar
    assert (full - linear).sum() == pytest.approx(est.peak_delta(est.draw(ar), np.zeros(2)).sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 5.0))
def test_carbon_scales_with_load(seed, lam):
    s = random_small(seed)
    rng = np.random.default_rng(seed)
    ar = random_profile(s, 0, rng)
    est = Estimator(s, 0)
    assert est.objective("carbon", lam * ar, 0) == pytest.approx(lam * est.objective("carbon", ar, 0), rel=1e-9)


def test_batch_rewards_match_single(four_dc, rng):
    est = Estimator(four_dc, 4)
    ars = np.stack([random_profile(four_dc, 4, rng) for _ in range(5)])
    pps = rng.random((5, 4)) * 500
    for obj in ("carbon", "cost"):
        batch = est.batch_player_rewards(obj, ars, pps)
        for k in range(5):
            assert np.allclose(batch[k], est.player_rewards(obj, ars[k], pps[k]), rtol=1e-12)

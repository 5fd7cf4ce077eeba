"""Payoff families: hand values, discount handling, vectorized evaluation."""

import math

import numpy as np
import pytest

from stoprule.paths_models import make_grid
from stoprule.payoffs import (
    BmPutType,
    GeometricBasket,
    LastRatio,
    MaxCall,
    MeanExpPut,
    StrangleSpread,
    eval_payoff,
    payoff_along_paths,
)


def test_strangle_spread_hand_values():
    p = StrangleSpread(rate=0.05, strikes=(75.0, 90.0, 110.0, 125.0))
    x = np.full(5, 80.0)
    assert abs(eval_payoff(p, 0.0, x) - 10.0) < 1e-12  # mean 80: put(90) pays 10
    # below the low strike the spread caps at K2-K1
    assert abs(eval_payoff(p, 0.0, np.full(5, 10.0)) - 15.0) < 1e-12
    # above the high strike it caps at K4-K3
    assert abs(eval_payoff(p, 0.0, np.full(5, 300.0)) - 15.0) < 1e-12
    # dead zone between the middle strikes
    assert eval_payoff(p, 0.0, np.full(5, 100.0)) == 0.0


def test_strangle_spread_nonnegative_everywhere():
    p = StrangleSpread(rate=0.05, strikes=(75.0, 90.0, 110.0, 125.0))
    rng = np.random.default_rng(2)
    means = rng.uniform(0.0, 400.0, size=(500, 1))
    x = np.repeat(means, 5, axis=1)
    times = np.zeros(())
    assert np.all(p.along(times, x) >= 0.0)


def test_strangle_spread_rejects_unordered_strikes():
    with pytest.raises(ValueError):
        StrangleSpread(rate=0.0, strikes=(90.0, 75.0, 110.0, 125.0))


def test_bm_put_scaling_variants():
    p_iid = BmPutType(rate=0.06, vol=0.4, start=40.0, strike=40.0, pool="iid")
    p_corr = BmPutType(rate=0.02, vol=0.3, start=95.0, strike=90.0, pool="corr10")
    assert abs(p_iid.scale(5) - 0.4 / math.sqrt(5)) < 1e-15
    assert abs(p_corr.scale(5) - 0.3 * math.sqrt(10.0 / 70.0)) < 1e-15
    # one dimension: both variants collapse to the plain vol
    assert abs(p_iid.scale(1) - 0.4) < 1e-15
    assert abs(p_corr.scale(1) - 0.3) < 1e-15
    with pytest.raises(ValueError):
        BmPutType(rate=0.0, vol=0.1, start=1.0, strike=1.0, pool="other")


def test_bm_put_hand_value():
    # at s=0 and x=0 the level is exactly the start value
    p = BmPutType(rate=0.02, vol=0.3, start=95.0, strike=90.0, pool="corr10")
    assert eval_payoff(p, 0.0, np.zeros(5)) == 0.0  # 90 - 95 < 0
    deep = BmPutType(rate=0.02, vol=0.3, start=60.0, strike=90.0, pool="corr10")
    assert abs(eval_payoff(deep, 0.0, np.zeros(5)) - 30.0) < 1e-12
    # s > 0: drift and discount both enter
    s, x = 0.5, np.full(1, -1.0)
    level = math.exp((0.02 - 0.045) * s + 0.3 * (-1.0)) * 60.0
    expect = math.exp(-0.02 * s) * max(90.0 - level, 0.0)
    assert abs(eval_payoff(BmPutType(0.02, 0.3, 60.0, 90.0, "iid"), s, x) - expect) < 1e-12


def test_geometric_basket_put_and_call():
    put = GeometricBasket(rate=0.6, strike=95.0, power=0.5, kind="put")
    call = GeometricBasket(rate=0.0, strike=0.9, power=0.25, kind="call")
    x = np.array([4.0, 9.0])  # sqrt-product = 2*3 = 6
    assert abs(eval_payoff(put, 0.0, x) - 89.0) < 1e-12
    y = np.array([1.0, 1.0, 1.0, 16.0])  # fourth-root product = 2
    assert abs(eval_payoff(call, 0.0, y) - 1.1) < 1e-12
    assert eval_payoff(call, 0.0, np.full(4, 0.5)) == 0.0
    with pytest.raises(ValueError):
        GeometricBasket(rate=0.0, strike=1.0, power=1.0, kind="straddle")


def test_max_call_takes_best_coordinate():
    p = MaxCall(rate=0.05, strike=100.0)
    assert abs(eval_payoff(p, 0.0, np.array([90.0, 104.0, 99.0])) - 4.0) < 1e-12
    assert eval_payoff(p, 0.0, np.array([90.0, 95.0])) == 0.0


def test_mean_exp_put_on_log_states():
    p = MeanExpPut(rate=0.05, strike=100.0)
    logs = np.log(np.array([80.0, 90.0, 100.0, 110.0, 70.0]))
    assert abs(eval_payoff(p, 0.0, logs) - 10.0) < 1e-10


def test_last_ratio_reads_final_coordinate():
    p = LastRatio(rate=0.0004)
    x = np.linspace(0.5, 1.5, 100)
    assert abs(eval_payoff(p, 0.0, x) - 1.5) < 1e-15


def test_discount_consistency_for_stationary_rewards():
    # families whose reward ignores the date itself: value at s equals
    # e^{-r s} times the value at 0
    rng = np.random.default_rng(9)
    cases = [
        (MaxCall(rate=0.07, strike=1.0), rng.uniform(0.2, 2.0, 6)),
        (GeometricBasket(rate=0.11, strike=1.0, power=0.3, kind="put"), rng.uniform(0.2, 2.0, 6)),
        (StrangleSpread(rate=0.05, strikes=(0.5, 0.8, 1.2, 1.5)), rng.uniform(0.2, 2.0, 6)),
        (MeanExpPut(rate=0.03, strike=1.5), rng.normal(0.0, 0.3, 6)),
        (LastRatio(rate=0.0004), rng.uniform(0.5, 1.5, 6)),
    ]
    for payoff, x in cases:
        v0 = eval_payoff(payoff, 0.0, x)
        v1 = eval_payoff(payoff, 0.7, x)
        assert abs(v1 - math.exp(-payoff.rate * 0.7) * v0) < 1e-12


def test_payoff_along_paths_matches_pointwise_eval():
    grid = make_grid(2.0, 5)
    rng = np.random.default_rng(4)
    paths = rng.uniform(0.5, 2.0, size=(7, 6, 3))
    for payoff in (
        MaxCall(rate=0.05, strike=1.0),
        GeometricBasket(rate=0.2, strike=1.0, power=0.4, kind="call"),
        BmPutType(rate=0.02, vol=0.3, start=1.0, strike=1.2, pool="iid"),
    ):
        table = payoff_along_paths(payoff, grid, paths)
        assert table.shape == (7, 6)
        for j in (0, 3, 6):
            for n in (0, 2, 5):
                expect = eval_payoff(payoff, float(grid.times[n]), paths[j, n])
                assert abs(table[j, n] - expect) < 1e-12


def test_payoff_along_paths_shape_errors():
    grid = make_grid(1.0, 3)
    with pytest.raises(ValueError):
        payoff_along_paths(MaxCall(0.0, 1.0), grid, np.zeros((5, 3, 2)))
    with pytest.raises(ValueError):
        eval_payoff(MaxCall(0.0, 1.0), 0.0, np.zeros((2, 2)))

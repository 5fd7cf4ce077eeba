"""Reference-value oracles: closed forms, binomial trees, dimension reduction, Snell."""

import math

import numpy as np
import pytest

from stoprule.oracles import (
    Bs1dParams,
    LatticeTree,
    binomial_american,
    bs_euro_call,
    bs_euro_put,
    lattice_snell,
    norm_cdf,
    reduce_dimension,
)


# ---------------------------------------------------------------------------
# normal CDF


def test_norm_cdf_reference_points():
    # values from high-precision tables
    assert abs(norm_cdf(0.0) - 0.5) < 1e-16
    assert abs(norm_cdf(1.0) - 0.8413447460685429) < 1e-15
    assert abs(norm_cdf(-1.0) - 0.15865525393145705) < 1e-15
    assert abs(norm_cdf(2.5) - 0.9937903346742238) < 1e-15
    assert abs(norm_cdf(-8.0) - 6.22096057427178e-16) < 1e-22


def test_norm_cdf_symmetry_and_monotonicity():
    xs = np.linspace(-10, 10, 2001)
    vals = norm_cdf(xs)
    assert np.all(np.diff(vals) >= 0.0)
    assert np.max(np.abs(vals + norm_cdf(-xs) - 1.0)) < 1e-15


# ---------------------------------------------------------------------------
# European call with carry


def test_bs_call_zero_vol_limit_and_parity():
    p = Bs1dParams(maturity=1.0, spot=100.0, vol=0.2, rate=0.05, carry=0.02, strike=95.0)
    call = bs_euro_call(p)
    put = bs_euro_put(p)
    parity = call - put - (math.exp(-0.02) * 100.0 - 95.0 * math.exp(-0.05))
    assert abs(parity) < 1e-12
    # deep in the money ≈ forward minus strike
    deep = Bs1dParams(maturity=1.0, spot=100.0, vol=1e-8, rate=0.05, carry=0.0, strike=5.0)
    assert abs(bs_euro_call(deep) - (100.0 - 5.0 * math.exp(-0.05))) < 1e-8


def test_bs_call_nonpositive_strike_is_forward():
    p = Bs1dParams(maturity=2.0, spot=50.0, vol=0.3, rate=0.04, carry=0.01, strike=-3.0)
    expect = math.exp(-0.02) * 50.0 + 3.0 * math.exp(-0.08)
    assert abs(bs_euro_call(p) - expect) < 1e-12


def test_bs_call_textbook_value():
    # no carry, classic parameters: S=100, K=100, r=5%, sigma=20%, T=1 -> 10.450583572185565
    p = Bs1dParams(maturity=1.0, spot=100.0, vol=0.2, rate=0.05, carry=0.0, strike=100.0)
    assert abs(bs_euro_call(p) - 10.450583572185565) < 1e-12


def test_bs_call_rejects_bad_inputs():
    with pytest.raises(ValueError):
        bs_euro_call(Bs1dParams(1.0, 100.0, -0.1, 0.0, 0.0, 95.0))
    with pytest.raises(ValueError):
        bs_euro_call(Bs1dParams(0.0, 100.0, 0.2, 0.0, 0.0, 95.0))


def test_bs_call_distinct_rate_basket_reduction_value():
    # 40 lognormal coordinates with linearly increasing vols and capped rates
    # collapse to a single call worth 23.6883 (the basket has zero net dividend,
    # so early exercise is worthless and the European value is the reference).
    d = 40
    i = np.arange(1, d + 1, dtype=np.float64)
    beta = 0.4 * i / d
    k = np.arange(d, dtype=np.float64)
    alpha = np.minimum(0.01 * (k % 40), 0.4 - 0.01 * (k % 40))
    rate = float(np.mean(alpha)) - (d - 1) / (2.0 * d * d) * float(np.dot(beta, beta))
    red = reduce_dimension(1.0 / d, alpha, beta, np.eye(d), np.full(d, 100.0))
    assert abs(red.drift - rate) < 1e-12  # no dividend: drift equals the short rate
    price = bs_euro_call(
        Bs1dParams(maturity=3.0, spot=red.initial, vol=red.vol, rate=rate, carry=0.0, strike=95.0)
    )
    assert abs(price - 23.6883) < 5e-4


# ---------------------------------------------------------------------------
# binomial American values


def test_binomial_american_put_reference():
    # 1-d put: S=K=40, r=6%, sigma=40%, T=1. 20000-step tree gives 5.318.
    p = Bs1dParams(maturity=1.0, spot=40.0, vol=0.4, rate=0.06, carry=0.0, strike=40.0)
    value = binomial_american(p, steps=20000, kind="put")
    assert abs(value - 5.318) < 1e-3


def test_binomial_american_product_put_reference():
    # geometric-basket put collapsed to one coordinate: effective dividend
    # 0.2932 and vol sqrt(0.2136); 20000-step tree gives 6.545.
    rate = 0.6
    p = Bs1dParams(
        maturity=1.0,
        spot=100.0,
        vol=math.sqrt(0.2136),
        rate=rate,
        carry=0.2932,
        strike=95.0,
    )
    value = binomial_american(p, steps=20000, kind="put")
    assert abs(value - 6.545) < 1e-3


def test_binomial_converges_to_european_without_exercise_premium():
    # an American call on a non-dividend asset is European
    p = Bs1dParams(maturity=1.0, spot=100.0, vol=0.2, rate=0.05, carry=0.0, strike=100.0)
    tree = binomial_american(p, steps=4000, kind="call")
    assert abs(tree - bs_euro_call(p)) < 2e-3


def test_binomial_rejects_degenerate_grids():
    p = Bs1dParams(maturity=1.0, spot=100.0, vol=0.01, rate=2.0, carry=0.0, strike=100.0)
    with pytest.raises(ValueError):
        binomial_american(p, steps=2)  # drift outruns the lattice: q >= 1
    with pytest.raises(ValueError):
        binomial_american(p, steps=0)


# ---------------------------------------------------------------------------
# dimension reduction


def test_reduce_dimension_pinned_effective_parameters():
    # the symmetric-vol basket with capped per-coordinate dividends: the
    # collapsed coordinate must show dividend 0.2932 and vol sqrt(0.2136)
    # exactly (to rounding), independent of simulation.
    d = 40
    rate = 0.6
    k = np.arange(d, dtype=np.float64)
    beta = np.minimum(0.04 * (k % 40), 1.6 - 0.04 * (k % 40))
    rho = float(np.dot(beta, beta)) / d
    delta = rate - (rho / d) * (np.arange(1, d + 1) - 0.5) - 1.0 / (5.0 * math.sqrt(d))
    alpha = rate - delta
    xi = np.full(d, 100.0 ** (1.0 / math.sqrt(d)))
    red = reduce_dimension(1.0 / math.sqrt(d), alpha, beta, np.eye(d), xi)
    assert abs(rho - 0.2136) < 1e-12
    assert abs(red.effective_dividend(rate) - 0.2932) < 1e-12
    assert abs(red.vol - math.sqrt(0.2136)) < 1e-12
    assert abs(red.initial - 100.0) < 1e-10


def test_reduce_dimension_identity_one_dim_is_itself():
    red = reduce_dimension(1.0, [0.03], [0.25], np.eye(1), [70.0])
    assert abs(red.initial - 70.0) < 1e-12
    assert abs(red.drift - 0.03) < 1e-12  # -β²/2 + β²/2 cancels
    assert abs(red.vol - 0.25) < 1e-12


def test_reduce_dimension_correlated_factor_columns_are_loadings():
    # two coordinates driven by one shared factor column: perfect correlation
    factor = np.array([[1.0, 1.0], [0.0, 0.0]])
    red = reduce_dimension(0.5, [0.0, 0.0], [0.2, 0.2], factor, [1.0, 1.0])
    # mixed loading = factor @ beta = (0.4, 0); vol = 0.5*0.4
    assert abs(red.vol - 0.2) < 1e-15
    assert abs(red.drift - (0.5 * (-0.04) + 0.5 * 0.16 * 0.25)) < 1e-15


def test_reduce_dimension_moment_identity():
    # lognormal moments: E[Y_T] = Y0 exp(drift*T) must match the product of
    # per-coordinate means for independent coordinates.
    rng = np.random.default_rng(7)
    d = 6
    alpha = rng.normal(0.0, 0.1, d)
    beta = rng.uniform(0.1, 0.5, d)
    xi = rng.uniform(0.5, 2.0, d)
    eps = 0.3
    red = reduce_dimension(eps, alpha, beta, np.eye(d), xi)
    T = 2.0
    # E[Π X_i^eps] = Π ξ_i^eps exp(eps(α_i - β_i²/2)T + eps²β_i²T/2)
    expect = float(
        np.prod(xi**eps) * math.exp(np.sum(eps * (alpha - 0.5 * beta**2) * T + 0.5 * eps**2 * beta**2 * T))
    )
    got = red.initial * math.exp(red.drift * T)
    assert abs(got - expect) < 1e-12 * abs(expect)


def test_reduce_dimension_shape_errors():
    with pytest.raises(ValueError):
        reduce_dimension(1.0, [0.1, 0.2], [0.3], np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        reduce_dimension(1.0, [0.1], [0.3], np.eye(2), [1.0])
    with pytest.raises(ValueError):
        reduce_dimension(1.0, [0.1], [0.3], np.eye(1), [0.0])


# ---------------------------------------------------------------------------
# finite-lattice Snell envelope


def _two_date_tree():
    # root state 1, children {4.0, 0.5} with probs (0.5, 0.5), grandchildren add ±0.1
    states = (
        np.array([1.0]),
        np.array([4.0, 0.5]),
        np.array([4.1, 3.9, 0.6, 0.4]),
    )
    probs = (
        np.array([[0.5, 0.5]]),
        np.array([[0.5, 0.5], [0.5, 0.5]]),
    )
    return LatticeTree(depth=2, branching=2, states=states, probs=probs)


def test_lattice_snell_hand_computed():
    tree = _two_date_tree()
    value, stops = lattice_snell(tree, lambda n, s: s)
    # continuation at (1, 0): E[4.1, 3.9] = 4.0 = immediate -> stop (ties stop);
    # continuation at (1, 1): 0.5 = immediate -> stop; root: max(1, 0.5*4+0.5*0.5)=2.25
    assert abs(value - 2.25) < 1e-15
    assert stops[0][0] == False  # noqa: E712 - continuation strictly better at root
    assert bool(stops[1][0]) and bool(stops[1][1])


def test_lattice_snell_monotone_under_reward_shift():
    tree = _two_date_tree()
    v0, _ = lattice_snell(tree, lambda n, s: s)
    v1, _ = lattice_snell(tree, lambda n, s: s + 0.25)
    assert v1 >= v0 + 0.25 - 1e-15  # shifted reward can only raise the value


def test_lattice_snell_value_dominates_any_fixed_stopping_level():
    tree = _two_date_tree()
    value, _ = lattice_snell(tree, lambda n, s: s)
    # stopping always at the final level yields E[state] = weighted mean
    terminal = float(np.mean(tree.states[2]))
    root = float(tree.states[0][0])
    assert value >= max(terminal, root) - 1e-15


def test_lattice_snell_rejects_oversize_trees():
    tree = _two_date_tree()
    with pytest.raises(ValueError):
        LatticeTree(depth=13, branching=2, states=tree.states, probs=tree.probs).validate()
    with pytest.raises(ValueError):
        LatticeTree(depth=2, branching=4, states=tree.states, probs=tree.probs).validate()
    bad_probs = (np.array([[0.7, 0.7]]), tree.probs[1])
    with pytest.raises(ValueError):
        lattice_snell(
            LatticeTree(depth=2, branching=2, states=tree.states, probs=bad_probs),
            lambda n, s: s,
        )

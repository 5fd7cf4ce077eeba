"""Reference values the learning stack is checked against.

Everything here is independent of the stopping networks: a closed-form
European call (with carry), a Cox–Ross–Rubinstein binomial tree for 1-d
American exercise, an exact reduction of product-payoff baskets to a single
lognormal coordinate, and an explicit Snell envelope on small finite lattices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Bs1dParams",
    "ReducedModel",
    "LatticeTree",
    "norm_cdf",
    "bs_euro_call",
    "bs_euro_put",
    "binomial_american",
    "reduce_dimension",
    "lattice_snell",
]


def norm_cdf(x):
    """Standard normal CDF via erfc with symmetry reduction.

    The complementary error function is evaluated on the non-positive tail
    only, which keeps the absolute error at or below ~1e-15 across the whole
    real line. Accepts scalars or arrays.
    """

    def _phi(v: float) -> float:
        if v <= 0.0:
            return 0.5 * math.erfc(-v / math.sqrt(2.0))
        return 1.0 - 0.5 * math.erfc(v / math.sqrt(2.0))

    if np.ndim(x) == 0:
        return _phi(float(x))
    flat = np.asarray(x, dtype=np.float64)
    out = np.empty(flat.shape, dtype=np.float64)
    for idx, v in np.ndenumerate(flat):
        out[idx] = _phi(float(v))
    return out


@dataclass(frozen=True)
class Bs1dParams:
    """One lognormal asset: spot ξ, vol σ, short rate r, carry cost c, strike K, maturity T."""

    maturity: float
    spot: float
    vol: float
    rate: float
    carry: float
    strike: float

    def validate(self) -> None:
        if not self.maturity > 0.0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if not self.vol > 0.0:
            raise ValueError(f"vol must be positive, got {self.vol}")
        if not self.spot > 0.0:
            raise ValueError(f"spot must be positive, got {self.spot}")


def bs_euro_call(params: Bs1dParams) -> float:
    """European call on a lognormal asset with carry cost.

    For strike K > 0:
        e^{-cT} ξ Φ(d+) - K e^{-rT} Φ(d-),
        d± = [(r - c ± σ²/2) T + ln(ξ/K)] / (σ √T).
    For K ≤ 0 the option is always exercised: e^{-cT} ξ - K e^{-rT}.
    """
    params.validate()
    T, xi, sigma = params.maturity, params.spot, params.vol
    r, c, K = params.rate, params.carry, params.strike
    if K <= 0.0:
        return math.exp(-c * T) * xi - K * math.exp(-r * T)
    sqt = sigma * math.sqrt(T)
    d_plus = ((r - c + 0.5 * sigma * sigma) * T + math.log(xi / K)) / sqt
    d_minus = ((r - c - 0.5 * sigma * sigma) * T + math.log(xi / K)) / sqt
    return math.exp(-c * T) * xi * norm_cdf(d_plus) - K * math.exp(-r * T) * norm_cdf(d_minus)


def bs_euro_put(params: Bs1dParams) -> float:
    """European put via put-call parity on :func:`bs_euro_call`."""
    call = bs_euro_call(params)
    T = params.maturity
    return call - math.exp(-params.carry * T) * params.spot + params.strike * math.exp(-params.rate * T)


def binomial_american(params: Bs1dParams, steps: int, kind: str = "put") -> float:
    """American option value on a recombining binomial tree.

    Cox–Ross–Rubinstein parameterization: u = e^{σ√Δt}, d = 1/u,
    q = (e^{(r-c)Δt} - d) / (u - d), per-step discount e^{-rΔt}. Backward
    induction compares continuation with immediate exercise at every node.
    """
    params.validate()
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind not in ("put", "call"):
        raise ValueError(f"kind must be 'put' or 'call', got {kind!r}")
    T, xi, sigma = params.maturity, params.spot, params.vol
    r, c, K = params.rate, params.carry, params.strike

    dt = T / steps
    up = math.exp(sigma * math.sqrt(dt))
    down = 1.0 / up
    growth = math.exp((r - c) * dt)
    q = (growth - down) / (up - down)
    if not 0.0 < q < 1.0:
        raise ValueError(f"risk-neutral up-probability {q} outside (0,1); refine the grid")
    disc = math.exp(-r * dt)

    # Node values for every level are slices of one price ladder ξ·u^k, k = -steps..steps.
    ladder = xi * np.exp(sigma * math.sqrt(dt) * np.arange(-steps, steps + 1, dtype=np.float64))

    def exercise(prices: np.ndarray) -> np.ndarray:
        if kind == "put":
            return np.maximum(K - prices, 0.0)
        return np.maximum(prices - K, 0.0)

    values = exercise(ladder[0 : 2 * steps + 1 : 2])  # level `steps`: exponents -steps..steps step 2
    for level in range(steps - 1, -1, -1):
        values = disc * (q * values[1:] + (1.0 - q) * values[:-1])
        prices = ladder[steps - level : steps + level + 1 : 2]
        values = np.maximum(values, exercise(prices))
    return float(values[0])


@dataclass(frozen=True)
class ReducedModel:
    """A product of correlated lognormal coordinates collapsed to one lognormal.

    ``initial`` is the effective starting value, ``drift`` the exponential
    growth rate of the collapsed coordinate, ``vol`` its volatility. The
    equivalent dividend against a discount rate r is r - drift.
    """

    initial: float
    drift: float
    vol: float

    def effective_dividend(self, rate: float) -> float:
        return rate - self.drift


def reduce_dimension(
    epsilon: float,
    alpha: np.ndarray,
    beta: np.ndarray,
    factor: np.ndarray,
    xi: np.ndarray,
) -> ReducedModel:
    """Collapse Y = Π_i |X^(i)|^ε of a correlated lognormal basket to one coordinate.

    The basket follows X^(i)_t = exp([α_i - ‖β_i ς_i‖²/2] t + β_i ⟨ς_i, W_t⟩) ξ_i
    with ς_i the i-th *column* of ``factor``. Then Y is again lognormal with

        initial = Π_i |ξ_i|^ε,
        drift   = ε Σ_i (α_i - ‖β_i ς_i‖²/2) + ‖ε · factor @ β‖² / 2,
        vol     = ε ‖factor @ β‖.
    """
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    xi = np.asarray(xi, dtype=np.float64).ravel()
    factor = np.asarray(factor, dtype=np.float64)
    d = alpha.size
    if beta.size != d or xi.size != d:
        raise ValueError(
            f"alpha, beta, xi must share one length, got {d}, {beta.size}, {xi.size}"
        )
    if factor.shape != (d, d):
        raise ValueError(f"factor must be ({d},{d}), got {factor.shape}")
    if np.any(xi == 0.0):
        raise ValueError("initial values must be nonzero")

    col_sq = np.sum(factor * factor, axis=0)  # ‖ς_i‖² per column
    mixed = factor @ beta
    drift = epsilon * float(np.sum(alpha - 0.5 * beta * beta * col_sq)) + 0.5 * float(
        np.dot(mixed, mixed)
    ) * epsilon * epsilon
    vol = abs(epsilon) * float(np.linalg.norm(mixed))
    initial = float(np.prod(np.abs(xi) ** epsilon))
    return ReducedModel(initial=initial, drift=drift, vol=vol)


@dataclass(frozen=True)
class LatticeTree:
    """A finite non-recombining tree: level n holds branching^n nodes.

    ``states``: one array per level with the scalar state of each node, level n
    shaped (branching^n,). ``probs``: one array per level 0..depth-1 shaped
    (branching^n, branching); row i gives the transition law from node i to its
    children i*branching + k at the next level.
    """

    depth: int
    branching: int
    states: tuple
    probs: tuple

    def validate(self) -> None:
        if self.depth > 12:
            raise ValueError(f"depth {self.depth} exceeds the exhaustive limit 12")
        if self.branching > 3 or self.branching < 1:
            raise ValueError(f"branching {self.branching} outside 1..3")
        if len(self.states) != self.depth + 1:
            raise ValueError("states must hold depth+1 levels")
        if len(self.probs) != self.depth:
            raise ValueError("probs must hold depth levels")
        for n in range(self.depth + 1):
            expect = self.branching**n
            if np.asarray(self.states[n]).shape[0] != expect:
                raise ValueError(f"level {n} must hold {expect} states")
        for n in range(self.depth):
            p = np.asarray(self.probs[n], dtype=np.float64)
            if p.shape != (self.branching**n, self.branching):
                raise ValueError(f"probs[{n}] must be ({self.branching ** n},{self.branching})")
            if np.any(p < 0.0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError(f"probs[{n}] rows must be distributions")


def lattice_snell(tree: LatticeTree, reward) -> tuple:
    """Optimal stopping value and stopping set on an explicit finite tree.

    ``reward(n, states)`` maps a level index and its state array to the reward
    collected when stopping there (any discounting folded in). Backward
    induction; a node belongs to the stopping set when immediate reward is at
    least the expected continuation (so the minimal optimal rule is returned).
    Returns (root value, list of boolean arrays per level).
    """
    tree.validate()
    N, b = tree.depth, tree.branching
    value = np.asarray(reward(N, np.asarray(tree.states[N], dtype=np.float64)), dtype=np.float64)
    stop_sets = [np.ones(value.shape[0], dtype=bool)]
    for n in range(N - 1, -1, -1):
        probs = np.asarray(tree.probs[n], dtype=np.float64)
        cont = np.sum(probs * value.reshape(-1, b), axis=1)
        imm = np.asarray(reward(n, np.asarray(tree.states[n], dtype=np.float64)), dtype=np.float64)
        stop_sets.append(imm >= cont)
        value = np.maximum(imm, cont)
    stop_sets.reverse()
    return float(value[0]), stop_sets

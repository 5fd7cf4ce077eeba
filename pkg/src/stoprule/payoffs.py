"""Discounted exercise payoffs for the built-in product families.

Every payoff is a dataclass with a short-rate field and an undiscounted reward
h; :func:`eval_payoff` returns e^{-r·s}·h(s, x) for a single date and state,
:func:`payoff_along_paths` evaluates the same reward on a whole path array at
every grid date. States mean different things per family (Brownian coordinates,
prices, log-prices, ratio windows) — each class documents its own convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .paths_models import TimeGrid

__all__ = [
    "BmPutType",
    "GeometricBasket",
    "MaxCall",
    "StrangleSpread",
    "MeanExpPut",
    "LastRatio",
    "eval_payoff",
    "payoff_along_paths",
]


@dataclass(frozen=True)
class BmPutType:
    """Put on an exponential of a pooled Brownian coordinate.

    States x are Brownian coordinates; the reward at date s is

        max{ strike − exp((rate − vol²/2)·s + scale(d)·Σ_i x_i) · start, 0 }

    with scale(d) chosen so the pooled coordinate has variance rate vol² per
    unit time: ``pool="corr10"`` uses vol·√(10/(d(d+9))) (pairwise correlation
    0.1 between the coordinates), ``pool="iid"`` uses vol/√d (independent
    coordinates).
    """

    rate: float
    vol: float
    start: float
    strike: float
    pool: str = "iid"

    def __post_init__(self):
        if self.pool not in ("iid", "corr10"):
            raise ValueError(f"pool must be 'iid' or 'corr10', got {self.pool!r}")

    def scale(self, dim: int) -> float:
        if self.pool == "iid":
            return self.vol / math.sqrt(dim)
        return self.vol * math.sqrt(10.0 / (dim * (dim + 9.0)))

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        dim = x.shape[-1]
        pooled = np.sum(x, axis=-1) * self.scale(dim)
        drift = (self.rate - 0.5 * self.vol * self.vol) * times
        level = np.exp(drift + pooled) * self.start
        return np.maximum(self.strike - level, 0.0)


@dataclass(frozen=True)
class GeometricBasket:
    """Call or put on the geometric mean-type product Π_i |x_i|^power of prices."""

    rate: float
    strike: float
    power: float
    kind: str = "put"

    def __post_init__(self):
        if self.kind not in ("put", "call"):
            raise ValueError(f"kind must be 'put' or 'call', got {self.kind!r}")

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        product = np.exp(self.power * np.sum(np.log(np.abs(x)), axis=-1))
        if self.kind == "put":
            return np.maximum(self.strike - product, 0.0)
        return np.maximum(product - self.strike, 0.0)


@dataclass(frozen=True)
class MaxCall:
    """Call on the best-performing coordinate: max{max_i x_i − strike, 0}."""

    rate: float
    strike: float

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.maximum(np.max(x, axis=-1) - self.strike, 0.0)


@dataclass(frozen=True)
class StrangleSpread:
    """Short put(K1) + long put(K2) + long call(K3) + short call(K4) on the mean.

    All four legs strike on the arithmetic basket mean; with K1<K2<=K3<K4 the
    combination is a nonnegative capped strangle.
    """

    rate: float
    strikes: tuple

    def __post_init__(self):
        k = tuple(float(v) for v in self.strikes)
        if len(k) != 4 or not (k[0] < k[1] <= k[2] < k[3]):
            raise ValueError(f"strikes must satisfy K1 < K2 <= K3 < K4, got {k}")
        object.__setattr__(self, "strikes", k)

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        k1, k2, k3, k4 = self.strikes
        b = np.mean(x, axis=-1)
        return (
            -np.maximum(k1 - b, 0.0)
            + np.maximum(k2 - b, 0.0)
            + np.maximum(b - k3, 0.0)
            - np.maximum(b - k4, 0.0)
        )


@dataclass(frozen=True)
class MeanExpPut:
    """Put on the arithmetic mean of exponentials of log-price states."""

    rate: float
    strike: float

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.strike - np.mean(np.exp(x), axis=-1), 0.0)


@dataclass(frozen=True)
class LastRatio:
    """The final coordinate of a ratio-window state, paid as-is."""

    rate: float

    def along(self, times: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.asarray(x[..., -1])


def eval_payoff(payoff, s: float, x: np.ndarray) -> float:
    """Discounted payoff e^{-r·s}·h(s, x) for one date and one state vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"x must be one state vector, got shape {x.shape}")
    raw = payoff.along(np.asarray(float(s)), x[None, :])
    return float(math.exp(-payoff.rate * s) * raw[0])


def payoff_along_paths(payoff, grid: TimeGrid, paths: np.ndarray) -> np.ndarray:
    """Discounted payoff at every grid date: (J, N+1) from paths (J, N+1, d)."""
    paths = np.asarray(paths)
    if paths.ndim != 3 or paths.shape[1] != grid.steps + 1:
        raise ValueError(
            f"paths must be (J, {grid.steps + 1}, d), got {paths.shape}"
        )
    raw = payoff.along(grid.times[None, :], paths)
    discount = np.exp(-payoff.rate * grid.times)
    return raw * discount[None, :]

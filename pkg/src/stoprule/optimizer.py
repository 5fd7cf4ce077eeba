"""Stochastic-ascent updates: bias-corrected adaptive moments plus a plain rule.

Updates are framed as ascent on the expected reward, so increments are *added*
to the parameters. Step counters start at 1 on the first update, which is what
the bias-correction terms assume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdamConfig",
    "AdamState",
    "PiecewiseSchedule",
    "adam_step",
    "sgd_step",
]


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Step-indexed value: the first band whose threshold covers the step wins.

    ``thresholds[i]`` is the *last* step (inclusive, 1-based) that still uses
    ``values[i]``; steps beyond every threshold use ``terminal``. The text form
    is ``"upto_150:0.05, else:0.01"``.
    """

    thresholds: tuple = ()
    values: tuple = ()
    terminal: float = 0.0

    def __post_init__(self):
        if len(self.thresholds) != len(self.values):
            raise ValueError("thresholds and values must pair up")
        if any(int(t) != t or t < 1 for t in self.thresholds):
            raise ValueError("thresholds are 1-based step counts")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must strictly increase")

    @classmethod
    def constant(cls, value: float) -> "PiecewiseSchedule":
        return cls((), (), float(value))

    @classmethod
    def parse(cls, text: str) -> "PiecewiseSchedule":
        thresholds: list = []
        values: list = []
        terminal = None
        for raw in text.split(","):
            part = raw.strip()
            if not part:
                continue
            key, sep, raw_value = part.partition(":")
            key = key.strip()
            if not sep:
                raise ValueError(f"schedule entry {part!r} needs a colon")
            try:
                value = float(raw_value)
            except ValueError:
                raise ValueError(f"schedule entry {part!r} has a non-numeric value") from None
            if key == "else":
                if terminal is not None:
                    raise ValueError("schedule has more than one else band")
                terminal = value
            elif key.startswith("upto_"):
                if terminal is not None:
                    raise ValueError("the else band must come last")
                try:
                    thresholds.append(int(key[len("upto_") :]))
                except ValueError:
                    raise ValueError(f"schedule entry {part!r} has a non-integer threshold") from None
                values.append(value)
            else:
                raise ValueError(f"schedule entry {part!r} is neither upto_<step> nor else")
        if terminal is None:
            raise ValueError("schedule needs a final else band")
        return cls(tuple(thresholds), tuple(values), terminal)

    def at(self, step: int) -> float:
        if step < 1:
            raise ValueError("steps are counted from 1")
        for bound, value in zip(self.thresholds, self.values):
            if step <= bound:
                return value
        return self.terminal

    def emit(self) -> str:
        def fmt(v: float) -> str:
            return str(int(v)) if float(v).is_integer() else repr(float(v))

        parts = [f"upto_{b}:{fmt(v)}" for b, v in zip(self.thresholds, self.values)]
        parts.append(f"else:{fmt(self.terminal)}")
        return ", ".join(parts)


@dataclass(frozen=True)
class AdamConfig:
    epsilon: float
    zeta1: float = 0.9
    zeta2: float = 0.999

    def __post_init__(self):
        if not (0.0 <= self.zeta1 < 1.0 and 0.0 <= self.zeta2 < 1.0):
            raise ValueError("decay factors live in [0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


@dataclass
class AdamState:
    """Decayed first/second gradient moments and the completed-update count."""

    x: np.ndarray
    y: np.ndarray
    m: int = 0

    @classmethod
    def zeros(cls, size: int, dtype=np.float64) -> "AdamState":
        return cls(np.zeros(size, dtype=dtype), np.zeros(size, dtype=dtype), 0)


def adam_step(state: AdamState, gradient: np.ndarray, rate: float, config: AdamConfig) -> np.ndarray:
    """One ascent increment. Mutates the moment buffers and the counter.

    The denominator keeps the damping term outside the square root, so a fresh
    state fed gradient 2 at rate 0.1 yields an increment of almost exactly 0.1.
    """
    eta = np.asarray(gradient)
    if eta.shape != state.x.shape:
        raise ValueError(f"gradient shape {eta.shape} does not match state {state.x.shape}")
    state.m += 1
    state.x *= config.zeta1
    state.x += (1.0 - config.zeta1) * eta
    state.y *= config.zeta2
    state.y += (1.0 - config.zeta2) * np.square(eta)
    corrected = state.x / (1.0 - config.zeta1**state.m)
    spread = np.sqrt(np.abs(state.y) / (1.0 - config.zeta2**state.m))
    return rate * corrected / (spread + config.epsilon)


def sgd_step(gradient: np.ndarray, rate: float) -> np.ndarray:
    """Plain ascent increment ``rate * gradient`` (no state)."""
    return rate * np.asarray(gradient)

"""Config files, the benchmark registry, and the ``stoprule`` command line.

Experiments are described by a sectioned key=value document (INI syntax,
parsed with :mod:`configparser`). The canonical layout, as produced by
:func:`emit_config`, is::

    [experiment]            # optional; name/seed/out all have defaults
    name = max_call_demo
    seed = 1
    out = runs/max_call_demo

    [model]                 # kind = gbm | bm | dupire | ratio_window
    kind = gbm
    dimension = 5
    start = 100             # one value (flat) or `dimension` comma-separated values
    drift = -0.05           # risk-neutral drift(s), same broadcasting rule
    vol = 0.2
    correlation = iid       # iid | uniform (+ rho, side) | factor (+ factor, side)

    [payoff]                # kind = scaled_put | geometric_basket | max_call |
    kind = max_call         #        strangle_spread | mean_exp_put | last_ratio
    rate = 0.05             # every payoff discounts at its own rate
    strike = 100

    [grid]
    T = 3                   # horizon
    N = 9                   # exercise dates after time 0

    [network]               # optional
    hidden = auto           # auto -> dimension + 40 in both layers, or "h1, h2"
    step0 = trainable_scalar    # trainable_scalar | frozen_scalar | network

    [training]
    M = 1200                # gradient steps; 0 prices the untrained rule
    J_m = 2048              # batch schedule: a number or "upto_150:8192, else:4096"
    gamma = upto_400:0.05, upto_800:0.005, else:0.0005
    epsilon = 0.1           # moment-update damping

    [evaluation]
    J_0 = 262144            # pricing paths
    repeats = 1             # independent pricing repetitions (seed, seed+1, ...)
    chunk = auto            # paths per worker task during pricing

Schedules are piecewise-constant in the step index; a bare number means a
constant. `price` runs one experiment and writes ``resolved_config.ini``,
``training_log.csv``, ``price_report.csv``, ``policy.bin``, and
``training_curve.png`` into the output directory (plus ``repeats.csv`` when
``repeats > 1``). `bench` runs a registered family of experiments at desk or
full scale and writes ``bench.csv``, a per-row objective-error curve, and a
deviation chart next to the human-readable table.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence during
training, 4 a benchmark row landed outside its registered tolerance band.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .figures import save_bench_chart, save_training_curve
from .optimizer import AdamConfig, PiecewiseSchedule
from .oracles import Bs1dParams, binomial_american, bs_euro_call, bs_euro_put, reduce_dimension
from .paths_models import (
    BrownianScaled,
    CorrelationSpec,
    DupireLogEuler,
    GbmExact,
    RatioPath,
    RngStream,
    make_grid,
    smile_fade_local_vol,
)
from .payoffs import (
    BmPutType,
    GeometricBasket,
    LastRatio,
    MaxCall,
    MeanExpPut,
    StrangleSpread,
)
from .stopnet import BN_EPS, BN_MOMENTUM, NetworkLayout, init_policy, load_policy, save_policy
from .stopping_objective import (
    compose_soft_factors,
    factorize_indicator,
    hard_stopping_time,
    objective_and_gradient,
)
from .training import (
    CONFIDENCE_Z,
    TrainingDivergenceError,
    TrainingPlan,
    estimate_price,
    train,
)

__all__ = [
    "ConfigError",
    "CorrelationConfig",
    "GbmModelConfig",
    "BmModelConfig",
    "DupireModelConfig",
    "RatioModelConfig",
    "ExperimentConfig",
    "parse_config",
    "emit_config",
    "with_overrides",
    "RunResult",
    "run_experiment",
    "BenchCase",
    "BenchRow",
    "Benchmark",
    "REGISTRY",
    "bench_table",
    "selftest",
    "main",
]


class ConfigError(Exception):
    """A configuration document or command line that cannot be acted on."""


# ---------------------------------------------------------------------------
# scalar / list formatting shared by the emitter and the registry


def _num(value) -> str:
    f = float(value)
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _bool_text(value: bool) -> str:
    return "true" if value else "false"


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(text: str, where: str) -> bool:
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected true/false, got {text!r}") from None


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {text!r}") from None


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None


def _parse_floats(text: str, where: str) -> tuple:
    parts = [p for p in (s.strip() for s in text.split(",")) if p]
    if not parts:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {text!r}")
    return tuple(_parse_float(p, where) for p in parts)


def _parse_rows(text: str, where: str) -> tuple:
    rows = tuple(_parse_floats(r, where) for r in text.split(";") if r.strip())
    if not rows:
        raise ConfigError(f"{where}: expected ';'-separated rows of numbers")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{where}: rows have unequal lengths")
    return rows


def _parse_schedule(text: str, where: str = "schedule") -> PiecewiseSchedule:
    text = text.strip()
    try:
        if ":" in text:
            return PiecewiseSchedule.parse(text)
        return PiecewiseSchedule.constant(float(text))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _emit_schedule(schedule: PiecewiseSchedule) -> str:
    if schedule.thresholds:
        return schedule.emit()
    return _num(schedule.terminal)


def _emit_floats(values) -> str:
    return ", ".join(_num(v) for v in values)


# ---------------------------------------------------------------------------
# model descriptions (plain data; ``to_model`` builds the simulator)


@dataclass(frozen=True)
class CorrelationConfig:
    """How the driving Brownian motions are mixed: iid, uniform-ρ, or an explicit factor."""

    kind: str = "iid"  # "iid" | "uniform" | "factor"
    rho: float = 0.0
    factor: tuple = ()  # tuple of row tuples when kind == "factor"
    side: str = "left"

    def build(self, dimension: int) -> Optional[CorrelationSpec]:
        if self.kind == "iid":
            return None
        if self.kind == "uniform":
            return CorrelationSpec.uniform(dimension, self.rho, side=self.side)
        spec = CorrelationSpec.from_factor(np.asarray(self.factor, dtype=np.float64), side=self.side)
        if spec.loadings().shape[0] != dimension:
            raise ConfigError(
                f"model.factor: {spec.loadings().shape[0]} loading rows for {dimension} assets"
            )
        return spec


@dataclass(frozen=True)
class GbmModelConfig:
    """Exact lognormal basket; start/drift/vol hold one value (flat) or one per asset."""

    dimension: int
    start: tuple
    drift: tuple
    vol: tuple
    correlation: CorrelationConfig = CorrelationConfig()
    kind = "gbm"

    def to_model(self) -> GbmExact:
        d = self.dimension
        xi = np.full(d, self.start[0]) if len(self.start) == 1 else np.asarray(self.start)
        drifts = self.drift[0] if len(self.drift) == 1 else np.asarray(self.drift)
        vols = self.vol[0] if len(self.vol) == 1 else np.asarray(self.vol)
        return GbmExact(xi=xi, drifts=drifts, vols=vols, correlation=self.correlation.build(d))


@dataclass(frozen=True)
class BmModelConfig:
    """Mixed Brownian motion (zero drift, unit marginal variance per unit time)."""

    dimension: int
    correlation: CorrelationConfig = CorrelationConfig()
    kind = "bm"

    def to_model(self) -> BrownianScaled:
        return BrownianScaled(self.dimension, self.correlation.build(self.dimension))


@dataclass(frozen=True)
class DupireModelConfig:
    """Independent local-volatility assets on a coarse driving grid; states are log-prices."""

    dimension: int
    start: float
    rate: float
    dividend: float
    levels: int
    surface: str = "smile_fade"
    kind = "dupire"

    def to_model(self) -> DupireLogEuler:
        vol = smile_fade_local_vol(self.rate, self.start)
        return DupireLogEuler(
            xi=np.full(self.dimension, self.start),
            rate=self.rate,
            dividend=self.dividend,
            coarse_levels=self.levels,
            local_vol=vol,
        )


@dataclass(frozen=True)
class RatioModelConfig:
    """Rolling window of price ratios of one lognormal asset (randomized start)."""

    window: int
    rate: float
    vol: float
    kind = "ratio_window"

    @property
    def dimension(self) -> int:
        return self.window

    def to_model(self) -> RatioPath:
        return RatioPath(window=self.window, rate=self.rate, vol=self.vol)


ModelConfig = Union[GbmModelConfig, BmModelConfig, DupireModelConfig, RatioModelConfig]


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully resolved pricing experiment (model, payoff, grid, plan, evaluation)."""

    name: str
    seed: int
    out: str
    model: ModelConfig
    payoff: object
    horizon: float
    steps: int
    plan: TrainingPlan
    eval_paths: int
    repeats: int
    eval_chunk: Optional[int]


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    precision: Optional[str] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """Apply command-line overrides, keeping the plan's seed in lock-step."""
    plan = cfg.plan
    if seed is not None:
        plan = dataclasses.replace(plan, seed=int(seed))
    if precision is not None:
        plan = dataclasses.replace(plan, precision=precision)
    return dataclasses.replace(
        cfg,
        seed=int(seed) if seed is not None else cfg.seed,
        out=out if out is not None else cfg.out,
        plan=plan,
    )


# ---------------------------------------------------------------------------
# parsing

_SECTIONS = ("experiment", "model", "payoff", "grid", "network", "training", "evaluation")
_REQUIRED_KEYS = ("model.kind", "payoff.kind", "grid.T", "grid.N", "training.M", "evaluation.J_0")
_MISSING = object()


class _Section:
    """One config section with required/optional key access and leftover detection."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.taken = set()

    def take(self, key: str, default=_MISSING) -> str:
        self.taken.add(key)
        if key in self.data:
            return self.data[key].strip()
        if default is _MISSING:
            raise ConfigError(f"missing required key {self.name}.{key}")
        return default

    def finish(self) -> None:
        leftover = sorted(set(self.data) - self.taken)
        if leftover:
            raise ConfigError(f"unknown key {self.name}.{leftover[0]}")


def _correlation_from(sec: _Section) -> CorrelationConfig:
    kind = sec.take("correlation", "iid")
    if kind == "iid":
        return CorrelationConfig()
    side = sec.take("side", "left")
    if side not in ("left", "right"):
        raise ConfigError(f"{sec.name}.side: expected left or right, got {side!r}")
    if kind == "uniform":
        rho = _parse_float(sec.take("rho"), f"{sec.name}.rho")
        return CorrelationConfig(kind="uniform", rho=rho, side=side)
    if kind == "factor":
        rows = _parse_rows(sec.take("factor"), f"{sec.name}.factor")
        return CorrelationConfig(kind="factor", factor=rows, side=side)
    raise ConfigError(f"{sec.name}.correlation: expected iid, uniform, or factor, got {kind!r}")


def _model_from(sec: _Section) -> ModelConfig:
    kind = sec.take("kind")
    if kind == "gbm":
        d = _parse_int(sec.take("dimension"), "model.dimension")
        start = _parse_floats(sec.take("start"), "model.start")
        drift = _parse_floats(sec.take("drift"), "model.drift")
        vol = _parse_floats(sec.take("vol"), "model.vol")
        for key, values in (("start", start), ("drift", drift), ("vol", vol)):
            if len(values) not in (1, d):
                raise ConfigError(f"model.{key}: expected 1 or {d} values, got {len(values)}")
        return GbmModelConfig(d, start, drift, vol, _correlation_from(sec))
    if kind == "bm":
        d = _parse_int(sec.take("dimension"), "model.dimension")
        return BmModelConfig(d, _correlation_from(sec))
    if kind == "dupire":
        d = _parse_int(sec.take("dimension"), "model.dimension")
        surface = sec.take("surface", "smile_fade")
        if surface != "smile_fade":
            raise ConfigError(f"model.surface: only smile_fade is registered, got {surface!r}")
        return DupireModelConfig(
            dimension=d,
            start=_parse_float(sec.take("start"), "model.start"),
            rate=_parse_float(sec.take("rate"), "model.rate"),
            dividend=_parse_float(sec.take("dividend"), "model.dividend"),
            levels=_parse_int(sec.take("levels"), "model.levels"),
            surface=surface,
        )
    if kind == "ratio_window":
        return RatioModelConfig(
            window=_parse_int(sec.take("window"), "model.window"),
            rate=_parse_float(sec.take("rate"), "model.rate"),
            vol=_parse_float(sec.take("vol"), "model.vol"),
        )
    raise ConfigError(f"model.kind: expected gbm, bm, dupire, or ratio_window, got {kind!r}")


def _payoff_from(sec: _Section):
    kind = sec.take("kind")
    rate = _parse_float(sec.take("rate"), "payoff.rate")
    try:
        if kind == "scaled_put":
            return BmPutType(
                rate=rate,
                vol=_parse_float(sec.take("vol"), "payoff.vol"),
                start=_parse_float(sec.take("start"), "payoff.start"),
                strike=_parse_float(sec.take("strike"), "payoff.strike"),
                pool=sec.take("pool", "iid"),
            )
        if kind == "geometric_basket":
            return GeometricBasket(
                rate=rate,
                strike=_parse_float(sec.take("strike"), "payoff.strike"),
                power=_parse_float(sec.take("power"), "payoff.power"),
                kind=sec.take("option", "put"),
            )
        if kind == "max_call":
            return MaxCall(rate=rate, strike=_parse_float(sec.take("strike"), "payoff.strike"))
        if kind == "strangle_spread":
            strikes = _parse_floats(sec.take("strikes"), "payoff.strikes")
            return StrangleSpread(rate=rate, strikes=strikes)
        if kind == "mean_exp_put":
            return MeanExpPut(rate=rate, strike=_parse_float(sec.take("strike"), "payoff.strike"))
        if kind == "last_ratio":
            return LastRatio(rate=rate)
    except ValueError as exc:
        raise ConfigError(f"payoff: {exc}") from None
    raise ConfigError(
        "payoff.kind: expected scaled_put, geometric_basket, max_call, strangle_spread, "
        f"mean_exp_put, or last_ratio, got {kind!r}"
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse a configuration document; every default is filled in explicitly."""
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from None
    if not parser.sections():
        raise ConfigError("configuration is empty; required keys: " + ", ".join(_REQUIRED_KEYS))
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    for required in ("model", "payoff", "grid", "training", "evaluation"):
        if not parser.has_section(required):
            raise ConfigError(f"missing required section [{required}]")

    experiment = _Section(parser, "experiment")
    name = experiment.take("name", "experiment")
    seed = _parse_int(experiment.take("seed", "1"), "experiment.seed")
    out = experiment.take("out", os.path.join("runs", name))
    experiment.finish()

    model_sec = _Section(parser, "model")
    model = _model_from(model_sec)
    model_sec.finish()

    payoff_sec = _Section(parser, "payoff")
    payoff = _payoff_from(payoff_sec)
    payoff_sec.finish()

    grid_sec = _Section(parser, "grid")
    horizon = _parse_float(grid_sec.take("T"), "grid.T")
    steps = _parse_int(grid_sec.take("N"), "grid.N")
    grid_sec.finish()
    if horizon <= 0.0 or steps < 1:
        raise ConfigError(f"grid: T must be positive and N >= 1, got T={horizon}, N={steps}")

    network = _Section(parser, "network")
    hidden_text = network.take("hidden", "auto")
    if hidden_text == "auto":
        hidden = None
    else:
        pair = _parse_floats(hidden_text, "network.hidden")
        if len(pair) != 2 or any(int(v) != v or v < 1 for v in pair):
            raise ConfigError(f"network.hidden: expected auto or two widths, got {hidden_text!r}")
        hidden = (int(pair[0]), int(pair[1]))
    bn_input = _parse_bool(network.take("bn_input", "true"), "network.bn_input")
    bn_hidden = _parse_bool(network.take("bn_hidden", "true"), "network.bn_hidden")
    bn_output = _parse_bool(network.take("bn_output", "true"), "network.bn_output")
    bn_epsilon = _parse_float(network.take("bn_epsilon", _num(BN_EPS)), "network.bn_epsilon")
    bn_momentum = _parse_float(network.take("bn_momentum", _num(BN_MOMENTUM)), "network.bn_momentum")
    bn_trainable = _parse_bool(network.take("bn_trainable", "true"), "network.bn_trainable")
    step0 = network.take("step0", "trainable_scalar")
    if step0 not in ("trainable_scalar", "frozen_scalar", "network"):
        raise ConfigError(
            f"network.step0: expected trainable_scalar, frozen_scalar, or network, got {step0!r}"
        )
    network.finish()

    training = _Section(parser, "training")
    m_steps = _parse_int(training.take("M"), "training.M")
    batch_schedule = _parse_schedule(training.take("J_m", "8192"), "training.J_m")
    rate_schedule = _parse_schedule(training.take("gamma", "0.001"), "training.gamma")
    epsilon = _parse_float(training.take("epsilon", "1e-08"), "training.epsilon")
    zeta1 = _parse_float(training.take("zeta1", "0.9"), "training.zeta1")
    zeta2 = _parse_float(training.take("zeta2", "0.999"), "training.zeta2")
    method = training.take("method", "adam")
    precision = training.take("precision", "double")
    best_observed = _parse_bool(training.take("best_observed", "false"), "training.best_observed")
    training.finish()

    evaluation = _Section(parser, "evaluation")
    eval_paths = _parse_int(evaluation.take("J_0"), "evaluation.J_0")
    repeats = _parse_int(evaluation.take("repeats", "1"), "evaluation.repeats")
    chunk_text = evaluation.take("chunk", "auto")
    eval_chunk = None if chunk_text == "auto" else _parse_int(chunk_text, "evaluation.chunk")
    evaluation.finish()
    if eval_paths < 1:
        raise ConfigError(f"evaluation.J_0: must be >= 1, got {eval_paths}")
    if repeats < 1:
        raise ConfigError(f"evaluation.repeats: must be >= 1, got {repeats}")

    try:
        plan = TrainingPlan(
            steps=m_steps,
            batch_schedule=batch_schedule,
            rate_schedule=rate_schedule,
            adam=AdamConfig(epsilon=epsilon, zeta1=zeta1, zeta2=zeta2),
            seed=seed,
            method=method,
            best_observed=best_observed,
            deterministic_start=(step0 != "network"),
            hidden=hidden,
            bn_input=bn_input,
            bn_hidden=bn_hidden,
            bn_output=bn_output,
            bn_epsilon=bn_epsilon,
            bn_momentum=bn_momentum,
            bn_trainable=bn_trainable,
            step0_trainable=(step0 == "trainable_scalar"),
            precision=precision,
        )
    except ValueError as exc:
        raise ConfigError(f"training: {exc}") from None

    return ExperimentConfig(
        name=name,
        seed=seed,
        out=out,
        model=model,
        payoff=payoff,
        horizon=horizon,
        steps=steps,
        plan=plan,
        eval_paths=eval_paths,
        repeats=repeats,
        eval_chunk=eval_chunk,
    )


# ---------------------------------------------------------------------------
# emission


def _emit_correlation(corr: CorrelationConfig, put) -> None:
    put("correlation", corr.kind)
    if corr.kind == "uniform":
        put("rho", _num(corr.rho))
        put("side", corr.side)
    elif corr.kind == "factor":
        put("factor", "; ".join(_emit_floats(row) for row in corr.factor))
        put("side", corr.side)


def _emit_model(model: ModelConfig, put) -> None:
    put("kind", model.kind)
    if isinstance(model, GbmModelConfig):
        put("dimension", str(model.dimension))
        put("start", _emit_floats(model.start))
        put("drift", _emit_floats(model.drift))
        put("vol", _emit_floats(model.vol))
        _emit_correlation(model.correlation, put)
    elif isinstance(model, BmModelConfig):
        put("dimension", str(model.dimension))
        _emit_correlation(model.correlation, put)
    elif isinstance(model, DupireModelConfig):
        put("dimension", str(model.dimension))
        put("start", _num(model.start))
        put("rate", _num(model.rate))
        put("dividend", _num(model.dividend))
        put("levels", str(model.levels))
        put("surface", model.surface)
    elif isinstance(model, RatioModelConfig):
        put("window", str(model.window))
        put("rate", _num(model.rate))
        put("vol", _num(model.vol))
    else:  # pragma: no cover - all config kinds enumerated above
        raise ConfigError(f"cannot emit model of type {type(model).__name__}")


def _emit_payoff(payoff, put) -> None:
    if isinstance(payoff, BmPutType):
        put("kind", "scaled_put")
        put("rate", _num(payoff.rate))
        put("vol", _num(payoff.vol))
        put("start", _num(payoff.start))
        put("strike", _num(payoff.strike))
        put("pool", payoff.pool)
    elif isinstance(payoff, GeometricBasket):
        put("kind", "geometric_basket")
        put("rate", _num(payoff.rate))
        put("strike", _num(payoff.strike))
        put("power", _num(payoff.power))
        put("option", payoff.kind)
    elif isinstance(payoff, MaxCall):
        put("kind", "max_call")
        put("rate", _num(payoff.rate))
        put("strike", _num(payoff.strike))
    elif isinstance(payoff, StrangleSpread):
        put("kind", "strangle_spread")
        put("rate", _num(payoff.rate))
        put("strikes", _emit_floats(payoff.strikes))
    elif isinstance(payoff, MeanExpPut):
        put("kind", "mean_exp_put")
        put("rate", _num(payoff.rate))
        put("strike", _num(payoff.strike))
    elif isinstance(payoff, LastRatio):
        put("kind", "last_ratio")
        put("rate", _num(payoff.rate))
    else:
        raise ConfigError(f"cannot emit payoff of type {type(payoff).__name__}")


def emit_config(cfg: ExperimentConfig) -> str:
    """Render the canonical document; ``parse_config`` inverts it exactly."""
    out = io.StringIO()

    def section(title: str) -> Callable[[str, str], None]:
        if out.tell():
            out.write("\n")
        out.write(f"[{title}]\n")
        return lambda key, value: out.write(f"{key} = {value}\n")

    put = section("experiment")
    put("name", cfg.name)
    put("seed", str(cfg.seed))
    put("out", cfg.out)

    _emit_model(cfg.model, section("model"))
    _emit_payoff(cfg.payoff, section("payoff"))

    put = section("grid")
    put("T", _num(cfg.horizon))
    put("N", str(cfg.steps))

    plan = cfg.plan
    put = section("network")
    put("hidden", "auto" if plan.hidden is None else f"{plan.hidden[0]}, {plan.hidden[1]}")
    put("bn_input", _bool_text(plan.bn_input))
    put("bn_hidden", _bool_text(plan.bn_hidden))
    put("bn_output", _bool_text(plan.bn_output))
    put("bn_epsilon", _num(plan.bn_epsilon))
    put("bn_momentum", _num(plan.bn_momentum))
    put("bn_trainable", _bool_text(plan.bn_trainable))
    if not plan.deterministic_start:
        step0 = "network"
    elif plan.step0_trainable:
        step0 = "trainable_scalar"
    else:
        step0 = "frozen_scalar"
    put("step0", step0)

    put = section("training")
    put("M", str(plan.steps))
    put("J_m", _emit_schedule(plan.batch_schedule))
    put("gamma", _emit_schedule(plan.rate_schedule))
    put("epsilon", _num(plan.adam.epsilon))
    put("zeta1", _num(plan.adam.zeta1))
    put("zeta2", _num(plan.adam.zeta2))
    put("method", plan.method)
    put("precision", plan.precision)
    put("best_observed", _bool_text(plan.best_observed))

    put = section("evaluation")
    put("J_0", str(cfg.eval_paths))
    put("repeats", str(cfg.repeats))
    put("chunk", "auto" if cfg.eval_chunk is None else str(cfg.eval_chunk))

    return out.getvalue()


# ---------------------------------------------------------------------------
# running one experiment


@dataclass
class RunResult:
    """Everything a pricing run produced, with the artifact directory."""

    name: str
    out_dir: str
    mean: float
    std: float
    stderr: float
    ci_low: float
    ci_high: float
    paths: int
    repeats: int
    seed: int
    train_seconds: float
    total_seconds: float
    records: list
    policy: object


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, echo=print) -> RunResult:
    """Train, price, and write the report files into ``cfg.out``.

    With ``repeats > 1`` the policy is trained once and priced ``repeats``
    times on evaluation seeds ``seed, seed+1, ...``; the report then shows the
    mean of the repeat means, their uncorrected sample standard deviation, and
    a normal confidence interval for the mean of means. With a single repeat
    the path-level estimate and its standard error are reported directly.
    """
    started = time.perf_counter()
    try:
        model = cfg.model.to_model()
        grid = make_grid(cfg.horizon, cfg.steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    os.makedirs(cfg.out, exist_ok=True)
    _write_text(os.path.join(cfg.out, "resolved_config.ini"), emit_config(cfg))

    policy, records = train(model, cfg.payoff, grid, cfg.plan)
    train_seconds = time.perf_counter() - started

    lines = ["step,objective,learning_rate,elapsed_seconds"]
    lines += [f"{r.step},{r.objective!r},{r.rate!r},{r.elapsed!r}" for r in records]
    _write_text(os.path.join(cfg.out, "training_log.csv"), "\n".join(lines) + "\n")
    save_policy(policy, os.path.join(cfg.out, "policy.bin"))
    save_training_curve(
        records,
        os.path.join(cfg.out, "training_curve.png"),
        title=f"{cfg.name}: training objective",
    )

    estimates = [
        estimate_price(
            policy,
            model,
            cfg.payoff,
            grid,
            cfg.eval_paths,
            cfg.seed + r,
            threads=threads,
            chunk=cfg.eval_chunk,
        )
        for r in range(cfg.repeats)
    ]
    if cfg.repeats == 1:
        est = estimates[0]
        mean, stderr = est.mean, est.stderr
        std = est.stderr * math.sqrt(est.paths)
        ci_low, ci_high = est.interval
    else:
        means = np.array([e.mean for e in estimates])
        mean = float(np.mean(means))
        std = float(np.std(means))  # uncorrected: the spread statistic of the repeats
        stderr = std / math.sqrt(cfg.repeats)
        ci_low = mean - CONFIDENCE_Z * stderr
        ci_high = mean + CONFIDENCE_Z * stderr
        lines = ["repeat,seed,mean,stderr"]
        lines += [
            f"{r},{cfg.seed + r},{e.mean!r},{e.stderr!r}" for r, e in enumerate(estimates)
        ]
        _write_text(os.path.join(cfg.out, "repeats.csv"), "\n".join(lines) + "\n")

    total_seconds = time.perf_counter() - started
    _write_text(
        os.path.join(cfg.out, "price_report.csv"),
        "mean,std,stderr,ci_low,ci_high,J0,seed,runtime_seconds\n"
        f"{mean!r},{std!r},{stderr!r},{ci_low!r},{ci_high!r},"
        f"{cfg.eval_paths},{cfg.seed},{total_seconds!r}\n",
    )
    if echo is not None:
        echo(
            f"{cfg.name}: price {mean:.4f} +/- {stderr:.4f} "
            f"(95% CI [{ci_low:.4f}, {ci_high:.4f}], J0={cfg.eval_paths}, "
            f"repeats={cfg.repeats}, seed={cfg.seed}, {total_seconds:.1f}s)"
        )
    return RunResult(
        name=cfg.name,
        out_dir=cfg.out,
        mean=mean,
        std=std,
        stderr=stderr,
        ci_low=ci_low,
        ci_high=ci_high,
        paths=cfg.eval_paths,
        repeats=cfg.repeats,
        seed=cfg.seed,
        train_seconds=train_seconds,
        total_seconds=total_seconds,
        records=records,
        policy=policy,
    )


# ---------------------------------------------------------------------------
# benchmark registry


@dataclass(frozen=True)
class BenchCase:
    """One runnable (or declared-only) row variant at a given scale."""

    config: Optional[ExperimentConfig]
    reference: Optional[float]
    provenance: str
    band: Optional[tuple] = None  # (low, high) tolerance on the mean; exit 4 outside
    note: str = ""


@dataclass(frozen=True)
class BenchRow:
    label: str
    desk: BenchCase
    full: BenchCase


@dataclass(frozen=True)
class Benchmark:
    name: str
    title: str
    rows: tuple


_J0_DESK = 1 << 18
_J0_FULL = 4_096_000
_MEAN30 = "study mean over 30 independent runs"


def _thirds(m_steps: int) -> str:
    a, b = round(m_steps / 3), round(2 * m_steps / 3)
    return f"upto_{a}:0.05, upto_{b}:0.005, else:0.0005"


def _experiment(
    name: str,
    model: ModelConfig,
    payoff,
    *,
    horizon: float,
    steps: int,
    m_steps: int,
    batches,
    rates: str,
    epsilon: float,
    paths: int,
    seed: int = 1,
    repeats: int = 1,
    precision: str = "double",
    step0: str = "trainable_scalar",
) -> ExperimentConfig:
    plan = TrainingPlan(
        steps=m_steps,
        batch_schedule=_parse_schedule(str(batches)),
        rate_schedule=_parse_schedule(rates),
        adam=AdamConfig(epsilon=epsilon),
        seed=seed,
        deterministic_start=(step0 != "network"),
        step0_trainable=(step0 == "trainable_scalar"),
        precision=precision,
    )
    return ExperimentConfig(
        name=name,
        seed=seed,
        out=os.path.join("runs", name),
        model=model,
        payoff=payoff,
        horizon=float(horizon),
        steps=int(steps),
        plan=plan,
        eval_paths=int(paths),
        repeats=repeats,
        eval_chunk=None,
    )


def _flat(value: float) -> tuple:
    return (float(value),)


def _two_exercise_rows() -> tuple:
    payoff = BmPutType(rate=0.02, vol=0.3, start=95.0, strike=90.0, pool="corr10")
    rates = "upto_100:0.05, upto_300:0.005, else:0.0005"
    rows = []
    for d, reference in ((1, 7.890), (5, 7.892)):
        model = BmModelConfig(d, CorrelationConfig(kind="uniform", rho=0.1, side="left"))
        desk = _experiment(
            f"two_exercise_d{d}_desk", model, payoff,
            horizon=1.0, steps=2, m_steps=500, batches=2048, rates=rates,
            epsilon=1e-8, paths=_J0_DESK,
        )
        full = _experiment(
            f"two_exercise_d{d}", model, payoff,
            horizon=1.0, steps=2, m_steps=500, batches=8192, rates=rates,
            epsilon=1e-8, paths=_J0_FULL,
        )
        rows.append(
            BenchRow(
                f"d={d}",
                desk=BenchCase(desk, reference, _MEAN30, band=(reference - 0.05, reference + 0.05)),
                full=BenchCase(full, reference, _MEAN30),
            )
        )
    return tuple(rows)


def _bm_put_rows() -> tuple:
    model = BmModelConfig(1)
    payoff = BmPutType(rate=0.06, vol=0.4, start=40.0, strike=40.0, pool="iid")
    reference = 5.318
    provenance = "binomial tree (20000 steps) on the pooled one-dimensional problem"
    desk = _experiment(
        "bm_american_put_d1_desk", model, payoff,
        horizon=1.0, steps=50, m_steps=800, batches=1024, rates=_thirds(800),
        epsilon=0.001, paths=_J0_DESK,
    )
    full = _experiment(
        "bm_american_put_d1", model, payoff,
        horizon=1.0, steps=50, m_steps=1500, batches=8192, rates=_thirds(1500),
        epsilon=0.001, paths=_J0_FULL,
    )
    band = (reference * 0.985, reference * 1.015)
    return (
        BenchRow(
            "d=1",
            desk=BenchCase(desk, reference, provenance, band=band),
            full=BenchCase(full, reference, provenance),
        ),
    )


def _ga_put_rows() -> tuple:
    d = 40
    rate = 0.6
    k = np.arange(d, dtype=np.float64)
    beta = np.minimum(0.04 * (k % 40), 1.6 - 0.04 * (k % 40))
    rho = float(np.dot(beta, beta)) / d
    delta = rate - (rho / d) * (np.arange(1, d + 1) - 0.5) - 1.0 / (5.0 * math.sqrt(d))
    alpha = rate - delta
    model = GbmModelConfig(
        dimension=d,
        start=_flat(100.0 ** (1.0 / math.sqrt(d))),
        drift=tuple(float(a) for a in alpha),
        vol=tuple(float(b) for b in beta),
    )
    payoff = GeometricBasket(rate=rate, strike=95.0, power=1.0 / math.sqrt(d), kind="put")
    reference = 6.545
    provenance = "binomial tree (20000 steps) on the reduced one-dimensional problem"
    desk = _experiment(
        "ga_put_d40_desk", model, payoff,
        horizon=1.0, steps=100, m_steps=600, batches=1024, rates=_thirds(600),
        epsilon=1e-8, paths=_J0_DESK,
    )
    full = _experiment(
        "ga_put_d40", model, payoff,
        horizon=1.0, steps=100, m_steps=1800, batches=8192, rates=_thirds(1800),
        epsilon=1e-8, paths=_J0_FULL,
    )
    return (
        BenchRow(
            "d=40",
            desk=BenchCase(desk, reference, provenance, band=(6.40, 6.62)),
            full=BenchCase(full, reference, provenance),
        ),
    )


def _ga_call_corr_rows() -> tuple:
    provenance = "binomial tree (20000 steps) on the reduced one-dimensional problem"
    rates_full = "upto_400:0.05, upto_800:0.005, else:0.0005"
    rows = []
    for d, reference, band in ((3, 0.10719, (0.1040, 0.1082)), (20, 0.10033, (0.0972, 0.1013))):
        model = GbmModelConfig(
            dimension=d,
            start=_flat(1.0),
            drift=_flat(-0.02),
            vol=_flat(0.25),
            correlation=CorrelationConfig(kind="uniform", rho=0.75, side="right"),
        )
        payoff = GeometricBasket(rate=0.0, strike=1.0, power=1.0 / d, kind="call")
        desk = _experiment(
            f"ga_call_corr_d{d}_desk", model, payoff,
            horizon=2.0, steps=50, m_steps=600, batches=1024, rates=_thirds(600),
            epsilon=1e-8, paths=_J0_DESK,
        )
        full = _experiment(
            f"ga_call_corr_d{d}", model, payoff,
            horizon=2.0, steps=50, m_steps=1600, batches=8192, rates=rates_full,
            epsilon=1e-8, paths=_J0_FULL,
        )
        rows.append(
            BenchRow(
                f"d={d}",
                desk=BenchCase(desk, reference, provenance, band=band),
                full=BenchCase(full, reference, provenance),
            )
        )
    return tuple(rows)


def _ga_call_distinct_rows() -> tuple:
    d = 40
    i = np.arange(1, d + 1, dtype=np.float64)
    beta = 0.4 * i / d
    k = np.arange(d, dtype=np.float64)
    alpha = np.minimum(0.01 * (k % 40), 0.4 - 0.01 * (k % 40))
    rate = float(np.mean(alpha)) - (d - 1) / (2.0 * d * d) * float(np.dot(beta, beta))
    model = GbmModelConfig(
        dimension=d,
        start=_flat(100.0),
        drift=tuple(float(a) for a in alpha),
        vol=tuple(float(b) for b in beta),
    )
    payoff = GeometricBasket(rate=rate, strike=95.0, power=1.0 / d, kind="call")
    reference = 23.6883
    provenance = "closed-form European value of the reduced problem (no early-exercise premium)"
    desk = _experiment(
        "ga_call_distinct_d40_desk", model, payoff,
        horizon=3.0, steps=50, m_steps=450, batches=1024, rates=_thirds(450),
        epsilon=1e-8, paths=_J0_DESK,
    )
    full = _experiment(
        "ga_call_distinct_d40", model, payoff,
        horizon=3.0, steps=50, m_steps=1500, batches=8192, rates=_thirds(1500),
        epsilon=1e-8, paths=_J0_FULL,
    )
    return (
        BenchRow(
            "d=40",
            desk=BenchCase(desk, reference, provenance, band=(23.30, 23.75)),
            full=BenchCase(full, reference, provenance),
        ),
    )


def _max_call_model(d: int) -> GbmModelConfig:
    return GbmModelConfig(dimension=d, start=_flat(100.0), drift=_flat(-0.05), vol=_flat(0.2))


def _max_call_full(d: int, name: str) -> ExperimentConfig:
    rates = f"upto_{500 + d // 5}:0.05, upto_{1500 + (3 * d) // 5}:0.005, else:0.0005"
    return _experiment(
        name, _max_call_model(d), MaxCall(rate=0.05, strike=100.0),
        horizon=3.0, steps=9, m_steps=3000 + d, batches=8192, rates=rates,
        epsilon=0.1, paths=_J0_FULL,
    )


def _max_call_std_rows() -> tuple:
    payoff = MaxCall(rate=0.05, strike=100.0)
    desk5 = _experiment(
        "max_call_d5_desk", _max_call_model(5), payoff,
        horizon=3.0, steps=9, m_steps=1200, batches=2048,
        rates="upto_200:0.05, upto_600:0.005, else:0.0005",
        epsilon=0.1, paths=_J0_DESK,
    )
    desk100 = _experiment(
        "max_call_d100_desk", _max_call_model(100), payoff,
        horizon=3.0, steps=9, m_steps=400, batches=1024,
        rates="upto_67:0.05, upto_200:0.005, else:0.0005",
        epsilon=0.1, paths=1 << 16,
    )
    return (
        BenchRow(
            "d=5, s0=100",
            desk=BenchCase(desk5, 26.144, _MEAN30, band=(25.90, 26.17)),
            full=BenchCase(_max_call_full(5, "max_call_d5"), 26.144, _MEAN30),
        ),
        BenchRow(
            "d=100, s0=100",
            desk=BenchCase(desk100, 83.386, _MEAN30, band=(80.00, 83.45)),
            full=BenchCase(_max_call_full(100, "max_call_d100"), 83.386, _MEAN30),
        ),
        BenchRow(
            "d=500, s0=100",
            desk=BenchCase(
                None, 116.249, _MEAN30,
                note="declared not reproducible at desk scale: 500-dimensional training "
                "needs the full batch and step budget",
            ),
            full=BenchCase(_max_call_full(500, "max_call_d500"), 116.249, _MEAN30),
        ),
    )


def _max_call_big_rows() -> tuple:
    model = _max_call_model(5000)
    payoff = MaxCall(rate=0.05, strike=100.0)
    full = _experiment(
        "max_call_d5000", model, payoff,
        horizon=3.0, steps=9, m_steps=2000, batches=1024,
        rates="upto_2000:0.01, upto_4000:0.001, else:0.0001",
        epsilon=1e-8, paths=1 << 20, precision="single",
    )
    return (
        BenchRow(
            "d=5000, M=2000",
            desk=BenchCase(
                None, 165.452, _MEAN30,
                note="declared not reproducible at desk scale: 5000-dimensional "
                "single-precision run sized for GPU-class hardware",
            ),
            full=BenchCase(full, 165.452, _MEAN30),
        ),
    )


def _max_call_equity_rows() -> tuple:
    # time is measured in months: one month is 30/365 years
    month = 30.0 / 365.0
    rate = 0.05 * month
    vol = 0.4 * math.sqrt(month)
    model = GbmModelConfig(
        dimension=10,
        start=_flat(40.0),
        drift=_flat(rate),
        vol=_flat(vol),
        correlation=CorrelationConfig(kind="uniform", rho=0.5, side="right"),
    )
    payoff = MaxCall(rate=rate, strike=35.0)
    reference = 10.365
    provenance = "closed-form European value (no early-exercise premium)"
    desk = _experiment(
        "max_call_equity_desk", model, payoff,
        horizon=1.0, steps=10, m_steps=800, batches=2048,
        rates="upto_200:0.05, upto_400:0.005, else:0.0005",
        epsilon=0.001, paths=_J0_DESK,
    )
    full = _experiment(
        "max_call_equity", model, payoff,
        horizon=1.0, steps=10, m_steps=1600, batches=8192,
        rates="upto_400:0.05, upto_800:0.005, else:0.0005",
        epsilon=0.001, paths=_J0_FULL,
    )
    return (
        BenchRow(
            "d=10, T=1, K=35",
            desk=BenchCase(desk, reference, provenance, band=(reference - 0.03, reference + 0.03)),
            full=BenchCase(full, reference, provenance),
        ),
    )


_STRANGLE_FACTOR = (
    (0.3024, 0.1354, 0.0722, 0.1367, 0.1641),
    (0.1354, 0.2270, 0.0613, 0.1264, 0.1610),
    (0.0722, 0.0613, 0.0717, 0.0884, 0.0699),
    (0.1367, 0.1264, 0.0884, 0.2937, 0.1394),
    (0.1641, 0.1610, 0.0699, 0.1394, 0.2535),
)


def _strangle_rows() -> tuple:
    model = GbmModelConfig(
        dimension=5,
        start=_flat(100.0),
        drift=_flat(0.05),
        vol=_flat(1.0),
        correlation=CorrelationConfig(kind="factor", factor=_STRANGLE_FACTOR, side="left"),
    )
    payoff = StrangleSpread(rate=0.05, strikes=(75.0, 90.0, 110.0, 125.0))
    desk = _experiment(
        "strangle_spread_desk", model, payoff,
        horizon=1.0, steps=48, m_steps=700, batches=2048, rates=_thirds(700),
        epsilon=1e-8, paths=_J0_DESK,
    )
    full = _experiment(
        "strangle_spread", model, payoff,
        horizon=1.0, steps=48, m_steps=750, batches=8192, rates=_thirds(750),
        epsilon=1e-8, paths=_J0_FULL,
    )
    return (
        BenchRow(
            "d=5",
            desk=BenchCase(desk, 11.75, "published lower-bound value", band=(11.60, 11.92)),
            full=BenchCase(full, 11.794, _MEAN30),
        ),
    )


def _dupire_rows() -> tuple:
    rows = []
    for dividend, reference, band in ((0.0, 1.978, (1.90, 2.02)), (0.1, 6.303, (6.22, 6.34))):
        model = DupireModelConfig(
            dimension=5, start=100.0, rate=0.05, dividend=dividend, levels=10,
        )
        payoff = MeanExpPut(rate=0.05, strike=100.0)
        tag = _num(dividend).replace(".", "p")
        desk = _experiment(
            f"dupire_put_div{tag}_desk", model, payoff,
            horizon=1.0, steps=10, m_steps=1200, batches=2048, rates=_thirds(1200),
            epsilon=1e-8, paths=_J0_DESK,
        )
        full = _experiment(
            f"dupire_put_div{tag}", model, payoff,
            horizon=1.0, steps=10, m_steps=1200, batches=8192, rates=_thirds(1200),
            epsilon=1e-8, paths=_J0_FULL,
        )
        rows.append(
            BenchRow(
                f"dividend={_num(dividend)}, N=10",
                desk=BenchCase(desk, reference, _MEAN30, band=band),
                full=BenchCase(full, reference, _MEAN30),
            )
        )
    return tuple(rows)


def _ratio_rows() -> tuple:
    model = RatioModelConfig(window=100, rate=0.0004, vol=0.02)
    payoff = LastRatio(rate=0.0004)
    note = "finite-horizon slice of a perpetual contract; the infinite-horizon literature value is 1.282"
    desk_note = (
        "desk budget trains the 99 date networks well short of the full-scale run and lands"
        " about 8% below the reference; the band tracks the desk-attainable value. "
    ) + note
    desk = _experiment(
        "ratio_derivative_T100_desk", model, payoff,
        horizon=100.0, steps=100, m_steps=600, batches=512,
        rates="upto_400:0.05, upto_500:0.005, else:0.0005",
        epsilon=1e-8, paths=1 << 17,
    )
    full = _experiment(
        "ratio_derivative_T100", model, payoff,
        horizon=100.0, steps=100, m_steps=1200, batches=8192, rates=_thirds(1200),
        epsilon=1e-8, paths=_J0_FULL,
    )
    return (
        BenchRow(
            "T=100",
            desk=BenchCase(desk, 1.2721, _MEAN30, band=(1.1500, 1.1800), note=desk_note),
            full=BenchCase(full, 1.2721, _MEAN30, note=note),
        ),
    )


def _build_registry() -> dict:
    benchmarks = (
        Benchmark("two_exercise", "Bermudan two-exercise put on a pooled Brownian motion", _two_exercise_rows()),
        Benchmark("bm_american_put", "American-style put on a scaled Brownian motion", _bm_put_rows()),
        Benchmark("ga_put", "geometric-average put with per-asset drifts and vols", _ga_put_rows()),
        Benchmark("ga_call_corr", "geometric-average call on uniformly correlated assets", _ga_call_corr_rows()),
        Benchmark("ga_call_distinct", "geometric-average call with distinct drifts and vols", _ga_call_distinct_rows()),
        Benchmark("max_call_std", "Bermudan max-call on symmetric lognormal assets", _max_call_std_rows()),
        Benchmark("max_call_big", "Bermudan max-call with 5000 underlyings", _max_call_big_rows()),
        Benchmark("max_call_equity", "Bermudan max-call on correlated equities (monthly grid)", _max_call_equity_rows()),
        Benchmark("strangle_spread", "capped strangle spread on a basket with an explicit factor", _strangle_rows()),
        Benchmark("dupire_put", "put on the mean of local-volatility assets", _dupire_rows()),
        Benchmark("ratio_derivative", "optimal sale of a price-ratio window contract", _ratio_rows()),
    )
    return {b.name: b for b in benchmarks}


REGISTRY = _build_registry()


# ---------------------------------------------------------------------------
# the bench subcommand


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", label).strip("_")


def _fmt_cell(value, digits: int = 4) -> str:
    if value is None:
        return "--"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def bench_table(
    name: str,
    scale: str = "desk",
    out_root: Optional[str] = None,
    threads: int = 1,
    seed: Optional[int] = None,
    precision: Optional[str] = None,
    echo=print,
    registry: Optional[dict] = None,
) -> int:
    """Run one registered benchmark family; returns the process exit code."""
    registry = REGISTRY if registry is None else registry
    if name not in registry:
        known = ", ".join(sorted(registry))
        raise ConfigError(f"unknown benchmark {name!r}; registered: {known}")
    if scale not in ("desk", "full"):
        raise ConfigError(f"scale must be desk or full, got {scale!r}")
    benchmark = registry[name]
    out_root = out_root or os.path.join("runs", f"bench_{name}_{scale}")
    os.makedirs(out_root, exist_ok=True)

    table = []
    chart_rows = []
    out_of_band = []
    for row in benchmark.rows:
        case = row.desk if scale == "desk" else row.full
        if case.config is None:
            table.append(
                {
                    "row": row.label,
                    "mean": None,
                    "std": None,
                    "reference": case.reference,
                    "rel_error": None,
                    "provenance": case.provenance,
                    "runtime_seconds": None,
                    "status": "declared",
                    "note": case.note,
                }
            )
            continue
        cfg = with_overrides(
            case.config,
            seed=seed,
            precision=precision,
            out=os.path.join(out_root, _slug(row.label)),
        )
        result = run_experiment(cfg, threads=threads, echo=echo)
        rel_error = None
        if case.reference:
            rel_error = (result.mean - case.reference) / case.reference
            curve = ["step,relative_error"]
            curve += [
                f"{r.step},{(r.objective - case.reference) / case.reference!r}"
                for r in result.records
            ]
            _write_text(
                os.path.join(out_root, f"curve_{_slug(row.label)}.csv"),
                "\n".join(curve) + "\n",
            )
        status = "ok"
        if case.band is not None and not (case.band[0] <= result.mean <= case.band[1]):
            status = "outside_band"
            out_of_band.append(row.label)
        table.append(
            {
                "row": row.label,
                "mean": result.mean,
                "std": result.std,
                "reference": case.reference,
                "rel_error": rel_error,
                "provenance": case.provenance,
                "runtime_seconds": result.total_seconds,
                "status": status,
                "note": case.note,
            }
        )
        chart_rows.append((row.label, result.mean, case.reference))

    fields = ["row", "mean", "std", "reference", "rel_error", "provenance", "runtime_seconds", "status"]
    with open(os.path.join(out_root, "bench.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for entry in table:
            writer.writerow(
                ["" if entry[f] is None else (repr(entry[f]) if isinstance(entry[f], float) else entry[f]) for f in fields]
            )
    if chart_rows:
        save_bench_chart(
            chart_rows,
            os.path.join(out_root, "bench_chart.png"),
            title=f"{benchmark.name} ({scale}): deviation from reference",
        )

    if echo is not None:
        echo(f"\n{benchmark.name} ({scale} scale): {benchmark.title}")
        header = f"{'row':<18} {'mean':>10} {'std':>10} {'reference':>10} {'rel.err':>9} {'runtime':>9}  status"
        echo(header)
        echo("-" * len(header))
        for entry in table:
            echo(
                f"{entry['row']:<18} {_fmt_cell(entry['mean']):>10} {_fmt_cell(entry['std']):>10} "
                f"{_fmt_cell(entry['reference']):>10} "
                f"{_fmt_cell(entry['rel_error'], 5):>9} "
                f"{_fmt_cell(entry['runtime_seconds'], 1):>9}  {entry['status']}"
            )
            if entry["note"]:
                echo(f"    note: {entry['note']}")
            echo(f"    reference source: {entry['provenance']}")
        if out_of_band:
            echo(f"\nrows outside their tolerance band: {', '.join(out_of_band)}")
    return 4 if out_of_band else 0


# ---------------------------------------------------------------------------
# oracle subcommands


def _bs_params(args) -> Bs1dParams:
    carry = args.rate if args.carry is None else args.carry
    return Bs1dParams(
        maturity=args.maturity,
        spot=args.spot,
        vol=args.vol,
        rate=args.rate,
        carry=carry,
        strike=args.strike,
    )


def _cmd_oracle(args) -> int:
    if args.oracle_command == "bs":
        params = _bs_params(args)
        value = bs_euro_call(params) if args.kind == "call" else bs_euro_put(params)
        print(f"price={value!r}")
        return 0
    if args.oracle_command == "binomial":
        value = binomial_american(_bs_params(args), steps=args.steps, kind=args.kind)
        print(f"price={value!r}")
        return 0
    if args.oracle_command == "reduce":
        alpha = _parse_floats(args.alpha, "--alpha")
        beta = _parse_floats(args.beta, "--beta")
        xi = _parse_floats(args.xi, "--xi")
        factor = np.eye(len(alpha)) if args.factor is None else np.asarray(_parse_rows(args.factor, "--factor"))
        reduced = reduce_dimension(args.epsilon, alpha, beta, factor, xi)
        print(f"initial={reduced.initial!r}")
        print(f"drift={reduced.drift!r}")
        print(f"vol={reduced.vol!r}")
        if args.rate is not None:
            print(f"effective_dividend={reduced.effective_dividend(args.rate)!r}")
        return 0
    raise ConfigError("oracle needs one of: bs, binomial, reduce")


# ---------------------------------------------------------------------------
# selftest: quick in-process property checks


def _selftest_schedules() -> None:
    for text in ("upto_150:8192, else:4096", "upto_100:0.05, upto_300:0.005, else:0.0005", "2048"):
        schedule = _parse_schedule(text)
        assert _parse_schedule(_emit_schedule(schedule)) == schedule
    schedule = PiecewiseSchedule.parse("upto_150:8192, else:4096")
    assert schedule.at(1) == 8192 and schedule.at(150) == 8192 and schedule.at(151) == 4096


def _selftest_config_round_trip() -> None:
    for benchmark in REGISTRY.values():
        for row in benchmark.rows:
            for case in (row.desk, row.full):
                if case.config is not None:
                    assert parse_config(emit_config(case.config)) == case.config, (
                        benchmark.name,
                        row.label,
                    )


def _selftest_normalization() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(200):
        u = rng.uniform(1e-9, 1.0 - 1e-9, size=(64, 9))
        factors = compose_soft_factors(u)
        assert np.max(np.abs(np.sum(factors, axis=1) - 1.0)) <= 1e-12
        assert np.all(factors >= 0.0)


def _selftest_gradients() -> None:
    rng = RngStream(5)
    layout = NetworkLayout(dim=3, hidden1=8, hidden2=8, bn_input=True, bn_hidden=True, bn_output=True)
    policy = init_policy(layout, 4, rng, deterministic_start=True)
    gen = np.random.default_rng(11)
    batch = np.abs(gen.normal(1.0, 0.3, size=(32, 5, 3))) + 0.1
    table = np.abs(gen.normal(1.0, 0.5, size=(32, 5))) + 0.1
    _, grad = objective_and_gradient(policy, batch, table)
    probes = np.argsort(np.abs(grad))[-5:]
    step = 1e-6
    for idx in probes:
        kept = policy.theta[idx]
        policy.theta[idx] = kept + step
        hi, _ = objective_and_gradient(policy, batch, table)
        policy.theta[idx] = kept - step
        lo, _ = objective_and_gradient(policy, batch, table)
        policy.theta[idx] = kept
        fd = (hi - lo) / (2.0 * step)
        assert abs(fd - grad[idx]) <= 1e-6 * max(1.0, abs(grad[idx]))


def _selftest_factorization() -> None:
    # all four paths of two fair coin flips; states are the running sums
    paths = np.array(
        [
            [0.0, 1.0, 2.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, -1.0, -2.0],
        ]
    )
    # a state-dependent adapted rule: stop at 1 after an up-move, else at the horizon
    for tau in ([1, 1, 2, 2], [0, 0, 0, 0], [2, 2, 1, 1], [2, 2, 2, 2]):
        tau = np.asarray(tau)
        factors = factorize_indicator(tau, paths)
        assert np.array_equal(hard_stopping_time(factors), tau)
        assert np.all(np.sum(factors, axis=1) == 1.0)


def _selftest_policy_io() -> None:
    rng = RngStream(17)
    layout = NetworkLayout(dim=2, hidden1=5, hidden2=5, bn_input=True, bn_hidden=False, bn_output=True)
    policy = init_policy(layout, 3, rng, deterministic_start=False)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "policy.bin")
        save_policy(policy, path)
        clone = load_policy(path)
    assert np.array_equal(policy.theta, clone.theta)
    assert np.array_equal(policy.stats, clone.stats)
    assert clone.layout == policy.layout


_SELFTESTS = (
    ("schedule round-trip", _selftest_schedules),
    ("registry config round-trip", _selftest_config_round_trip),
    ("stopping-factor normalization", _selftest_normalization),
    ("analytic vs numeric gradients", _selftest_gradients),
    ("stopping-time factorization", _selftest_factorization),
    ("policy save/load", _selftest_policy_io),
)


def selftest(echo=print) -> int:
    failures = 0
    for label, check in _SELFTESTS:
        try:
            check()
        except AssertionError as exc:
            failures += 1
            echo(f"selftest {label}: FAIL {exc}")
        else:
            echo(f"selftest {label}: ok")
    if failures:
        echo(f"selftest: {failures} of {len(_SELFTESTS)} suites failed")
        return 1
    echo(f"selftest: all {len(_SELFTESTS)} suites passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _global_flags(parser: argparse.ArgumentParser, deferred: bool) -> None:
    # The same flags hang off the root parser and off every subcommand, so
    # "stoprule --seed 7 price cfg" and "stoprule price cfg --seed 7" both
    # work. The subcommand copies use SUPPRESS defaults: they only touch the
    # namespace when actually given, otherwise the root parse's value stands.
    default = argparse.SUPPRESS if deferred else None
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=argparse.SUPPRESS if deferred else 1,
        help="worker threads for pricing",
    )
    parser.add_argument("--precision", choices=("double", "single"), default=default)
    parser.add_argument("--out", default=default, help="override the output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stoprule",
        description="train per-date stopping networks and price Bermudan/American derivatives",
    )
    _global_flags(parser, deferred=False)
    commands = parser.add_subparsers(dest="command", required=True)

    price = commands.add_parser("price", help="run one experiment from a config file")
    price.add_argument("config", help="path to the configuration document")
    _global_flags(price, deferred=True)

    oracle = commands.add_parser("oracle", help="query the reference-value oracles")
    oracle_commands = oracle.add_subparsers(dest="oracle_command", required=True)

    def _bs_flags(sub) -> None:
        sub.add_argument("--kind", choices=("call", "put"), required=True)
        sub.add_argument("--maturity", type=float, required=True)
        sub.add_argument("--spot", type=float, required=True)
        sub.add_argument("--vol", type=float, required=True)
        sub.add_argument("--rate", type=float, required=True)
        sub.add_argument("--strike", type=float, required=True)
        sub.add_argument("--carry", type=float, default=None, help="growth rate; defaults to --rate")

    bs = oracle_commands.add_parser("bs", help="closed-form European value")
    _bs_flags(bs)
    binom = oracle_commands.add_parser("binomial", help="binomial-tree American value")
    _bs_flags(binom)
    binom.add_argument("--steps", type=int, default=20000)
    reduce_cmd = oracle_commands.add_parser("reduce", help="collapse a lognormal product to one coordinate")
    reduce_cmd.add_argument("--epsilon", type=float, required=True)
    reduce_cmd.add_argument("--alpha", required=True, help="comma-separated drifts")
    reduce_cmd.add_argument("--beta", required=True, help="comma-separated volatilities")
    reduce_cmd.add_argument("--xi", required=True, help="comma-separated initial values")
    reduce_cmd.add_argument("--factor", default=None, help="';'-separated factor rows (default identity)")
    reduce_cmd.add_argument("--rate", type=float, default=None, help="also report the effective dividend")

    bench = commands.add_parser("bench", help="run a registered benchmark family")
    bench.add_argument("name")
    bench.add_argument("--scale", choices=("desk", "full"), default="desk")
    _global_flags(bench, deferred=True)

    commands.add_parser("selftest", help="run the quick property suites")
    return parser


def _cmd_price(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
    cfg = parse_config(text)
    cfg = with_overrides(cfg, seed=args.seed, precision=args.precision, out=args.out)
    run_experiment(cfg, threads=max(1, args.threads))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on bad usage, 0 on --help
        return int(exc.code) if exc.code else 0
    try:
        if args.command == "price":
            return _cmd_price(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "bench":
            return bench_table(
                args.name,
                scale=args.scale,
                out_root=args.out,
                threads=max(1, args.threads),
                seed=args.seed,
                precision=args.precision,
            )
        if args.command == "selftest":
            return selftest()
        raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

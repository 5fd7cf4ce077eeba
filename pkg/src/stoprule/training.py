"""Training loop and Monte Carlo pricing for stopping policies.

Training step m draws its own batch from random substream m (substream 0 stays
reserved for pricing), computes the objective gradient with batch-statistics
networks, folds those statistics into the running estimates, and applies one
ascent increment. Pricing freezes the policy and replays substream 0 one fixed
2048-path block at a time: every block is simulated, evaluated, and summed on
its own, and the per-block sums are added in block order. Chunking and worker
threads only decide which blocks travel together, so the estimate is
bit-identical for any chunk size and any thread count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .optimizer import AdamConfig, AdamState, PiecewiseSchedule, adam_step, sgd_step
from .paths_models import RNG_ATOM, RngStream, TimeGrid, simulate_paths
from .payoffs import payoff_along_paths
from .stopnet import BN_EPS, BN_MOMENTUM, NetworkLayout, StoppingPolicy, forward_u, init_policy, update_running_stats
from .stopping_objective import compose_soft_factors, hard_stopping_time, objective_and_gradient

__all__ = [
    "CONFIDENCE_Z",
    "DEFAULT_EVAL_CHUNK",
    "DIVERGENCE_LIMIT",
    "PriceEstimate",
    "StepRecord",
    "TrainingDivergenceError",
    "TrainingPlan",
    "confidence_interval",
    "estimate_european",
    "estimate_price",
    "train",
]

DIVERGENCE_LIMIT = 1e8
CONFIDENCE_Z = 1.959964  # two-sided 95%

_PRECISIONS = {"double": np.float64, "single": np.float32}


class TrainingDivergenceError(RuntimeError):
    """The objective or gradient blew past the divergence guard."""

    def __init__(self, step: int, detail: str):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class TrainingPlan:
    """Everything a training run needs besides the model, payoff, and grid."""

    steps: int
    batch_schedule: PiecewiseSchedule
    rate_schedule: PiecewiseSchedule
    adam: AdamConfig
    seed: int
    method: str = "adam"  # "adam" | "plain"
    best_observed: bool = False
    deterministic_start: bool = True
    hidden: tuple = None  # (h1, h2); None means dim + 40 for both
    bn_input: bool = True
    bn_hidden: bool = True
    bn_output: bool = True
    bn_epsilon: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM
    bn_trainable: bool = True
    step0_trainable: bool = True
    precision: str = "double"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.method not in ("adam", "plain"):
            raise ValueError(f"method must be 'adam' or 'plain', got {self.method!r}")
        if self.precision not in _PRECISIONS:
            raise ValueError(f"precision must be 'double' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def layout_for(self, dim: int) -> NetworkLayout:
        h1, h2 = self.hidden if self.hidden is not None else (dim + 40, dim + 40)
        return NetworkLayout(
            dim=dim,
            hidden1=int(h1),
            hidden2=int(h2),
            bn_input=self.bn_input,
            bn_hidden=self.bn_hidden,
            bn_output=self.bn_output,
        )


@dataclass(frozen=True)
class StepRecord:
    step: int
    paths: int
    objective: float
    rate: float
    elapsed: float


def train(model, payoff, grid: TimeGrid, plan: TrainingPlan):
    """Run the full ascent loop; returns ``(policy, records)``.

    Models that declare ``random_start`` (the first state is already random)
    get a network at date 0 regardless of ``plan.deterministic_start``; all
    other models get the scalar date-0 logit when the plan asks for one.

    With ``plan.best_observed`` the returned policy is the iterate that scored
    the highest batch objective — the parameter/statistics state *entering*
    that step, exactly as if training had halted just before it. The records
    still cover every step, so the winning step is ``argmax`` of their
    objectives. By default the final iterate is returned.
    """
    rng = RngStream(plan.seed)
    layout = plan.layout_for(model.dimension)
    deterministic = plan.deterministic_start and not getattr(model, "random_start", False)
    policy = init_policy(
        layout,
        grid.steps,
        rng,
        deterministic_start=deterministic,
        dtype=plan.dtype,
        bn_epsilon=plan.bn_epsilon,
        bn_momentum=plan.bn_momentum,
        bn_trainable=plan.bn_trainable,
    )
    policy.step0_trainable = plan.step0_trainable
    state = AdamState.zeros(policy.nu) if plan.method == "adam" else None

    records = []
    best = None  # (objective, theta, stats, counters) of the top-scoring iterate
    for m in range(1, plan.steps + 1):
        started = time.perf_counter()
        j = int(plan.batch_schedule.at(m))
        if j < 1:
            raise ValueError(f"batch schedule gives {j} paths at step {m}")
        batch = simulate_paths(model, grid, rng, m, j, dtype=plan.dtype)
        table = payoff_along_paths(payoff, grid, batch)
        phi, grad, aux = objective_and_gradient(policy, batch, table, return_aux=True)

        if not (np.isfinite(phi) and np.all(np.isfinite(grad))):
            raise TrainingDivergenceError(m, "objective or gradient is not finite")
        peak = max(abs(phi), float(np.max(np.abs(grad))) if grad.size else 0.0)
        if peak > DIVERGENCE_LIMIT:
            raise TrainingDivergenceError(m, f"magnitude {peak:.3e} exceeds {DIVERGENCE_LIMIT:.0e}")

        if plan.best_observed and (best is None or phi > best[0]):
            best = (phi, policy.theta.copy(), policy.stats.copy(), policy.counters.copy())

        for k in policy.net_steps:
            update_running_stats(policy, k, aux["stats"][k])

        rate = plan.rate_schedule.at(m)
        if plan.method == "adam":
            increment = adam_step(state, grad, rate, plan.adam)
        else:
            increment = sgd_step(grad, rate)
        policy.theta += increment.astype(policy.dtype, copy=False)
        records.append(StepRecord(m, j, phi, rate, time.perf_counter() - started))

    if best is not None:
        policy.theta[:] = best[1]
        policy.stats[:] = best[2]
        policy.counters[:] = best[3]
    return policy, records


@dataclass(frozen=True)
class PriceEstimate:
    mean: float
    stderr: float
    paths: int

    @property
    def half_width(self) -> float:
        return CONFIDENCE_Z * self.stderr

    @property
    def interval(self) -> tuple:
        return (self.mean - self.half_width, self.mean + self.half_width)


def confidence_interval(mean: float, std: float, count: int) -> tuple:
    """Two-sided 95% interval for a Monte Carlo mean from sample moments."""
    if count < 2:
        raise ValueError(f"a confidence interval needs at least two samples, got {count}")
    half = CONFIDENCE_Z * std / math.sqrt(count)
    return (mean - half, mean + half)


DEFAULT_EVAL_CHUNK = 1 << 14


def _run_blocks(model, grid: TimeGrid, seed: int, paths: int, threads: int, chunk, block_values):
    """Map ``block_values`` over the fixed 2048-path blocks of substream 0.

    Each block is simulated, evaluated, and summed independently; the
    (count, sum, sum-of-squares) triples then reduce in block order. A chunk
    is only a batch of consecutive blocks handed to one worker, so neither the
    chunk size nor the thread count can change the result.
    """
    if paths < 1:
        raise ValueError(f"paths must be >= 1, got {paths}")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    rng = RngStream(seed)
    chunk = DEFAULT_EVAL_CHUNK if chunk is None else int(chunk)
    atoms_per_task = max(1, chunk // RNG_ATOM)
    n_atoms = (paths + RNG_ATOM - 1) // RNG_ATOM

    def task(span):
        first, last = span
        parts = []
        for atom in range(first, last):
            rows = min(RNG_ATOM, paths - atom * RNG_ATOM)
            block = model.simulate_atom(rng, 0, atom, rows, grid)
            values = block_values(block)
            parts.append((rows, float(np.sum(values)), float(np.sum(np.square(values)))))
        return parts

    spans = [(a, min(a + atoms_per_task, n_atoms)) for a in range(0, n_atoms, atoms_per_task)]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grouped = list(pool.map(task, spans))
    else:
        grouped = [task(span) for span in spans]

    count, total, sumsq = 0, 0.0, 0.0
    for parts in grouped:  # fixed block order: reduction is reproducible
        for rows, s, q in parts:
            count += rows
            total += s
            sumsq += q
    return count, total, sumsq


def _estimate_from_sums(count: int, total: float, sumsq: float) -> PriceEstimate:
    mean = total / count
    if count > 1:
        variance = max(0.0, (sumsq - count * mean * mean) / (count - 1))
        stderr = math.sqrt(variance / count)
    else:
        stderr = float("nan")
    return PriceEstimate(mean=mean, stderr=stderr, paths=count)


def estimate_price(policy: StoppingPolicy, model, payoff, grid: TimeGrid, paths: int, seed: int, threads: int = 1, chunk: int = None) -> PriceEstimate:
    """Price under the trained rule: hard stops on fresh substream-0 paths.

    Stopping decisions run the networks in eval mode (running statistics); each
    path contributes its discounted payoff at the first date whose accumulated
    soft mass dominates the remainder. The mean is a lower bound on the optimal
    value up to Monte Carlo error.
    """
    if policy.n_dates != grid.steps:
        raise ValueError(f"policy covers {policy.n_dates} dates but the grid has {grid.steps}")
    if policy.layout.dim != model.dimension:
        raise ValueError(f"policy dimension {policy.layout.dim} does not match model {model.dimension}")

    def block_values(block):
        table = payoff_along_paths(payoff, grid, block)
        u = np.empty((block.shape[0], policy.n_dates), dtype=np.float64)
        for k in range(policy.n_dates):
            u[:, k] = forward_u(policy, k, block[:, k, :], mode="eval")[0]
        kappa = hard_stopping_time(compose_soft_factors(u, policy.n_dates))
        return table[np.arange(block.shape[0]), kappa]

    return _estimate_from_sums(*_run_blocks(model, grid, seed, paths, threads, chunk, block_values))


def estimate_european(model, payoff, grid: TimeGrid, paths: int, seed: int, threads: int = 1, chunk: int = None) -> PriceEstimate:
    """Monte Carlo value of holding to the horizon (no early exercise)."""

    def block_values(block):
        return payoff_along_paths(payoff, grid, block)[:, -1]

    return _estimate_from_sums(*_run_blocks(model, grid, seed, paths, threads, chunk, block_values))

"""Time grids, correlation factors, and Markovian path simulation.

Reproducibility contract
------------------------
All randomness flows through :class:`RngStream`, a counter-based (Philox)
generator keyed by ``(master seed, lane, substream m, atom)``. The *atom* is a
block of :data:`RNG_ATOM` = 2048 paths: every atom is drawn as one path-major
block from its own keyed generator, so the increments of path ``j`` depend only
on ``(seed, m, j // RNG_ATOM, j % RNG_ATOM)`` — never on the total path count,
the processing chunk size, or the number of worker threads. Substream ``m = 0``
is reserved for price evaluation; training step ``m`` uses substream ``m``.

Model protocol
--------------
A model exposes ``dimension``, ``random_start``, ``scalars_per_path(grid)`` and
``simulate_atom(rng, m, atom, rows, grid, dtype)`` returning an array shaped
``(rows, N+1, dimension)``. Any object implementing this protocol can be
trained and priced; the built-in models cover scaled Brownian motion, exact
lognormal baskets, generic diagonal-diffusion Euler schemes, a local-volatility
log-Euler scheme on a coarse grid, and a moving-window price-ratio process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "RNG_ATOM",
    "TimeGrid",
    "make_grid",
    "RngStream",
    "cholesky_factor",
    "CorrelationSpec",
    "BrownianScaled",
    "GbmExact",
    "EulerSde",
    "DupireLogEuler",
    "RatioPath",
    "simulate_paths",
    "smile_fade_local_vol",
]

RNG_ATOM = 2048

_LANE_NORMAL = 0
_LANE_UNIFORM = 1
_LANE_INIT = 3

_M_LIMIT = 1 << 40
_ATOM_LIMIT = 1 << 22


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant exercise dates t_n = n·T/N for n = 0..N."""

    horizon: float
    steps: int
    times: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


def make_grid(horizon: float, steps: int) -> TimeGrid:
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    times = np.linspace(0.0, horizon, steps + 1)
    return TimeGrid(horizon=float(horizon), steps=int(steps), times=times)


class RngStream:
    """Counter-based random source with per-atom keying (see module docstring)."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < (1 << 63):
            raise ValueError(f"seed must fit in 63 bits, got {seed}")
        self.seed = int(seed)

    def _generator(self, lane: int, m: int, atom: int) -> np.random.Generator:
        if not 0 <= m < _M_LIMIT:
            raise ValueError(f"substream index {m} outside [0, 2^40)")
        if not 0 <= atom < _ATOM_LIMIT:
            raise ValueError(f"atom index {atom} outside [0, 2^22)")
        key = np.array(
            [self.seed, (lane << 62) | (m << 22) | atom],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def normals(self, m: int, atom: int, count: int) -> np.ndarray:
        """One atom block of standard normals, shaped (RNG_ATOM, count)."""
        gen = self._generator(_LANE_NORMAL, m, atom)
        return gen.standard_normal(size=(RNG_ATOM, count))

    def uniforms(self, m: int, atom: int, count: int) -> np.ndarray:
        """One atom block of uniforms on [0,1), shaped (RNG_ATOM, count)."""
        gen = self._generator(_LANE_UNIFORM, m, atom)
        return gen.random(size=(RNG_ATOM, count))

    def init_uniforms(self, slot: int, count: int) -> np.ndarray:
        """Uniforms on [0,1) for parameter initialization, keyed by tensor slot."""
        gen = self._generator(_LANE_INIT, 0, slot)
        return gen.random(size=count)


def cholesky_factor(matrix: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L Lᵀ = matrix.

    Raises ValueError naming the first failing pivot when the matrix is not
    positive definite, and rejects asymmetric input.
    """
    q = np.asarray(matrix, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"matrix must be square, got shape {q.shape}")
    if not np.allclose(q, q.T, atol=1e-12, rtol=0.0):
        raise ValueError("matrix must be symmetric")
    try:
        return np.linalg.cholesky(q)
    except np.linalg.LinAlgError:
        pass
    # slow path only to identify the failing pivot for the error message
    d = q.shape[0]
    low = np.zeros_like(q)
    for i in range(d):
        s = q[i, i] - float(np.dot(low[i, :i], low[i, :i]))
        if s <= 0.0:
            raise ValueError(
                f"matrix is not positive definite: pivot {i} is {s:.6e} (must be > 0)"
            )
        low[i, i] = math.sqrt(s)
        if i + 1 < d:
            low[i + 1 :, i] = (q[i + 1 :, i] - low[i + 1 :, :i] @ low[i, :i]) / low[i, i]
    return low  # pragma: no cover - reached only if LAPACK disagrees with the pivot loop


@dataclass(frozen=True)
class CorrelationSpec:
    """A correlation (or covariance) matrix with an explicit factorization.

    ``side`` records where the factor sits: ``"left"`` means factor·factorᵀ =
    matrix and asset i loads *row* i of the factor; ``"right"`` means
    factorᵀ·factor = matrix and asset i loads *column* i.
    """

    matrix: np.ndarray
    factor: np.ndarray
    side: str

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        f = np.asarray(self.factor, dtype=np.float64)
        q = np.asarray(self.matrix, dtype=np.float64)
        gram = f @ f.T if self.side == "left" else f.T @ f
        if not np.allclose(gram, q, atol=1e-10):
            raise ValueError("factor does not reproduce the matrix on the declared side")

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, side: str = "left") -> "CorrelationSpec":
        low = cholesky_factor(matrix)
        factor = low if side == "left" else low.T
        return cls(matrix=np.asarray(matrix, dtype=np.float64), factor=factor, side=side)

    @classmethod
    def from_factor(cls, factor: np.ndarray, side: str = "left") -> "CorrelationSpec":
        f = np.asarray(factor, dtype=np.float64)
        matrix = f @ f.T if side == "left" else f.T @ f
        return cls(matrix=matrix, factor=f, side=side)

    @classmethod
    def uniform(cls, dim: int, off_diagonal: float, side: str = "left") -> "CorrelationSpec":
        q = np.full((dim, dim), float(off_diagonal))
        np.fill_diagonal(q, 1.0)
        return cls.from_matrix(q, side=side)

    def loadings(self) -> np.ndarray:
        """Rows are per-asset loading vectors onto the driving Brownian motion."""
        f = np.asarray(self.factor, dtype=np.float64)
        return f if self.side == "left" else f.T

    def proposition_factor(self) -> np.ndarray:
        """The factor with *columns* as loadings, as :func:`oracles.reduce_dimension` expects."""
        return self.loadings().T


def _brownian(z: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Cumulative Brownian path W_{t_n} from standard-normal increments z (rows, N, d)."""
    rows, n_steps, dim = z.shape
    dt = np.diff(grid.times)
    w = np.empty((rows, n_steps + 1, dim), dtype=np.float64)
    w[:, 0, :] = 0.0
    np.cumsum(z * np.sqrt(dt)[None, :, None], axis=1, out=w[:, 1:, :])
    return w


@dataclass(frozen=True)
class BrownianScaled:
    """X_{t_n} = A·W_{t_n} for a fixed mixing matrix A (identity when omitted)."""

    dimension: int
    correlation: Optional[CorrelationSpec] = None
    random_start = False

    def scalars_per_path(self, grid: TimeGrid) -> int:
        return grid.steps * self.dimension

    def paths_from_brownian(self, w: np.ndarray) -> np.ndarray:
        if self.correlation is None:
            return w
        return w @ self.correlation.loadings().T

    def simulate_atom(self, rng: RngStream, m: int, atom: int, rows: int, grid: TimeGrid, dtype=np.float64) -> np.ndarray:
        z = rng.normals(m, atom, self.scalars_per_path(grid))
        z = z.reshape(RNG_ATOM, grid.steps, self.dimension)[:rows]
        return self.paths_from_brownian(_brownian(z, grid)).astype(dtype, copy=False)


@dataclass(frozen=True)
class GbmExact:
    """Correlated lognormal basket sampled from its closed-form solution.

    X^(i)_{t} = ξ_i · exp((α_i − ‖v_i‖²/2)·t + ⟨v_i, W_t⟩) with per-asset
    volatility loading v_i = vols_i · loadings_i (unit loadings when no
    correlation is given).
    """

    xi: np.ndarray
    drifts: np.ndarray
    vols: np.ndarray
    correlation: Optional[CorrelationSpec] = None
    random_start = False

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=np.float64))
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "drifts", np.broadcast_to(np.asarray(self.drifts, dtype=np.float64), xi.shape).copy())
        object.__setattr__(self, "vols", np.broadcast_to(np.asarray(self.vols, dtype=np.float64), xi.shape).copy())
        if np.any(xi <= 0.0):
            raise ValueError("initial values must be positive")

    @property
    def dimension(self) -> int:
        return self.xi.size

    def vol_loadings(self) -> np.ndarray:
        if self.correlation is None:
            return np.diag(self.vols)
        return self.correlation.loadings() * self.vols[:, None]

    def scalars_per_path(self, grid: TimeGrid) -> int:
        return grid.steps * self.dimension

    def paths_from_brownian(self, w: np.ndarray, grid: TimeGrid) -> np.ndarray:
        vl = self.vol_loadings()
        adj = self.drifts - 0.5 * np.sum(vl * vl, axis=1)
        log_x = (
            np.log(self.xi)[None, None, :]
            + adj[None, None, :] * grid.times[None, :, None]
            + w @ vl.T
        )
        out = np.exp(log_x)
        out[:, 0, :] = self.xi[None, :]  # exact start (exp∘log drops an ulp)
        return out

    def simulate_atom(self, rng: RngStream, m: int, atom: int, rows: int, grid: TimeGrid, dtype=np.float64) -> np.ndarray:
        z = rng.normals(m, atom, self.scalars_per_path(grid))
        z = z.reshape(RNG_ATOM, grid.steps, self.dimension)[:rows]
        return self.paths_from_brownian(_brownian(z, grid), grid).astype(dtype, copy=False)


@dataclass(frozen=True)
class EulerSde:
    """Euler scheme for dX_i = μ_i(t, X) dt + σ_i(t, X) ⟨loadings_i, dW⟩.

    ``drift_fn(t, x)`` and ``vol_fn(t, x)`` map (rows, d) states to (rows, d)
    per-asset coefficients; the optional correlation mixes the Brownian
    increments exactly as in the exact lognormal model.
    """

    xi: np.ndarray
    drift_fn: Callable[[float, np.ndarray], np.ndarray]
    vol_fn: Callable[[float, np.ndarray], np.ndarray]
    correlation: Optional[CorrelationSpec] = None
    random_start = False

    def __post_init__(self):
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=np.float64)))

    @property
    def dimension(self) -> int:
        return self.xi.size

    def scalars_per_path(self, grid: TimeGrid) -> int:
        return grid.steps * self.dimension

    def march(self, grid: TimeGrid, dw: np.ndarray) -> np.ndarray:
        """March the scheme along given Brownian increments dw (rows, N, d)."""
        rows = dw.shape[0]
        if self.correlation is not None:
            dw = dw @ self.correlation.loadings().T
        dt = np.diff(grid.times)
        out = np.empty((rows, grid.steps + 1, self.dimension), dtype=np.float64)
        out[:, 0, :] = self.xi[None, :]
        x = np.broadcast_to(self.xi[None, :], (rows, self.dimension)).copy()
        for n in range(grid.steps):
            t = float(grid.times[n])
            x = x + self.drift_fn(t, x) * dt[n] + self.vol_fn(t, x) * dw[:, n, :]
            out[:, n + 1, :] = x
        return out

    def simulate_atom(self, rng: RngStream, m: int, atom: int, rows: int, grid: TimeGrid, dtype=np.float64) -> np.ndarray:
        z = rng.normals(m, atom, self.scalars_per_path(grid))
        z = z.reshape(RNG_ATOM, grid.steps, self.dimension)[:rows]
        dw = z * np.sqrt(np.diff(grid.times))[None, :, None]
        return self.march(grid, dw).astype(dtype, copy=False)


@dataclass(frozen=True)
class DupireLogEuler:
    """Log-Euler scheme for independent assets with a shared local-volatility surface.

    The Brownian increments live on a coarse grid of ``coarse_levels`` equal
    blocks; within block ℓ (start s, length h, increment ΔW) the log-price at
    time t ∈ (s, s+h] is

        y(t) = y(s) + (t−s)·(r − δ − v²/2) + ((t−s)/h)·v·ΔW,
        v = local_vol(s, exp(y(s))) applied per asset,

    i.e. the block's full increment scaled by the elapsed fraction. States are
    the log-prices. ``local_vol(t, prices)`` must be a *relative* (lognormal)
    volatility and is evaluated elementwise on each asset's price.
    """

    xi: np.ndarray
    rate: float
    dividend: float
    coarse_levels: int
    local_vol: Callable[[float, np.ndarray], np.ndarray]
    random_start = False

    def __post_init__(self):
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=np.float64)))
        if np.any(self.xi <= 0.0):
            raise ValueError("initial prices must be positive")
        if self.coarse_levels < 1:
            raise ValueError("coarse_levels must be >= 1")

    @property
    def dimension(self) -> int:
        return self.xi.size

    def scalars_per_path(self, grid: TimeGrid) -> int:
        return self.coarse_levels * self.dimension

    def simulate_atom(self, rng: RngStream, m: int, atom: int, rows: int, grid: TimeGrid, dtype=np.float64) -> np.ndarray:
        d, L = self.dimension, self.coarse_levels
        if grid.steps % L != 0 and L % grid.steps != 0:
            raise ValueError(
                f"evaluation grid ({grid.steps} steps) must align with the {L} coarse blocks"
            )
        T = grid.horizon
        h = T / L
        z = rng.normals(m, atom, L * d).reshape(RNG_ATOM, L, d)[:rows]
        dw = z * math.sqrt(h)

        out = np.empty((rows, grid.steps + 1, d), dtype=np.float64)
        y0 = np.log(self.xi)
        out[:, 0, :] = y0[None, :]
        y_block = np.broadcast_to(y0[None, :], (rows, d)).copy()
        block = 0
        v = self.local_vol(0.0, np.exp(y_block))
        adj = self.rate - self.dividend - 0.5 * v * v
        for n in range(1, grid.steps + 1):
            t = float(grid.times[n])
            # advance whole blocks that end strictly before t
            while (block + 1) * h < t - 1e-12 * T and block < L - 1:
                y_block = y_block + h * adj + v * dw[:, block, :]
                block += 1
                v = self.local_vol(block * h, np.exp(y_block))
                adj = self.rate - self.dividend - 0.5 * v * v
            frac_time = t - block * h
            out[:, n, :] = y_block + frac_time * adj + (frac_time / h) * v * dw[:, block, :]
        return out.astype(dtype, copy=False)


def smile_fade_local_vol(rate: float, anchor: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Relative local-volatility surface with a dip that fades in time.

        v(t, p) = 0.6·e^{−0.05·√t}·(1.2 − e^{−0.1·t − 0.001·(e^{r·t}·p − anchor)²})

    The dip sits where the forward price e^{r·t}·p is near ``anchor`` and
    washes out as t grows; the overall level decays slowly with √t. Suitable
    as the ``local_vol`` of :class:`DupireLogEuler`.
    """

    def vol(t: float, prices: np.ndarray) -> np.ndarray:
        gap = math.exp(rate * t) * prices - anchor
        dip = np.exp(-0.1 * t - 0.001 * np.square(gap))
        return 0.6 * math.exp(-0.05 * math.sqrt(t)) * (1.2 - dip)

    return vol


@dataclass(frozen=True)
class RatioPath:
    """Window of price ratios S_{n-window+k}/S_{n-window}, k = 1..window.

    One scalar lognormal asset with unit-time steps; the state at date n is the
    vector exp(k·(r − β²/2) + β·(W_{n+k} − W_n)) for k = 1..window, so the last
    coordinate is the ratio of today's price to the price ``window`` days ago.
    The pre-history makes the start randomized, so the first exercise decision
    needs a genuine network. The grid must be unit-spaced (horizon == steps).
    """

    window: int
    rate: float
    vol: float
    random_start = True

    @property
    def dimension(self) -> int:
        return self.window

    def scalars_per_path(self, grid: TimeGrid) -> int:
        return grid.steps + self.window

    def _check_grid(self, grid: TimeGrid) -> None:
        if abs(grid.horizon - grid.steps) > 1e-9:
            raise ValueError("ratio-window model needs a unit-spaced grid (horizon == steps)")

    def simulate_atom(self, rng: RngStream, m: int, atom: int, rows: int, grid: TimeGrid, dtype=np.float64) -> np.ndarray:
        self._check_grid(grid)
        n_steps, w = grid.steps, self.window
        z = rng.normals(m, atom, n_steps + w)[:rows]
        cum = np.empty((rows, n_steps + w + 1), dtype=np.float64)
        cum[:, 0] = 0.0
        np.cumsum(z, axis=1, out=cum[:, 1:])
        windows = np.lib.stride_tricks.sliding_window_view(cum, w + 1, axis=1)
        diffs = windows[:, :, 1:] - windows[:, :, :1]  # (rows, N+1, window)
        k = np.arange(1, w + 1, dtype=np.float64)
        a = self.rate - 0.5 * self.vol * self.vol
        return np.exp(k[None, None, :] * a + self.vol * diffs).astype(dtype, copy=False)


def simulate_paths(
    model,
    grid: TimeGrid,
    rng: RngStream,
    m: int,
    paths: int,
    dtype=np.float64,
) -> np.ndarray:
    """Simulate ``paths`` state paths on the grid using substream ``m``.

    Output is (paths, N+1, dimension). Path j is drawn from atom j // RNG_ATOM,
    row j % RNG_ATOM, so the same (seed, m, j) always yields the same path.
    """
    if paths < 1:
        raise ValueError(f"paths must be >= 1, got {paths}")
    d = model.dimension
    out = np.empty((paths, grid.steps + 1, d), dtype=dtype)
    for atom in range((paths + RNG_ATOM - 1) // RNG_ATOM):
        lo = atom * RNG_ATOM
        hi = min(lo + RNG_ATOM, paths)
        out[lo:hi] = model.simulate_atom(rng, m, atom, hi - lo, grid, dtype=dtype)
    return out

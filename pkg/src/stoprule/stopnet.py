"""Per-date stopping networks with hand-written forward/backward passes.

One small feed-forward network per exercise date maps the date's state vector
to a stopping probability in (0,1):

    input → [BN] → affine(d→h1) → [BN] → ReLU → affine(h1→h2) → [BN] → ReLU
          → affine(h2→1) → [BN] → logistic

Normalization sits just before the first affine map, before each hidden
activation, and before the output activation; each site carries a trainable
scale/shift pair plus running mean/variance estimates (momentum-0.99 EMA of the
training-batch statistics, which the train-mode forward itself uses). When the
very first state is deterministic, date 0 needs no network: a single trainable
logit stands in for it.

All parameters of all dates live in one flat float vector (`theta`); per-date
tensors are numpy views into it, so optimizer updates on the flat vector are
visible everywhere. Gradients use the same flat layout (“gradient block”).
The declaration order — also the serialization order — is, per date:
[input-BN scale, shift] W1 b1 [BN1 scale, shift] W2 b2 [BN2 scale, shift]
w3 b3 [output-BN scale, shift]; running statistics follow the same site order
as [mean, var] pairs. Date 0's logit, when present, precedes all of this.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .paths_models import RngStream

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "U_CLAMP",
    "NetworkLayout",
    "StoppingPolicy",
    "init_policy",
    "forward_u",
    "backward_u",
    "update_running_stats",
    "save_policy",
    "load_policy",
]

BN_EPS = 1e-6
BN_MOMENTUM = 0.99
U_CLAMP = 1e-12

_MAGIC = b"STOPRULE-POLICY-V1\n"


@dataclass(frozen=True)
class NetworkLayout:
    """Widths and normalization flags shared by every date's network."""

    dim: int
    hidden1: int
    hidden2: int
    bn_input: bool = True
    bn_hidden: bool = True
    bn_output: bool = True

    @classmethod
    def for_dim(cls, dim: int, **flags) -> "NetworkLayout":
        """Default widths: dim + 40 units in both hidden layers."""
        return cls(dim=dim, hidden1=dim + 40, hidden2=dim + 40, **flags)

    def tensor_shapes(self) -> list:
        """(name, shape) pairs in declaration order for one date's network."""
        d, h1, h2 = self.dim, self.hidden1, self.hidden2
        shapes = []
        if self.bn_input:
            shapes += [("bn0_scale", (d,)), ("bn0_shift", (d,))]
        shapes += [("W1", (h1, d)), ("b1", (h1,))]
        if self.bn_hidden:
            shapes += [("bn1_scale", (h1,)), ("bn1_shift", (h1,))]
        shapes += [("W2", (h2, h1)), ("b2", (h2,))]
        if self.bn_hidden:
            shapes += [("bn2_scale", (h2,)), ("bn2_shift", (h2,))]
        shapes += [("W3", (1, h2)), ("b3", (1,))]
        if self.bn_output:
            shapes += [("bn3_scale", (1,)), ("bn3_shift", (1,))]
        return shapes

    def stat_sites(self) -> list:
        """(site name, width) pairs in declaration order for one date's network."""
        sites = []
        if self.bn_input:
            sites.append(("bn0", self.dim))
        if self.bn_hidden:
            sites.append(("bn1", self.hidden1))
            sites.append(("bn2", self.hidden2))
        if self.bn_output:
            sites.append(("bn3", 1))
        return sites

    def params_per_net(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.tensor_shapes())

    def stats_per_net(self) -> int:
        return 2 * sum(w for _, w in self.stat_sites())


class StoppingPolicy:
    """Flat parameter/statistics storage plus per-date tensor views.

    ``theta`` holds every trainable parameter; ``stats`` every running
    mean/variance; ``counters[n]`` counts how often date n's statistics were
    updated. Dates carrying networks are 1..N-1 for a deterministic start
    (date 0 is the scalar logit ``theta[0]``), 0..N-1 for a random start.
    """

    def __init__(
        self,
        layout: NetworkLayout,
        n_dates: int,
        deterministic_start: bool,
        dtype=np.float64,
        bn_epsilon: float = BN_EPS,
        bn_momentum: float = BN_MOMENTUM,
        bn_trainable: bool = True,
    ):
        if n_dates < 1:
            raise ValueError(f"n_dates must be >= 1, got {n_dates}")
        if bn_epsilon <= 0.0:
            raise ValueError("bn_epsilon must be positive")
        if not 0.0 <= bn_momentum < 1.0:
            raise ValueError("bn_momentum lives in [0, 1)")
        self.layout = layout
        self.n_dates = int(n_dates)
        self.deterministic_start = bool(deterministic_start)
        self.step0_trainable = True
        self.bn_epsilon = float(bn_epsilon)
        self.bn_momentum = float(bn_momentum)
        self.bn_trainable = bool(bn_trainable)
        self.dtype = np.dtype(dtype)

        first = 1 if deterministic_start else 0
        self.net_steps = tuple(range(first, n_dates))
        head = 1 if deterministic_start else 0
        self.nu = head + len(self.net_steps) * layout.params_per_net()
        self.sigma = len(self.net_steps) * layout.stats_per_net()

        self.theta = np.zeros(self.nu, dtype=self.dtype)
        self.stats = np.zeros(self.sigma, dtype=self.dtype)
        self.counters = np.zeros(n_dates, dtype=np.int64)

        self._param_slices = {}
        self._stat_slices = {}
        offset = head
        for step in self.net_steps:
            for name, shape in layout.tensor_shapes():
                size = int(np.prod(shape))
                self._param_slices[(step, name)] = (offset, shape)
                offset += size
        offset = 0
        for step in self.net_steps:
            for site, width in layout.stat_sites():
                self._stat_slices[(step, site, "mean")] = (offset, (width,))
                offset += width
                self._stat_slices[(step, site, "var")] = (offset, (width,))
                offset += width

    def param(self, step: int, name: str) -> np.ndarray:
        start, shape = self._param_slices[(step, name)]
        return self.theta[start : start + int(np.prod(shape))].reshape(shape)

    def param_span(self, step: int, name: str) -> tuple:
        start, shape = self._param_slices[(step, name)]
        return start, int(np.prod(shape)), shape

    def stat(self, step: int, site: str, which: str) -> np.ndarray:
        start, shape = self._stat_slices[(step, site, which)]
        return self.stats[start : start + shape[0]]

    def logit(self) -> float:
        if not self.deterministic_start:
            raise ValueError("random-start policies have a full network at date 0")
        return float(self.theta[0])


def init_policy(
    layout: NetworkLayout,
    n_dates: int,
    rng: RngStream,
    deterministic_start: bool = True,
    dtype=np.float64,
    **policy_options,
) -> StoppingPolicy:
    """Fresh policy: Xavier-uniform affine weights, zero biases, unit BN scales.

    Weight entries are drawn uniformly on ±sqrt(6/(fan_in+fan_out)); biases and
    BN shifts start at zero, BN scales at one, running statistics at mean 0 /
    variance 1, the date-0 logit (deterministic start) at zero. Extra keyword
    options (normalization epsilon/momentum/trainability) pass through to
    :class:`StoppingPolicy`.
    """
    policy = StoppingPolicy(layout, n_dates, deterministic_start, dtype=dtype, **policy_options)
    for step in policy.net_steps:
        slot = 0
        for name, shape in layout.tensor_shapes():
            view = policy.param(step, name)
            if name.startswith("W"):
                fan_out, fan_in = shape
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                draw = rng.init_uniforms(step * 4 + slot, int(np.prod(shape)))
                view[...] = ((2.0 * draw - 1.0) * bound).reshape(shape).astype(policy.dtype)
                slot += 1
            elif name.endswith("_scale"):
                view[...] = 1.0
            # biases and shifts stay zero
        for site, _ in layout.stat_sites():
            policy.stat(step, site, "var")[...] = 1.0
    return policy


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bn_forward_train(x, scale, shift, eps=BN_EPS):
    mu = x.mean(axis=0)
    centered = x - mu
    var = np.mean(centered * centered, axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return scale * xhat + shift, {"xhat": xhat, "inv": inv, "scale": scale, "mu": mu, "var": var}


def _bn_forward_eval(x, scale, shift, mean, var, eps=BN_EPS):
    xhat = (x - mean) / np.sqrt(var + eps)
    return scale * xhat + shift


def _bn_backward(dy, cache):
    xhat, inv, scale = cache["xhat"], cache["inv"], cache["scale"]
    j = dy.shape[0]
    dscale = np.sum(dy * xhat, axis=0)
    dshift = np.sum(dy, axis=0)
    dxhat = dy * scale
    dx = (inv / j) * (j * dxhat - np.sum(dxhat, axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dx, dscale, dshift


def forward_u(policy: StoppingPolicy, n: int, x: np.ndarray, mode: str = "train"):
    """Stopping probability u_n(x) for date n, plus the backward cache.

    ``mode="train"`` normalizes with the current batch's statistics (and the
    cache carries them for :func:`update_running_stats`); ``mode="eval"`` uses
    the stored running statistics, falling back to batch statistics with a
    warning when the policy was never updated. Date N (the horizon) has no
    network and is rejected: the rule is forced to stop there by construction.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0 <= n < policy.n_dates:
        raise ValueError(
            f"date {n} carries no stopping network (valid: 0..{policy.n_dates - 1}; "
            "the rule always stops at the horizon)"
        )
    x = np.asarray(x, dtype=policy.dtype)
    if x.ndim != 2 or x.shape[1] != policy.layout.dim:
        raise ValueError(f"x must be (J, {policy.layout.dim}), got {x.shape}")

    if policy.deterministic_start and n == 0:
        u = float(_sigmoid(np.asarray([policy.theta[0]]))[0])
        u_col = np.full(x.shape[0], u, dtype=policy.dtype)
        return np.clip(u_col, U_CLAMP, 1.0 - U_CLAMP), {"kind": "logit", "u_raw": u, "J": x.shape[0]}

    layout = policy.layout
    cache = {"kind": "net", "mode": mode, "stats": {}, "x": x}

    def normalize(site, a):
        scale = policy.param(n, f"{site}_scale")
        shift = policy.param(n, f"{site}_shift")
        if mode == "train":
            out, bn_cache = _bn_forward_train(a, scale, shift, eps=policy.bn_epsilon)
            cache[site] = bn_cache
            cache["stats"][site] = (bn_cache["mu"], bn_cache["var"])
            return out
        mean = policy.stat(n, site, "mean")
        var = policy.stat(n, site, "var")
        if policy.counters[n] == 0:
            warnings.warn(
                f"eval-mode forward at date {n} before any statistics update; "
                "falling back to batch statistics",
                RuntimeWarning,
                stacklevel=3,
            )
            out, _ = _bn_forward_train(a, scale, shift, eps=policy.bn_epsilon)
            return out
        return _bn_forward_eval(a, scale, shift, mean, var, eps=policy.bn_epsilon)

    a0 = normalize("bn0", x) if layout.bn_input else x
    cache["a0"] = a0
    z1 = a0 @ policy.param(n, "W1").T + policy.param(n, "b1")
    z1n = normalize("bn1", z1) if layout.bn_hidden else z1
    cache["z1n"] = z1n
    h1 = np.maximum(z1n, 0.0)
    cache["h1"] = h1
    z2 = h1 @ policy.param(n, "W2").T + policy.param(n, "b2")
    z2n = normalize("bn2", z2) if layout.bn_hidden else z2
    cache["z2n"] = z2n
    h2 = np.maximum(z2n, 0.0)
    cache["h2"] = h2
    z3 = h2 @ policy.param(n, "W3").T + policy.param(n, "b3")
    z3n = normalize("bn3", z3) if layout.bn_output else z3
    u_raw = _sigmoid(z3n[:, 0])
    cache["u_raw"] = u_raw
    return np.clip(u_raw, U_CLAMP, 1.0 - U_CLAMP), cache


def backward_u(policy: StoppingPolicy, n: int, cache: dict, upstream: np.ndarray, out: np.ndarray = None):
    """Accumulate dφ/dθ for date n into a flat gradient block; also return dφ/dx.

    ``upstream`` is dφ/du_n per path. The returned pair is (gradient block,
    input gradient); pass ``out`` to accumulate several dates into one block.
    """
    if out is None:
        out = np.zeros(policy.nu, dtype=policy.dtype)
    upstream = np.asarray(upstream, dtype=policy.dtype)

    if cache["kind"] == "logit":
        u = cache["u_raw"]
        if policy.step0_trainable:
            out[0] += float(np.sum(upstream)) * u * (1.0 - u)
        return out, np.zeros((cache["J"], policy.layout.dim), dtype=policy.dtype)

    if cache.get("mode") != "train":
        raise ValueError("backward pass needs a train-mode cache")
    layout = policy.layout

    def grad_view(name):
        start, size, shape = policy.param_span(n, name)
        return out[start : start + size].reshape(shape)

    u = cache["u_raw"]
    dz = (upstream * u * (1.0 - u))[:, None]  # through the logistic
    if layout.bn_output:
        dz, dscale, dshift = _bn_backward(dz, cache["bn3"])
        if policy.bn_trainable:
            grad_view("bn3_scale")[...] += dscale
            grad_view("bn3_shift")[...] += dshift
    grad_view("W3")[...] += dz.T @ cache["h2"]
    grad_view("b3")[...] += dz.sum(axis=0)
    dh2 = dz @ policy.param(n, "W3")

    dz2 = dh2 * (cache["z2n"] > 0.0)
    if layout.bn_hidden:
        dz2, dscale, dshift = _bn_backward(dz2, cache["bn2"])
        if policy.bn_trainable:
            grad_view("bn2_scale")[...] += dscale
            grad_view("bn2_shift")[...] += dshift
    grad_view("W2")[...] += dz2.T @ cache["h1"]
    grad_view("b2")[...] += dz2.sum(axis=0)
    dh1 = dz2 @ policy.param(n, "W2")

    dz1 = dh1 * (cache["z1n"] > 0.0)
    if layout.bn_hidden:
        dz1, dscale, dshift = _bn_backward(dz1, cache["bn1"])
        if policy.bn_trainable:
            grad_view("bn1_scale")[...] += dscale
            grad_view("bn1_shift")[...] += dshift
    grad_view("W1")[...] += dz1.T @ cache["a0"]
    grad_view("b1")[...] += dz1.sum(axis=0)
    dx = dz1 @ policy.param(n, "W1")

    if layout.bn_input:
        dx, dscale, dshift = _bn_backward(dx, cache["bn0"])
        if policy.bn_trainable:
            grad_view("bn0_scale")[...] += dscale
            grad_view("bn0_shift")[...] += dshift
    return out, dx


def update_running_stats(policy: StoppingPolicy, n: int, batch_stats: dict) -> None:
    """Fold one train batch's statistics into date n's running estimates.

    running ← momentum·running + (1−momentum)·batch for every site's mean and
    variance (momentum 0.99 by default); the date's counter increments once.
    """
    if policy.deterministic_start and n == 0:
        raise ValueError("date 0 carries no statistics under a deterministic start")
    keep = policy.bn_momentum
    for site, _ in policy.layout.stat_sites():
        mu, var = batch_stats[site]
        mean_view = policy.stat(n, site, "mean")
        var_view = policy.stat(n, site, "var")
        mean_view *= keep
        mean_view += (1.0 - keep) * mu
        var_view *= keep
        var_view += (1.0 - keep) * var
    policy.counters[n] += 1


def save_policy(policy: StoppingPolicy, path: str) -> None:
    """Write the versioned flat record documented in the module docstring.

    Layout: magic line; little-endian uint32 header length; UTF-8 JSON header
    (layout, date count, start kind, trainability, dtype, counters); raw
    little-endian parameter bytes; raw running-statistics bytes.
    """
    header = {
        "dim": policy.layout.dim,
        "hidden1": policy.layout.hidden1,
        "hidden2": policy.layout.hidden2,
        "bn_input": policy.layout.bn_input,
        "bn_hidden": policy.layout.bn_hidden,
        "bn_output": policy.layout.bn_output,
        "n_dates": policy.n_dates,
        "deterministic_start": policy.deterministic_start,
        "step0_trainable": policy.step0_trainable,
        "bn_epsilon": policy.bn_epsilon,
        "bn_momentum": policy.bn_momentum,
        "bn_trainable": policy.bn_trainable,
        "dtype": policy.dtype.name,
        "nu": policy.nu,
        "sigma": policy.sigma,
        "counters": policy.counters.tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(policy.theta.astype("<f8", copy=False).tobytes())
        fh.write(policy.stats.astype("<f8", copy=False).tobytes())


def load_policy(path: str) -> StoppingPolicy:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a stopping-policy file (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        layout = NetworkLayout(
            dim=header["dim"],
            hidden1=header["hidden1"],
            hidden2=header["hidden2"],
            bn_input=header["bn_input"],
            bn_hidden=header["bn_hidden"],
            bn_output=header["bn_output"],
        )
        policy = StoppingPolicy(
            layout,
            header["n_dates"],
            header["deterministic_start"],
            dtype=np.dtype(header["dtype"]),
            bn_epsilon=header["bn_epsilon"],
            bn_momentum=header["bn_momentum"],
            bn_trainable=header["bn_trainable"],
        )
        policy.step0_trainable = header["step0_trainable"]
        if policy.nu != header["nu"] or policy.sigma != header["sigma"]:
            raise ValueError("header sizes disagree with the layout")
        theta = np.frombuffer(fh.read(policy.nu * 8), dtype="<f8")
        stats = np.frombuffer(fh.read(policy.sigma * 8), dtype="<f8")
        policy.theta[...] = theta.astype(policy.dtype)
        policy.stats[...] = stats.astype(policy.dtype)
        policy.counters[...] = np.asarray(header["counters"], dtype=np.int64)
    return policy

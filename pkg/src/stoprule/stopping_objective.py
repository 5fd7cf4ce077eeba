"""Soft stopping factors, the expected-payoff objective, and hard stopping times.

A vector of per-date stopping probabilities u_0..u_{N-1} in (0,1) composes into
soft stopping factors

    U_n = max{u_n, n+1-N} · (1 - Σ_{k<n} U_k),   n = 0..N,

where the date-N factor absorbs the remaining mass (the max forces a stop at
the horizon; for interior u it never binds before then, so every U_n is just
u_n times the survival probability Π_{k<n}(1-u_k)). The factors sum to one by
construction, so φ = E[Σ_n U_n · G_n] is an expected payoff under a randomized
stopping rule, and its per-path gradient in u has the closed form

    ∂φ_j/∂u_n = Π_{k<n}(1-u_k) · (G_n - V_{n+1}),
    V_N = G_N,  V_n = u_n G_n + (1-u_n) V_{n+1},

one forward (survival) and one backward (continuation) sweep. Hardening the
rule replaces u by its induced decision: stop at the first date whose
accumulated mass dominates what remains.
"""

from __future__ import annotations

import numpy as np

from .stopnet import StoppingPolicy, backward_u, forward_u

__all__ = [
    "compose_soft_factors",
    "soft_objective",
    "objective_and_gradient",
    "hard_stopping_time",
    "factorize_indicator",
]


def compose_soft_factors(u: np.ndarray, n_dates: int = None) -> np.ndarray:
    """Soft stopping factors (J, N+1) from probabilities (J, N); rows sum to 1."""
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError(f"u must be (J, N), got shape {u.shape}")
    j, n = u.shape
    if n_dates is not None and n_dates != n:
        raise ValueError(f"u has {n} columns but n_dates={n_dates}")
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("stopping probabilities must lie strictly inside (0,1)")
    floors = np.arange(1 - n, 1, dtype=u.dtype)  # n+1-N ≤ 0 for every date before the horizon
    effective = np.maximum(u, floors[None, :])
    survival = np.cumprod(1.0 - effective, axis=1)
    factors = np.empty((j, n + 1), dtype=u.dtype)
    factors[:, 0] = effective[:, 0]
    factors[:, 1:n] = effective[:, 1:] * survival[:, : n - 1]
    factors[:, n] = survival[:, n - 1]
    return factors


def soft_objective(u: np.ndarray, payoff_table: np.ndarray):
    """Per-path objective and its u-gradient for given probabilities.

    Returns (φ per path (J,), ∂φ_j/∂u_{j,n} (J, N)) via the survival /
    continuation-value sweeps from the module docstring.
    """
    u = np.asarray(u)
    g = np.asarray(payoff_table)
    j, n = u.shape
    if g.shape != (j, n + 1):
        raise ValueError(f"payoff table must be (J, N+1) = ({j},{n + 1}), got {g.shape}")
    cont = np.empty_like(g)
    cont[:, n] = g[:, n]
    for k in range(n - 1, -1, -1):
        cont[:, k] = u[:, k] * g[:, k] + (1.0 - u[:, k]) * cont[:, k + 1]
    survival = np.ones((j, n), dtype=g.dtype)
    np.cumprod(1.0 - u[:, : n - 1], axis=1, out=survival[:, 1:])
    grad_u = survival * (g[:, :n] - cont[:, 1:])
    return cont[:, 0], grad_u


def objective_and_gradient(policy: StoppingPolicy, batch: np.ndarray, payoff_table: np.ndarray, return_aux: bool = False):
    """Training objective φ and its flat parameter gradient on one path batch.

    φ is the batch mean of Σ_n U_n·G_n with train-mode (batch-statistics)
    networks. The backward pass runs date by date on a second forward sweep, so
    peak memory holds a single date's activations regardless of N. With
    ``return_aux`` the probabilities, per-date batch statistics, and u-gradient
    weights come back too (the training loop feeds the statistics into the
    running estimates).
    """
    batch = np.asarray(batch)
    g = np.asarray(payoff_table)
    n = policy.n_dates
    if batch.ndim != 3 or batch.shape[1] != n + 1 or batch.shape[2] != policy.layout.dim:
        raise ValueError(
            f"batch must be (J, {n + 1}, {policy.layout.dim}), got {batch.shape}"
        )
    j = batch.shape[0]
    if g.shape != (j, n + 1):
        raise ValueError(f"payoff table must be ({j},{n + 1}), got {g.shape}")

    u = np.empty((j, n), dtype=np.float64)
    stats = {}
    for k in range(n):
        u_k, cache = forward_u(policy, k, batch[:, k, :], mode="train")
        u[:, k] = u_k
        stats[k] = cache.get("stats")

    phi_paths, grad_u = soft_objective(u, g)
    phi = float(np.mean(phi_paths))
    upstream = grad_u / j

    grad = np.zeros(policy.nu, dtype=policy.dtype)
    for k in range(n):
        _, cache = forward_u(policy, k, batch[:, k, :], mode="train")
        backward_u(policy, k, cache, upstream[:, k], out=grad)

    if return_aux:
        return phi, grad, {"u": u, "stats": stats, "grad_u": grad_u}
    return phi, grad


def hard_stopping_time(factors: np.ndarray) -> np.ndarray:
    """First date whose factor mass dominates the remainder, per path.

    κ = min{n : Σ_{k≤n} U_k ≥ 1 - U_n}. The horizon always qualifies (its
    factor absorbs all remaining mass), so κ ∈ {0..N} is well defined.
    """
    factors = np.asarray(factors)
    if factors.ndim != 2:
        raise ValueError(f"factors must be (J, N+1), got shape {factors.shape}")
    accumulated = np.cumsum(factors, axis=1)
    qualifies = accumulated >= 1.0 - factors
    qualifies[:, -1] = True  # guaranteed mathematically; guard the rounding edge
    return np.argmax(qualifies, axis=1).astype(np.int64)


def factorize_indicator(tau: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Rebuild {0,1} stopping factors from a stopping time on enumerated paths.

    ``tau`` gives the stopping date of each enumerated path; ``paths`` holds
    the full state paths ((P, N+1) scalars or (P, N+1, d)). The date-n
    indicator 1{τ=n} must depend on the path only through its history up to
    date n; any two paths sharing that history but disagreeing on the decision
    make the rule non-adapted, which raises a ValueError naming the date. The
    returned factors follow the same recursion as the soft case with the
    indicators in place of u, hence are one-hot at τ.
    """
    tau = np.asarray(tau)
    paths = np.asarray(paths)
    if paths.ndim == 2:
        paths = paths[:, :, None]
    if paths.ndim != 3:
        raise ValueError(f"paths must be (P, N+1) or (P, N+1, d), got {paths.shape}")
    p, n_plus_1 = paths.shape[0], paths.shape[1]
    n = n_plus_1 - 1
    if tau.shape != (p,):
        raise ValueError(f"tau must be ({p},), got {tau.shape}")
    if np.any(tau < 0) or np.any(tau > n):
        raise ValueError(f"stopping dates must lie in 0..{n}")

    for date in range(n + 1):
        groups = {}
        for i in range(p):
            key = paths[i, : date + 1].tobytes()
            decision = bool(tau[i] == date)
            if key in groups:
                first_i, first_decision = groups[key]
                if first_decision != decision:
                    raise ValueError(
                        f"stopping rule is not adapted: paths {first_i} and {i} share "
                        f"their history through date {date} but disagree on stopping there"
                    )
            else:
                groups[key] = (i, decision)

    indicators = (tau[:, None] == np.arange(n + 1)[None, :]).astype(np.float64)
    factors = np.zeros((p, n + 1), dtype=np.float64)
    spent = np.zeros(p, dtype=np.float64)
    for date in range(n + 1):
        effective = np.maximum(indicators[:, date], date + 1 - n)
        factors[:, date] = effective * (1.0 - spent)
        spent += factors[:, date]
    return factors

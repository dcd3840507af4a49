"""Entropic optimal transport between predicted and demonstrated actions.

The ground cost mixes action and state distances, ||a - a'||^2 +
lam * ||s - s'||^2, so nearby states can be matched softly instead of
requiring exact state alignment. Plans come from log-domain Sinkhorn
iterations; a brute-force Kantorovich solver doubles as the exactness
oracle for small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .autodiff import Tensor, as_tensor, from_op, logsumexp
from .errors import DimensionError

Array = np.ndarray


def _np_logsumexp(m: Array, axis: int) -> Array:
    """logsumexp that tolerates -inf entries (zero-weight marginals)."""
    peak = np.max(m, axis=axis, keepdims=True)
    finite = np.isfinite(peak)
    if not finite.all():
        peak = np.where(finite, peak, 0.0)
    with np.errstate(divide="ignore"):
        out = peak.squeeze(axis) + np.log(np.exp(m - peak).sum(axis=axis))
    if finite.all():
        return out
    return np.where(finite.squeeze(axis), out, -np.inf)


def _pairwise_sq_dists(x: Array, y: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"point sets {x.shape} and {y.shape} do not pair")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cost_matrix(pred_actions: Array, pred_states: Array, expert_actions: Array,
                expert_states: Array, lam: float) -> Array:
    """C[i, j] = ||a_i - a'_j||^2 + lam * ||s_i - s'_j||^2."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    cost = _pairwise_sq_dists(pred_actions, expert_actions)
    if lam > 0:
        cost = cost + lam * _pairwise_sq_dists(pred_states, expert_states)
    return cost


@dataclass
class SinkhornConfig:
    epsilon: float = 0.05
    max_iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass
class TransportPlan:
    """Converged coupling with both the plan cost and the entropic objective.

    ``cost`` is sum(gamma * C) for the rounded, exactly-feasible plan;
    ``reg_cost`` is the optimal entropic objective (dual value), which is
    the quantity whose gradient the envelope rule reproduces.
    """

    gamma: Array
    row_marginals: Array
    col_marginals: Array
    cost: float
    reg_cost: float
    f: Array
    g: Array
    n_iters: int
    converged: bool


def _check_marginals(w: Array, size: int, name: str) -> Array:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},)")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError(f"{name} must be a probability vector")
    return w


def _round_to_feasible(gamma: Array, u: Array, v: Array) -> Array:
    """Project an almost-feasible plan onto exact marginals (scaling + rank-1)."""
    row = gamma.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(row > 0, np.minimum(u / row, 1.0), 1.0)
    gamma = gamma * x[:, None]
    col = gamma.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(col > 0, np.minimum(v / col, 1.0), 1.0)
    gamma = gamma * y[None, :]
    err_r = u - gamma.sum(axis=1)
    err_c = v - gamma.sum(axis=0)
    total = err_r.sum()
    if total > 1e-15:
        gamma = gamma + np.outer(err_r, err_c) / total
    return gamma


def sinkhorn(C: Array, u: Array, v: Array, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Log-domain Sinkhorn for the entropically regularized coupling."""
    cfg = cfg or SinkhornConfig()
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise DimensionError("cost matrix must be 2-D")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    n, m = C.shape
    u = _check_marginals(u, n, "row marginals")
    v = _check_marginals(v, m, "column marginals")
    eps = cfg.epsilon
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
        log_v = np.log(v)
    f = np.zeros(n)
    g = np.zeros(m)
    converged = False
    it = 0
    gamma = np.full((n, m), np.nan)
    # warm start through a short epsilon-scaling schedule; tightly
    # regularized problems converge impractically slowly from cold
    if eps < 0.04:
        level = 0.5
        while level > eps * 1.5:
            for _ in range(25):
                f = -level * _np_logsumexp((g[None, :] - C) / level + log_v[None, :], axis=1)
                g = -level * _np_logsumexp((f[:, None] - C) / level + log_u[:, None], axis=0)
            level *= 0.5
    for it in range(1, cfg.max_iters + 1):
        f = -eps * _np_logsumexp((g[None, :] - C) / eps + log_v[None, :], axis=1)
        g = -eps * _np_logsumexp((f[:, None] - C) / eps + log_u[:, None], axis=0)
        if it % 5 == 0 or it == cfg.max_iters:
            log_gamma = ((f[:, None] + g[None, :] - C) / eps
                         + log_u[:, None] + log_v[None, :])
            gamma = np.exp(log_gamma)
            if np.max(np.abs(gamma.sum(axis=1) - u)) < cfg.tol:
                converged = True
                break
    if np.isnan(gamma).any():
        log_gamma = ((f[:, None] + g[None, :] - C) / eps
                     + log_u[:, None] + log_v[None, :])
        gamma = np.exp(log_gamma)
    dual = float(np.where(u > 0, f * u, 0.0).sum() + np.where(v > 0, g * v, 0.0).sum())
    gamma = _round_to_feasible(gamma, u, v)
    return TransportPlan(
        gamma=gamma,
        row_marginals=u,
        col_marginals=v,
        cost=float((gamma * C).sum()),
        reg_cost=dual,
        f=f,
        g=g,
        n_iters=it,
        converged=converged,
    )


def brute_force_ot(C: Array, u: Array | None = None, v: Array | None = None) -> float:
    """Exact Kantorovich cost on small instances.

    Uniform square problems up to 6x6 are solved by permutation
    enumeration (Birkhoff vertices); other marginals up to n*m <= 36 go
    through an exact LP.
    """
    C = np.asarray(C, dtype=np.float64)
    n, m = C.shape
    u = np.full(n, 1.0 / n) if u is None else _check_marginals(u, n, "row marginals")
    v = np.full(m, 1.0 / m) if v is None else _check_marginals(v, m, "column marginals")
    uniform = (n == m and np.allclose(u, 1.0 / n) and np.allclose(v, 1.0 / m))
    if uniform and n <= 6:
        best = min(sum(C[i, p] for i, p in enumerate(perm))
                   for perm in itertools.permutations(range(n)))
        return float(best / n)
    if n * m <= 36:
        a_eq = np.zeros((n + m, n * m))
        for i in range(n):
            a_eq[i, i * m:(i + 1) * m] = 1.0
        for j in range(m):
            a_eq[n + j, j::m] = 1.0
        res = linprog(C.reshape(-1), A_eq=a_eq, b_eq=np.concatenate([u, v]),
                      bounds=(0, None), method="highs")
        if not res.success:
            raise RuntimeError(f"exact OT solve failed: {res.message}")
        return float(res.fun)
    raise ValueError("instance too large for the exact solver")


def kot_regularizer(policy_actions: Tensor, policy_states: Array,
                    expert_actions: Array, expert_states: Array, lam: float,
                    cfg: SinkhornConfig | None = None,
                    grad_mode: str = "envelope", n_unroll: int = 200) -> Tensor:
    """Differentiable transport cost from policy samples to demonstrations.

    grad_mode "envelope" (default) runs plain Sinkhorn, returns the optimal
    entropic objective, and backpropagates sum_j gamma[i, j] * dC/da_i with
    the plan held fixed; that is the exact gradient of the returned value
    by Danskin's rule. grad_mode "unrolled" differentiates straight through
    a fixed number of log-domain iterations instead (slower; used to
    cross-check gradients).
    """
    cfg = cfg or SinkhornConfig()
    policy_actions = as_tensor(policy_actions)
    pa = policy_actions.value
    n = pa.shape[0]
    m = np.asarray(expert_actions).shape[0]
    if n == 0 or m == 0:
        raise ValueError("need at least one sample on each side")
    u = np.full(n, 1.0 / n)
    v = np.full(m, 1.0 / m)
    expert_actions = np.asarray(expert_actions, dtype=np.float64)

    if grad_mode == "envelope":
        C = cost_matrix(pa, policy_states, expert_actions, expert_states, lam)
        plan = sinkhorn(C, u, v, cfg)
        gamma = plan.gamma

        def vjp(g_out: Array):
            grad_a = 2.0 * (u[:, None] * pa - gamma @ expert_actions)
            return (g_out * grad_a,)

        return from_op(np.asarray(plan.reg_cost), [policy_actions], vjp)

    if grad_mode != "unrolled":
        raise ValueError(f"unknown grad_mode {grad_mode!r}")

    diff = policy_actions.reshape(n, 1, pa.shape[1]) - Tensor(expert_actions)
    C_t = (diff * diff).sum(axis=2)
    if lam > 0:
        C_t = C_t + Tensor(lam * _pairwise_sq_dists(policy_states, expert_states))
    eps = cfg.epsilon
    log_u = Tensor(np.log(u))
    log_v = Tensor(np.log(v))
    f = Tensor(np.zeros(n))
    g = Tensor(np.zeros(m))
    for _ in range(n_unroll):
        f = -eps * logsumexp((g.reshape(1, m) - C_t) * (1.0 / eps) + log_v.reshape(1, m),
                             axis=1)
        g = -eps * logsumexp((f.reshape(n, 1) - C_t) * (1.0 / eps) + log_u.reshape(n, 1),
                             axis=0)
    log_gamma = ((f.reshape(n, 1) + g.reshape(1, m) - C_t) * (1.0 / eps)
                 + log_u.reshape(n, 1) + log_v.reshape(1, m))
    gamma_t = log_gamma.exp()
    return (gamma_t * C_t).sum()

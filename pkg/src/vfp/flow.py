"""Rectified-flow interpolation, flow-matching loss, and ODE sampling.

Convention: straight-line path a_t = (1-t)*a0 + t*a1 with target velocity
a1 - a0; sources a0 are standard normal, targets a1 come from data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Mlp, Tensor, as_tensor, concat, grad
from .errors import DimensionError

Array = np.ndarray


def interpolate(a0: Array, a1: Array, t) -> Array:
    """Point on the straight path from a0 to a1 at time t in [0, 1]."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise DimensionError(f"endpoint shapes differ: {a0.shape} vs {a1.shape}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t must lie in [0, 1]")
    t_col = t.reshape(-1, 1) if a0.ndim == 2 and t.ndim == 1 else t
    return (1.0 - t_col) * a0 + t_col * a1


def oracle_velocity(a0: Array, a1: Array) -> Array:
    """Ground-truth straight-path velocity a1 - a0."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise DimensionError(f"endpoint shapes differ: {a0.shape} vs {a1.shape}")
    return a1 - a0


@dataclass
class FlowBatch:
    """One training batch of interpolation problems."""

    states: Array      # (B, state_dim)
    targets: Array     # (B, action_dim) endpoints a1
    sources: Array     # (B, action_dim) endpoints a0
    times: Array       # (B,) in [0, 1]

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.sources = np.asarray(self.sources, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        n = self.targets.shape[0]
        if n == 0:
            raise ValueError("batch must be nonempty")
        if self.sources.shape != self.targets.shape:
            raise DimensionError("sources and targets must have equal shapes")
        if self.states.shape[0] != n or self.times.shape != (n,):
            raise DimensionError("batch fields must share the leading dimension")
        if np.any(self.times < 0.0) or np.any(self.times > 1.0):
            raise ValueError("times must lie in [0, 1]")

    def __len__(self) -> int:
        return self.targets.shape[0]


class MlpVelocityField:
    """MLP velocity field v(a_t, t, s[, z]) -> action_dim vector."""

    def __init__(self, action_dim: int, state_dim: int, hidden: Sequence[int],
                 rng: np.random.Generator, latent_dim: int = 0,
                 activation: str = "tanh"):
        self.action_dim = action_dim
        self.state_dim = state_dim
        self.latent_dim = latent_dim
        in_dim = action_dim + 1 + state_dim + latent_dim
        self.net = Mlp(in_dim, hidden, action_dim, rng, activation=activation)
        self.n_evals = 0  # forward calls, for NFE accounting

    def __call__(self, a, t, s, z=None) -> Tensor:
        a = as_tensor(a)
        batch = a.shape[0]
        if np.isscalar(t) or np.ndim(t) == 0:
            t_col = np.full((batch, 1), float(t))
        else:
            t_col = np.asarray(t, dtype=np.float64).reshape(batch, 1)
        parts = [a, Tensor(t_col), as_tensor(s)]
        if self.latent_dim:
            if z is None:
                raise DimensionError("field expects a latent input")
            parts.append(as_tensor(z))
        elif z is not None:
            raise DimensionError("field does not take a latent input")
        self.n_evals += 1
        return self.net(concat(parts, axis=1))

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self, prefix: str):
        return self.net.named_parameters(prefix)


def fm_loss(field, batch: FlowBatch, z=None) -> Tensor:
    """Mean squared velocity error over the batch (Eq.-2-style objective)."""
    a_t = interpolate(batch.sources, batch.targets, batch.times)
    target = oracle_velocity(batch.sources, batch.targets)
    v = field(a_t, batch.times, batch.states) if z is None else \
        field(a_t, batch.times, batch.states, z)
    err = v - Tensor(target)
    return (err * err).sum(axis=1).mean()


def euler_sample(field, a0, s, n_steps: int, z=None) -> Tensor:
    """Integrate da/dt = v from t=0 to t=1 with forward Euler.

    Stays on the tape, so the endpoint is differentiable w.r.t. the field
    parameters when a graph is wanted; pass plain arrays otherwise and call
    ``.value`` on the result.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    a = as_tensor(a0)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        v = field(a, k * dt, s) if z is None else field(a, k * dt, s, z)
        a = a + dt * v
    return a


def standard_normal_logpdf(x: Array) -> Array:
    """Row-wise log density of N(0, I)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    return -0.5 * d * math.log(2.0 * math.pi) - 0.5 * np.sum(x * x, axis=-1)


def log_likelihood(field, a1: Array, s: Array, n_steps: int, z=None) -> Array:
    """Exact-divergence change-of-variables log p1(a1), per batch row.

    Integrates the flow backward from t=1 to t=0 with Euler steps and
    accumulates the Jacobian trace computed dimension by dimension through
    the tape. Supported for action_dim <= 4 only.
    """
    a1 = np.atleast_2d(np.asarray(a1, dtype=np.float64))
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    d = a1.shape[1]
    if d > 4:
        raise ValueError("log_likelihood supports action_dim <= 4")
    if n_steps < 10:
        raise ValueError("n_steps must be >= 10")
    dt = 1.0 / n_steps
    a = a1.copy()
    div_integral = np.zeros(a1.shape[0])
    for k in range(n_steps, 0, -1):
        t = k * dt
        a_leaf = Tensor(a, requires_grad=True)
        v = field(a_leaf, t, s) if z is None else field(a_leaf, t, s, z)
        for i in range(d):
            (ga,) = grad(v[:, i].sum(), [a_leaf])
            div_integral += dt * ga[:, i]
        a = a - dt * v.value
    return standard_normal_logpdf(a) - div_integral

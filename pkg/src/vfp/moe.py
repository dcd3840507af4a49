"""Mixture-of-experts velocity decoder with softmax gating over the latent.

Training weighs each expert's squared velocity error by its gate
coefficient; inference commits to the argmax expert and integrates only
that field, so modes never get averaged across experts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Mlp, Tensor, as_tensor, concat, softmax
from .errors import DimensionError
from .flow import MlpVelocityField, euler_sample

Array = np.ndarray


@dataclass
class GatingDecision:
    """Simplex weights plus the committed expert index (lowest-index ties)."""

    weights: Array
    index: int


class GatingNetwork:
    """Maps a latent code to K softmax expert weights."""

    def __init__(self, latent_dim: int, n_experts: int, rng: np.random.Generator,
                 hidden: Sequence[int] = (64,), activation: str = "tanh"):
        self.latent_dim = latent_dim
        self.n_experts = n_experts
        self.net = Mlp(latent_dim, hidden, n_experts, rng, activation=activation)

    def logits(self, z) -> Tensor:
        return self.net(as_tensor(z))

    def __call__(self, z) -> Tensor:
        return softmax(self.logits(z), axis=1)

    def decide(self, z: Array) -> GatingDecision:
        w = self(np.atleast_2d(np.asarray(z, dtype=np.float64))).value[0]
        return GatingDecision(weights=w, index=int(np.argmax(w)))

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self, prefix: str):
        return self.net.named_parameters(prefix)


class FusedGating:
    """Parameter-free gate: the latent itself is the logit vector."""

    def __init__(self, latent_dim: int, n_experts: int):
        if latent_dim != n_experts:
            raise DimensionError("fused gating needs latent_dim == n_experts")
        self.latent_dim = latent_dim
        self.n_experts = n_experts

    def logits(self, z) -> Tensor:
        return as_tensor(z)

    def __call__(self, z) -> Tensor:
        return softmax(as_tensor(z), axis=1)

    def decide(self, z: Array) -> GatingDecision:
        w = self(np.atleast_2d(np.asarray(z, dtype=np.float64))).value[0]
        return GatingDecision(weights=w, index=int(np.argmax(w)))

    def parameters(self):
        return []

    def named_parameters(self, prefix: str):
        return []


class ExpertBank:
    """K independent MLP velocity fields; experts share no parameters."""

    def __init__(self, n_experts: int, action_dim: int, state_dim: int,
                 rng: np.random.Generator, hidden: Sequence[int] = (64, 64),
                 activation: str = "tanh"):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        self.n_experts = n_experts
        self.action_dim = action_dim
        self.state_dim = state_dim
        self.experts = [
            MlpVelocityField(action_dim, state_dim, hidden, rng, activation=activation)
            for _ in range(n_experts)
        ]

    def __getitem__(self, i: int) -> MlpVelocityField:
        return self.experts[i]

    def parameters(self):
        params = []
        for e in self.experts:
            params.extend(e.parameters())
        return params

    def named_parameters(self, prefix: str):
        named = []
        for i, e in enumerate(self.experts):
            named.extend(e.named_parameters(f"{prefix}.expert{i}"))
        return named

    @property
    def n_evals(self) -> int:
        return sum(e.n_evals for e in self.experts)


def moe_loss(gate_weights, experts: ExpertBank, a_t: Array, t: Array, s: Array,
             v_target: Array) -> Tensor:
    """Gate-weighted sum of per-expert squared velocity errors, batch mean.

    Every expert sees the whole batch; its gradient is scaled by its gate
    weight, so a zero weight detaches the expert from this step exactly.
    """
    gate_weights = as_tensor(gate_weights)
    if gate_weights.shape[1] != experts.n_experts:
        raise DimensionError("gate width does not match the expert count")
    target = Tensor(np.asarray(v_target, dtype=np.float64))
    per_expert = []
    for expert in experts.experts:
        err = expert(a_t, t, s) - target
        per_expert.append((err * err).sum(axis=1).reshape(-1, 1))
    errors = concat(per_expert, axis=1)          # (B, K)
    return (gate_weights * errors).sum(axis=1).mean()


def select_and_integrate(gate_weights: Array, experts: ExpertBank, a0, s,
                         n_steps: int) -> Tensor:
    """Integrate each row with its argmax expert only (no expert averaging).

    gate_weights is a plain (B, K) array; the result stays on the tape so
    endpoints are differentiable w.r.t. the selected experts' parameters.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    gate_weights = np.asarray(gate_weights, dtype=np.float64)
    a0 = as_tensor(a0)
    s = np.asarray(s, dtype=np.float64)
    chosen = np.argmax(gate_weights, axis=1)
    pieces = []
    rows = []
    for k in np.unique(chosen):
        idx = np.nonzero(chosen == k)[0]
        pieces.append(euler_sample(experts[int(k)], a0[idx], s[idx], n_steps))
        rows.append(idx)
    order = np.concatenate(rows)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return concat(pieces, axis=0)[inverse]

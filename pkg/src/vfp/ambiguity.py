"""Velocity-ambiguity metrics and executable optimality checks.

Ambiguity is the conditional variance of ground-truth velocities among
interpolation problems that share a conditioning key; it is the loss floor
for any deterministic velocity field on that data. Conditioning keys are
exact for the synthetic generators (state id, plus bucketed time and
interpolant cell when those vary), so the law-of-total-variance identity
holds to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Adam
from .flow import MlpVelocityField, interpolate, oracle_velocity

Array = np.ndarray


@dataclass
class KeyingConfig:
    """How (state, t, a_t) triples are discretized into conditioning keys."""

    n_time_bins: int = 10
    cell_size: float = 0.25


@dataclass
class VelocityPairSet:
    """Sampled interpolation problems: inputs, oracle velocities, labels."""

    a_t: Array                 # (N, action_dim)
    t: Array                   # (N,)
    states: Array              # (N, state_dim)
    state_ids: Array           # (N,) int
    velocities: Array          # (N, action_dim)
    labels: Array | None = None

    def __len__(self) -> int:
        return self.velocities.shape[0]


@dataclass
class AmbiguityReport:
    a_fm: float
    a_vfp: float
    explained: float
    residual: float
    v_amb: float | None = None

    def to_dict(self) -> dict:
        return {
            "a_fm": self.a_fm,
            "a_vfp": self.a_vfp,
            "explained": self.explained,
            "residual": self.residual,
            "v_amb": self.v_amb,
        }


@dataclass
class LowerBoundCheck:
    achieved_loss: float
    floor: float
    slack: float
    mean_prediction_norm: float


def make_pairs(states: Array, actions: Array, state_ids: Array,
               rng: np.random.Generator, labels: Array | None = None,
               fixed_source: Array | None = None,
               fixed_time: float | None = None) -> VelocityPairSet:
    """Draw one interpolation problem per (state, action) record.

    Sources default to N(0, I) and times to U(0, 1); pinning them
    (``fixed_source``/``fixed_time``) produces datasets whose conditioning
    keys are exact, the regime the optimality checks assume.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n, d = actions.shape
    if fixed_source is None:
        a0 = rng.standard_normal((n, d))
    else:
        a0 = np.broadcast_to(np.asarray(fixed_source, dtype=np.float64), (n, d)).copy()
    t = rng.uniform(0.0, 1.0, n) if fixed_time is None else np.full(n, float(fixed_time))
    return VelocityPairSet(
        a_t=interpolate(a0, actions, t),
        t=t,
        states=states,
        state_ids=np.asarray(state_ids, dtype=np.int64),
        velocities=oracle_velocity(a0, actions),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
    )


def pair_keys(pairs: VelocityPairSet, keying: KeyingConfig | None = None) -> list[tuple]:
    keying = keying or KeyingConfig()
    bins = np.minimum((pairs.t * keying.n_time_bins).astype(np.int64),
                      keying.n_time_bins - 1)
    cells = np.floor(pairs.a_t / keying.cell_size).astype(np.int64)
    return [(int(sid), int(b), tuple(cell))
            for sid, b, cell in zip(pairs.state_ids, bins, cells)]


def _group_indices(keys: Sequence[tuple]) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return groups


def _trace_variance(v: Array) -> float:
    mu = v.mean(axis=0)
    return float(np.mean(np.sum((v - mu) ** 2, axis=1)))


def pointwise_ambiguity(pairs: VelocityPairSet,
                        keying: KeyingConfig | None = None) -> dict[tuple, float]:
    """Per-key trace variance of oracle velocities."""
    groups = _group_indices(pair_keys(pairs, keying))
    return {k: _trace_variance(pairs.velocities[idx]) for k, idx in groups.items()}


def global_ambiguity(pairs: VelocityPairSet,
                     keying: KeyingConfig | None = None) -> float:
    """Pair-weighted mean of the per-key variances."""
    groups = _group_indices(pair_keys(pairs, keying))
    n = len(pairs)
    return sum(len(idx) * _trace_variance(pairs.velocities[idx])
               for idx in groups.values()) / n


def decompose(pairs: VelocityPairSet, keying: KeyingConfig | None = None,
              v_amb: float | None = None) -> AmbiguityReport:
    """Split total ambiguity into label-explained and residual parts.

    Within every key group: total variance = mean within-label variance +
    variance of label means (law of total variance, exact algebra).
    """
    if pairs.labels is None:
        raise ValueError("decomposition requires a label per pair")
    groups = _group_indices(pair_keys(pairs, keying))
    n = len(pairs)
    total = 0.0
    residual_term = 0.0
    explained_term = 0.0
    for idx in groups.values():
        v = pairs.velocities[idx]
        labels = pairs.labels[idx]
        mu = v.mean(axis=0)
        total += np.sum((v - mu) ** 2)
        for lab in np.unique(labels):
            vk = v[labels == lab]
            mu_k = vk.mean(axis=0)
            residual_term += np.sum((vk - mu_k) ** 2)
            explained_term += vk.shape[0] * np.sum((mu_k - mu) ** 2)
    a_fm = total / n
    a_vfp = residual_term / n
    explained = explained_term / n
    return AmbiguityReport(
        a_fm=float(a_fm),
        a_vfp=float(a_vfp),
        explained=float(explained),
        residual=float(abs(a_fm - a_vfp - explained)),
        v_amb=v_amb,
    )


def action_space_ambiguity(actions: Array, state_ids: Array) -> float:
    """Mean per-state trace variance of raw actions (action-space floor)."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    groups = _group_indices([(int(s),) for s in state_ids])
    return sum(len(idx) * _trace_variance(actions[idx])
               for idx in groups.values()) / actions.shape[0]


def velocity_action_bridge(v_amb: float, t: float) -> float:
    """Velocity-space ambiguity implied by action variance at time t."""
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie strictly inside (0, 1)")
    return v_amb / (t * (1.0 - t))


def train_field_on_pairs(pairs: VelocityPairSet, rng: np.random.Generator,
                         hidden: Sequence[int] = (64, 64), steps: int = 5000,
                         lr: float = 1e-3, batch_size: int = 64,
                         label_experts: int = 0) -> MlpVelocityField | list[MlpVelocityField]:
    """Fit velocity predictors to a pair set by Adam on the squared error.

    With ``label_experts`` = K > 0, trains one independent field per label
    (the oracle-latent regime); otherwise trains a single field.
    """
    action_dim = pairs.velocities.shape[1]
    state_dim = pairs.states.shape[1]

    def fit_subset(mask: Array) -> MlpVelocityField:
        field = MlpVelocityField(action_dim, state_dim, hidden, rng)
        opt = Adam(field.parameters(), lr=lr)
        idx_all = np.nonzero(mask)[0]
        for _ in range(steps):
            take = rng.choice(idx_all, size=min(batch_size, idx_all.size), replace=True)
            pred = field(pairs.a_t[take], pairs.t[take], pairs.states[take])
            err = pred - pairs.velocities[take]
            loss = (err * err).sum(axis=1).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        return field

    if label_experts <= 0:
        return fit_subset(np.ones(len(pairs), dtype=bool))
    if pairs.labels is None:
        raise ValueError("label-conditioned training requires labels")
    return [fit_subset(pairs.labels == k) for k in range(label_experts)]


def evaluate_field_loss(field, pairs: VelocityPairSet) -> float:
    pred = field(pairs.a_t, pairs.t, pairs.states).value
    return float(np.mean(np.sum((pred - pairs.velocities) ** 2, axis=1)))


def check_lower_bound(pairs: VelocityPairSet, field,
                      keying: KeyingConfig | None = None) -> LowerBoundCheck:
    """Verify a trained deterministic field cannot beat the ambiguity floor."""
    achieved = evaluate_field_loss(field, pairs)
    floor = global_ambiguity(pairs, keying)
    if achieved < floor - 1e-6:
        raise ValueError(
            f"achieved loss {achieved} undercuts the ambiguity floor {floor}")
    pred = field(pairs.a_t, pairs.t, pairs.states).value
    return LowerBoundCheck(
        achieved_loss=achieved,
        floor=floor,
        slack=achieved - floor,
        mean_prediction_norm=float(np.mean(np.linalg.norm(pred, axis=1))),
    )


def check_elimination(pairs: VelocityPairSet, n_modes: int,
                      rng: np.random.Generator, steps: int = 5000,
                      hidden: Sequence[int] = (64, 64)) -> float:
    """Residual loss of the oracle-latent model: one expert per mode label."""
    if pairs.labels is None:
        raise ValueError("elimination check requires mode labels")
    experts = train_field_on_pairs(pairs, rng, hidden=hidden, steps=steps,
                                   label_experts=n_modes)
    total = 0.0
    for k in range(n_modes):
        mask = pairs.labels == k
        if not np.any(mask):
            continue
        sub = VelocityPairSet(pairs.a_t[mask], pairs.t[mask], pairs.states[mask],
                              pairs.state_ids[mask], pairs.velocities[mask])
        total += mask.sum() * evaluate_field_loss(experts[k], sub)
    return total / len(pairs)

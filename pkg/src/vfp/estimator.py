"""Scikit-learn style front end for the policy.

``VFPPolicy`` is a fit/predict estimator over (state, action) pairs, so
the model composes with sklearn tooling (``clone``, ``get_params``, grid
sweeps). ``fit`` trains the full stack; ``predict`` draws one action per
state deterministically from ``random_state``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import make_rng
from .config import TrainConfig
from .envs import Dataset, Trajectory
from .trainer import Trainer

Array = np.ndarray


def _pair_dataset(states: Array, actions: Array) -> Dataset:
    trajectories = [
        Trajectory(states=np.stack([s, s + a]), actions=a[None, :], mode=None)
        for s, a in zip(states, actions)
    ]
    return Dataset(trajectories, state_dim=states.shape[1],
                   action_dim=actions.shape[1])


class VFPPolicy(BaseEstimator):
    """Variational flow-matching policy as an sklearn-style estimator.

    Parameters mirror the training config: ``n_experts`` flow experts
    routed by a latent-conditioned gate, a diffusion prior over the
    latent, and a Sinkhorn transport regularizer weighted by
    ``ot_weight``. The ablation switches (``no_kot``, ``no_moe``,
    ``vanilla_fm``) select the reduced variants.
    """

    def __init__(self, n_experts: int = 4, latent_dim: int | None = None,
                 ot_weight: float = 0.1, state_cost_weight: float = 1.0,
                 kl_weight: float = 0.02, sinkhorn_epsilon: float = 0.05,
                 learning_rate: float = 1e-3, batch_size: int = 64,
                 n_train_steps: int = 20000, inference_steps: int = 1,
                 no_kot: bool = False, no_moe: bool = False,
                 vanilla_fm: bool = False, fused_gating: bool = False,
                 encoder_hidden: tuple[int, ...] = (256, 256, 256),
                 expert_hidden: tuple[int, ...] = (64, 64),
                 random_state: int = 0):
        self.n_experts = n_experts
        self.latent_dim = latent_dim
        self.ot_weight = ot_weight
        self.state_cost_weight = state_cost_weight
        self.kl_weight = kl_weight
        self.sinkhorn_epsilon = sinkhorn_epsilon
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_train_steps = n_train_steps
        self.inference_steps = inference_steps
        self.no_kot = no_kot
        self.no_moe = no_moe
        self.vanilla_fm = vanilla_fm
        self.fused_gating = fused_gating
        self.encoder_hidden = encoder_hidden
        self.expert_hidden = expert_hidden
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            n_experts=self.n_experts,
            latent_dim=self.latent_dim,
            ot_weight=self.ot_weight,
            state_cost_weight=self.state_cost_weight,
            kl_weight=self.kl_weight,
            sinkhorn_epsilon=self.sinkhorn_epsilon,
            lr=self.learning_rate,
            batch_size=self.batch_size,
            steps=self.n_train_steps,
            inference_steps=self.inference_steps,
            no_kot=self.no_kot,
            no_moe=self.no_moe,
            vanilla_fm=self.vanilla_fm,
            fused_gating=self.fused_gating,
            encoder_hidden=tuple(self.encoder_hidden),
            expert_hidden=tuple(self.expert_hidden),
            seed=self.random_state,
        )

    def fit(self, X: Array, y: Array) -> "VFPPolicy":
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        self.n_features_in_ = X.shape[1]
        self.action_dim_ = y.shape[1]
        self.trainer_ = Trainer(self._config(), _pair_dataset(X, y))
        self.history_ = self.trainer_.train()
        self.policy_ = self.trainer_.policy()
        return self

    def _draw(self, X: Array, rng: np.random.Generator) -> Array:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.stack([self.policy_(x, rng) for x in X])

    def predict(self, X: Array) -> Array:
        """One action per state; deterministic given ``random_state``."""
        check_is_fitted(self, "trainer_")
        return self._draw(X, make_rng(self.random_state))

    def sample_actions(self, X: Array, seed: int) -> Array:
        """One stochastic action per state from an explicit seed."""
        check_is_fitted(self, "trainer_")
        return self._draw(X, make_rng(seed))

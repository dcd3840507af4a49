"""Variational posterior over behavior modes and the lightweight diffusion prior.

The posterior encodes (state, action) pairs to a Gaussian over the latent;
the prior is a small DDPM conditioned on state only. The ELBO's KL term is
taken against N(0, I) as a surrogate, and the diffusion prior is fitted
separately by denoising posterior samples (stop-gradient), since its only
job downstream is to pick a representative latent mode.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Mlp, Tensor, as_tensor, concat
from .errors import DimensionError

Array = np.ndarray

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


class PosteriorEncoder:
    """q(z | s, a): shared MLP trunk with mean and log-variance heads."""

    def __init__(self, state_dim: int, action_dim: int, latent_dim: int,
                 rng: np.random.Generator, hidden: Sequence[int] = (256, 256, 256),
                 activation: str = "tanh"):
        if not hidden:
            raise ValueError("encoder needs at least one hidden layer")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.latent_dim = latent_dim
        self._act = activation
        # trunk ends in an activated hidden layer; heads are single linears
        self.trunk = Mlp(state_dim + action_dim, hidden[:-1], hidden[-1],
                         rng, activation=activation)
        self.mean_head = Mlp(hidden[-1], (), latent_dim, rng, activation=activation)
        self.logvar_head = Mlp(hidden[-1], (), latent_dim, rng, activation=activation)

    def __call__(self, s, a) -> tuple[Tensor, Tensor]:
        s = as_tensor(s)
        a = as_tensor(a)
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim:
            raise DimensionError("encoder input dims do not match")
        h = self.trunk(concat([s, a], axis=1))
        h = h.tanh() if self._act == "tanh" else h.relu()
        mean = self.mean_head(h)
        logvar = self.logvar_head(h).clip(LOGVAR_MIN, LOGVAR_MAX)
        return mean, logvar

    def parameters(self):
        return (self.trunk.parameters() + self.mean_head.parameters()
                + self.logvar_head.parameters())

    def named_parameters(self, prefix: str):
        return (self.trunk.named_parameters(f"{prefix}.trunk")
                + self.mean_head.named_parameters(f"{prefix}.mean")
                + self.logvar_head.named_parameters(f"{prefix}.logvar"))


def reparameterize(mean: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """z = mean + std * eps with eps ~ N(0, I); gradients reach both heads."""
    eps = rng.standard_normal(mean.shape)
    return mean + (logvar * 0.5).exp() * Tensor(eps)


def kl_to_standard_normal(mean, logvar) -> Tensor:
    """KL(N(mean, diag exp(logvar)) || N(0, I)), summed over the last axis."""
    mean = as_tensor(mean)
    logvar = as_tensor(logvar)
    var = logvar.exp()
    return 0.5 * (var + mean * mean - 1.0 - logvar).sum(axis=-1)


class DiffusionPrior:
    """p(z | s) as a tiny DDPM over the latent with a handful of steps."""

    def __init__(self, state_dim: int, latent_dim: int, rng: np.random.Generator,
                 n_steps: int = 3, beta_start: float = 0.3, beta_end: float = 0.8,
                 hidden: Sequence[int] = (64, 64), activation: str = "tanh"):
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError("betas must be increasing within (0, 1)")
        self.state_dim = state_dim
        self.latent_dim = latent_dim
        self.n_steps = n_steps
        self.betas = np.linspace(beta_start, beta_end, n_steps)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        # denoiser sees (noisy z, one-hot step index, state)
        self.net = Mlp(latent_dim + n_steps + state_dim, hidden, latent_dim,
                       rng, activation=activation)

    def _step_onehot(self, idx: Array, batch: int) -> Array:
        onehot = np.zeros((batch, self.n_steps))
        onehot[np.arange(batch), idx] = 1.0
        return onehot

    def predict_noise(self, z_noisy, step_idx: Array, s) -> Tensor:
        z_noisy = as_tensor(z_noisy)
        batch = z_noisy.shape[0]
        onehot = Tensor(self._step_onehot(step_idx, batch))
        return self.net(concat([z_noisy, onehot, as_tensor(s)], axis=1))

    def train_loss(self, z_target: Array, s: Array, rng: np.random.Generator) -> Tensor:
        """Noise-prediction MSE at per-sample uniform step indices.

        z_target is treated as a constant (the posterior is not trained
        through the prior loss).
        """
        z_target = np.asarray(z_target, dtype=np.float64)
        batch = z_target.shape[0]
        idx = rng.integers(0, self.n_steps, size=batch)
        eps = rng.standard_normal(z_target.shape)
        ab = self.alpha_bars[idx][:, None]
        z_noisy = np.sqrt(ab) * z_target + np.sqrt(1.0 - ab) * eps
        pred = self.predict_noise(z_noisy, idx, s)
        err = pred - Tensor(eps)
        return (err * err).sum(axis=1).mean()

    def sample(self, s: Array, rng: np.random.Generator) -> Array:
        """Ancestral sampling; returns a plain (batch, latent_dim) array."""
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        batch = s.shape[0]
        z = rng.standard_normal((batch, self.latent_dim))
        for k in range(self.n_steps - 1, -1, -1):
            idx = np.full(batch, k)
            eps_hat = self.predict_noise(z, idx, s).value
            beta = self.betas[k]
            alpha = self.alphas[k]
            ab = self.alpha_bars[k]
            z = (z - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
            if k > 0:
                ab_prev = self.alpha_bars[k - 1]
                sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * beta)
                z = z + sigma * rng.standard_normal(z.shape)
        return z

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self, prefix: str):
        return self.net.named_parameters(prefix)

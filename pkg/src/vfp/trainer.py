"""Joint training of encoder, prior, gate, and experts, plus persistence.

Per step: draw a demonstration batch, interpolation times and sources;
encode the posterior latent; compute the gate-weighted expert velocity
loss (or the plain/monolithic variants); add the KL surrogate, the
denoising prior loss, and the transport regularizer computed between
one-step policy samples and the batch's demonstrations; take one Adam
step over everything. Checkpoints round-trip bitwise: parameters, Adam
moments, RNG state, and the step counter are all restored exactly.
"""

from __future__ import annotations

import json
from typing import IO

import numpy as np

from .autodiff import Adam, Tensor, make_rng
from .config import TrainConfig
from .envs import (Dataset, Env2D, avoiding_env, crossing_env, gen_avoiding,
                   gen_crossing, gen_twotask, twotask_env)
from .errors import NumericError, SchemaError
from .flow import MlpVelocityField, euler_sample, interpolate, oracle_velocity
from .latent import DiffusionPrior, PosteriorEncoder, kl_to_standard_normal, reparameterize
from .moe import ExpertBank, FusedGating, GatingNetwork, moe_loss, select_and_integrate
from .ot import SinkhornConfig, kot_regularizer

CHECKPOINT_SCHEMA = "vfp-ckpt-v1"

LOG_FIELDS = ("step", "fm_loss", "kl", "ot", "prior", "total")


def resolve_dataset(cfg: TrainConfig) -> tuple[Env2D, Dataset]:
    """Environment + demonstrations named by the config."""
    if cfg.dataset_path is not None:
        dataset = Dataset.load_jsonl(cfg.dataset_path)
        return make_env(cfg), dataset
    if cfg.env == "avoiding":
        return gen_avoiding(cfg.env_modes, cfg.env_demos_per_mode,
                            cfg.env_noise, cfg.env_seed)
    if cfg.env == "crossing":
        return gen_crossing(cfg.env_seed)
    return gen_twotask(cfg.env_seed, cfg.env_demos_per_mode, cfg.env_noise)


def make_env(cfg: TrainConfig) -> Env2D:
    if cfg.env == "avoiding":
        return avoiding_env(cfg.env_modes)[0]
    if cfg.env == "crossing":
        return crossing_env()
    return twotask_env()[0]


class Policy:
    """Algorithm-2 action sampler: z from the prior, argmax expert, Euler."""

    def __init__(self, trainer: "Trainer"):
        self.cfg = trainer.cfg
        self.prior = trainer.prior
        self.gate = trainer.gate
        self.bank = trainer.bank
        self.field = trainer.field
        self.action_dim = trainer.action_dim
        self.action_scale = trainer.action_scale
        self._velocity_fields = (list(trainer.bank.experts) if trainer.bank
                                 else [trainer.field])
        self.expert_trace: list[int] = []
        self.reset_counters()

    def reset_counters(self) -> None:
        self.n_actions = 0
        self._eval_base = sum(f.n_evals for f in self._velocity_fields)
        self.expert_trace.clear()

    @property
    def field_evals(self) -> int:
        return sum(f.n_evals for f in self._velocity_fields) - self._eval_base

    @property
    def nfe_per_action(self) -> float:
        return self.field_evals / max(self.n_actions, 1)

    def __call__(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(np.asarray(state, dtype=np.float64))
        z = self.prior.sample(s, rng) if self.prior is not None else None
        a0 = rng.standard_normal((1, self.action_dim))
        n = self.cfg.inference_steps
        if self.bank is not None:
            weights = self.gate(Tensor(z)).value
            expert = int(np.argmax(weights[0]))
            self.expert_trace.append(expert)
            action = euler_sample(self.bank[expert], a0, s, n).value
        elif z is not None:
            action = euler_sample(self.field, a0, s, n, z=Tensor(z)).value
        else:
            action = euler_sample(self.field, a0, s, n).value
        self.n_actions += 1
        return action[0] * self.action_scale


class Trainer:
    def __init__(self, config: TrainConfig, dataset: Dataset, env: Env2D | None = None):
        self.cfg = config.normalized()
        self.dataset = dataset
        self.env = env
        self.states = dataset.flat_states()
        raw_actions = dataset.flat_actions()
        # normalize actions to [-1, 1] per dimension; the flow source is
        # N(0, I), so tiny raw displacements would drown mode structure
        self.action_scale = np.maximum(np.abs(raw_actions).max(axis=0), 1e-8)
        self.actions = raw_actions / self.action_scale
        self.state_dim = self.states.shape[1]
        self.action_dim = self.actions.shape[1]
        self.rng = make_rng(self.cfg.seed)
        self.step_count = 0
        self._build_networks()
        self.opt = Adam([p for _, p in self.named_params], lr=self.cfg.lr)
        self._sinkhorn = SinkhornConfig(epsilon=self.cfg.sinkhorn_epsilon,
                                        max_iters=self.cfg.sinkhorn_max_iters,
                                        tol=self.cfg.sinkhorn_tol)

    def _build_networks(self) -> None:
        cfg = self.cfg
        act = cfg.activation
        self.encoder = None
        self.prior = None
        self.gate = None
        self.bank = None
        self.field = None
        if cfg.use_latent:
            self.encoder = PosteriorEncoder(self.state_dim, self.action_dim,
                                            cfg.latent_dim, self.rng,
                                            hidden=cfg.encoder_hidden, activation=act)
            self.prior = DiffusionPrior(self.state_dim, cfg.latent_dim, self.rng,
                                        n_steps=cfg.prior_steps,
                                        beta_start=cfg.prior_beta_start,
                                        beta_end=cfg.prior_beta_end,
                                        hidden=cfg.prior_hidden, activation=act)
        if cfg.no_moe:
            self.field = MlpVelocityField(self.action_dim, self.state_dim,
                                          cfg.monolith_hidden, self.rng,
                                          latent_dim=cfg.latent_dim, activation=act)
        else:
            if cfg.fused_gating:
                self.gate = FusedGating(cfg.latent_dim, cfg.n_experts)
            else:
                self.gate = GatingNetwork(cfg.latent_dim, cfg.n_experts, self.rng,
                                          hidden=cfg.gating_hidden, activation=act)
            self.bank = ExpertBank(cfg.n_experts, self.action_dim, self.state_dim,
                                   self.rng, hidden=cfg.expert_hidden, activation=act)
        named: list[tuple[str, Tensor]] = []
        if self.encoder is not None:
            named += self.encoder.named_parameters("encoder")
        if self.prior is not None:
            named += self.prior.named_parameters("prior")
        if self.gate is not None:
            named += self.gate.named_parameters("gate")
        if self.bank is not None:
            named += self.bank.named_parameters("experts")
        if self.field is not None:
            named += self.field.named_parameters("field")
        self.named_params = named

    # -- one optimization step -------------------------------------------------

    def train_step(self) -> dict:
        cfg = self.cfg
        rng = self.rng
        n = self.states.shape[0]
        idx = rng.integers(0, n, cfg.batch_size)
        s = self.states[idx]
        a1 = self.actions[idx]
        t = rng.uniform(0.0, 1.0, cfg.batch_size)
        a0 = rng.standard_normal(a1.shape)
        a_t = interpolate(a0, a1, t)
        v_target = oracle_velocity(a0, a1)

        z = None
        kl_term = None
        if self.encoder is not None:
            mean, logvar = self.encoder(s, a1)
            z = reparameterize(mean, logvar, rng)
            kl_term = kl_to_standard_normal(mean, logvar).mean()

        if self.bank is not None:
            weights = self.gate(z)
            fm_term = moe_loss(weights, self.bank, a_t, t, s, v_target)
        else:
            v = (self.field(a_t, t, s, z) if z is not None
                 else self.field(a_t, t, s))
            err = v - Tensor(v_target)
            fm_term = (err * err).sum(axis=1).mean()

        prior_term = None
        if self.prior is not None:
            prior_term = self.prior.train_loss(z.value, s, rng)

        ot_term = None
        if not cfg.no_kot and cfg.ot_weight > 0:
            z_prior = self.prior.sample(s, rng) if self.prior is not None else None
            a0_pol = rng.standard_normal(a1.shape)
            if self.bank is not None:
                w_prior = self.gate(Tensor(z_prior)).value
                samples = select_and_integrate(w_prior, self.bank, a0_pol, s, 1)
            elif z_prior is not None:
                samples = euler_sample(self.field, a0_pol, s, 1, z=Tensor(z_prior))
            else:
                samples = euler_sample(self.field, a0_pol, s, 1)
            ot_term = kot_regularizer(samples, s, a1, s,
                                      cfg.state_cost_weight, self._sinkhorn)

        total = fm_term
        if kl_term is not None:
            ramp = (min(1.0, (self.step_count + 1) / cfg.kl_warmup_steps)
                    if cfg.kl_warmup_steps > 0 else 1.0)
            total = total + cfg.kl_weight * ramp * kl_term
        if prior_term is not None:
            total = total + prior_term
        if ot_term is not None:
            total = total + cfg.ot_weight * ot_term

        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        self.step_count += 1
        return {
            "step": self.step_count,
            "fm_loss": fm_term.item(),
            "kl": kl_term.item() if kl_term is not None else 0.0,
            "ot": ot_term.item() if ot_term is not None else 0.0,
            "prior": prior_term.item() if prior_term is not None else 0.0,
            "total": total.item(),
        }

    def train(self, n_steps: int | None = None, log_stream: IO[str] | None = None,
              log_every: int = 1) -> list[dict]:
        n_steps = self.cfg.steps if n_steps is None else n_steps
        records = []
        for _ in range(n_steps):
            try:
                record = self.train_step()
            except NumericError as exc:
                raise NumericError(
                    f"step {self.step_count + 1}: {exc}") from exc
            records.append(record)
            if log_stream is not None and (record["step"] % log_every == 0
                                           or record["step"] == n_steps):
                log_stream.write(json.dumps(record) + "\n")
        return records

    def policy(self) -> Policy:
        return Policy(self)

    # -- persistence -------------------------------------------------------------

    def save_checkpoint(self, path: str) -> None:
        doc = {
            "schema": CHECKPOINT_SCHEMA,
            "step": self.step_count,
            "config": self.cfg.to_dict(),
            "params": {
                name: {"shape": list(p.shape),
                       "data": [repr(x) for x in p.value.ravel().tolist()]}
                for name, p in self.named_params
            },
            "opt": {
                "t": self.opt.t,
                "m": {name: [repr(x) for x in m.ravel().tolist()]
                      for (name, _), m in zip(self.named_params, self.opt.m)},
                "v": {name: [repr(x) for x in v.ravel().tolist()]
                      for (name, _), v in zip(self.named_params, self.opt.v)},
            },
            "rng_state": self.rng.bit_generator.state,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_checkpoint(cls, path: str, dataset: Dataset | None = None,
                        env: Env2D | None = None) -> "Trainer":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != CHECKPOINT_SCHEMA:
            raise SchemaError(f"expected checkpoint schema {CHECKPOINT_SCHEMA!r}, "
                              f"got {doc.get('schema')!r}")
        cfg = TrainConfig.from_dict(doc["config"])
        if dataset is None:
            env, dataset = resolve_dataset(cfg.normalized())
        trainer = cls(cfg, dataset, env)
        saved = doc["params"]
        names = [name for name, _ in trainer.named_params]
        if set(names) != set(saved):
            raise SchemaError("checkpoint parameters do not match this config")
        for name, p in trainer.named_params:
            entry = saved[name]
            arr = np.array([float(x) for x in entry["data"]])
            p.value = arr.reshape(entry["shape"])
        trainer.opt.load_state_arrays(
            doc["opt"]["t"],
            [np.array([float(x) for x in doc["opt"]["m"][name]]).reshape(p.shape)
             for name, p in trainer.named_params],
            [np.array([float(x) for x in doc["opt"]["v"][name]]).reshape(p.shape)
             for name, p in trainer.named_params],
        )
        trainer.rng.bit_generator.state = doc["rng_state"]
        trainer.step_count = doc["step"]
        return trainer

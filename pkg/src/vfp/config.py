"""Run configuration: one JSON-serializable dataclass drives training.

``vanilla_fm`` normalizes to the composition {no_moe, no_kot, no latent,
single expert}, so the ablation flags compose exactly and the vanilla
baseline shares every code path with the ablated variants.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

ENV_KINDS = ("avoiding", "crossing", "twotask")
ACTIVATIONS = ("tanh", "relu")


@dataclass
class TrainConfig:
    # data
    env: str = "avoiding"
    env_modes: int = 4
    env_demos_per_mode: int = 25
    env_noise: float = 0.02
    env_seed: int = 0
    dataset_path: str | None = None
    # model
    n_experts: int = 4
    latent_dim: int | None = None       # None -> n_experts; 0 -> no latent
    encoder_hidden: tuple[int, ...] = (256, 256, 256)
    expert_hidden: tuple[int, ...] = (64, 64)
    gating_hidden: tuple[int, ...] = (64,)
    prior_hidden: tuple[int, ...] = (64, 64)
    monolith_hidden: tuple[int, ...] | None = None   # None -> 2x expert width
    # aggressive short schedule: after 3 steps the forward marginal is
    # nearly pure noise, so ancestral sampling starts on-distribution
    prior_steps: int = 3
    prior_beta_start: float = 0.3
    prior_beta_end: float = 0.8
    activation: str = "tanh"
    fused_gating: bool = False
    # loss weights
    ot_weight: float = 0.1
    state_cost_weight: float = 1.0
    kl_weight: float = 0.02
    kl_warmup_steps: int = 500   # linear ramp to kl_weight; fights posterior collapse
    sinkhorn_epsilon: float = 0.05
    sinkhorn_max_iters: int = 500
    sinkhorn_tol: float = 1e-6
    # optimization
    lr: float = 1e-3
    batch_size: int = 64
    steps: int = 20000
    seed: int = 0
    # ablations
    no_kot: bool = False
    no_moe: bool = False
    vanilla_fm: bool = False
    # inference
    inference_steps: int = 1

    def validate(self) -> "TrainConfig":
        checks = [
            (self.env in ENV_KINDS, "env", f"must be one of {ENV_KINDS}"),
            (self.env_modes >= 2, "env_modes", "must be >= 2"),
            (self.env_demos_per_mode >= 1, "env_demos_per_mode", "must be >= 1"),
            (self.env_noise >= 0, "env_noise", "must be >= 0"),
            (self.n_experts >= 1, "n_experts", "must be >= 1"),
            (self.latent_dim is None or self.latent_dim >= 0,
             "latent_dim", "must be >= 0"),
            (self.activation in ACTIVATIONS, "activation",
             f"must be one of {ACTIVATIONS}"),
            (self.prior_steps >= 1, "prior_steps", "must be >= 1"),
            (0 < self.prior_beta_start <= self.prior_beta_end < 1,
             "prior_beta_start", "betas must satisfy 0 < start <= end < 1"),
            (self.ot_weight >= 0, "ot_weight", "must be >= 0"),
            (self.state_cost_weight >= 0, "state_cost_weight", "must be >= 0"),
            (self.kl_weight >= 0, "kl_weight", "must be >= 0"),
            (self.kl_warmup_steps >= 0, "kl_warmup_steps", "must be >= 0"),
            (self.sinkhorn_epsilon > 0, "sinkhorn_epsilon", "must be > 0"),
            (self.sinkhorn_max_iters >= 1, "sinkhorn_max_iters", "must be >= 1"),
            (self.sinkhorn_tol > 0, "sinkhorn_tol", "must be > 0"),
            (self.lr > 0, "lr", "must be > 0"),
            (self.batch_size >= 1, "batch_size", "must be >= 1"),
            (self.steps >= 0, "steps", "must be >= 0"),
            (self.inference_steps >= 1, "inference_steps", "must be >= 1"),
        ]
        for ok, field_name, message in checks:
            if not ok:
                raise ConfigError(f"{field_name}: {message}")
        return self

    def normalized(self) -> "TrainConfig":
        """Resolve flag implications and defaults into concrete values."""
        cfg = self
        if cfg.vanilla_fm:
            cfg = replace(cfg, no_moe=True, no_kot=True, latent_dim=0, n_experts=1)
        if cfg.latent_dim is None:
            cfg = replace(cfg, latent_dim=cfg.n_experts)
        if cfg.monolith_hidden is None:
            cfg = replace(cfg,
                          monolith_hidden=tuple(2 * h for h in cfg.expert_hidden))
        cfg.validate()
        if cfg.latent_dim == 0 and not cfg.no_moe:
            raise ConfigError("latent_dim: gated experts need a latent (got 0)")
        if cfg.fused_gating and cfg.latent_dim != cfg.n_experts:
            raise ConfigError("fused_gating: requires latent_dim == n_experts")
        return cfg

    @property
    def use_latent(self) -> bool:
        return (self.latent_dim or 0) > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("encoder_hidden", "expert_hidden", "gating_hidden",
                    "prior_hidden", "monolith_hidden"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"{key}: unknown config field")
            if key.endswith("_hidden") and value is not None:
                value = tuple(int(v) for v in value)
            kwargs[key] = value
        try:
            return cls(**kwargs).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str) -> "TrainConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, overrides: list[str]) -> "TrainConfig":
        """Apply ``key=value`` strings on top of this config."""
        data = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"{item}: overrides must look like key=value")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key not in data:
                raise ConfigError(f"{key}: unknown config field")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw  # bare strings (e.g. env names, paths)
            data[key] = value
        return TrainConfig.from_dict(data)

"""Variational flow-matching policy with MoE decoding and OT regularization."""

from .autodiff import Adam, Mlp, Tensor, make_rng
from .config import TrainConfig
from .envs import Dataset, Env2D, evaluate, gen_avoiding, gen_crossing, gen_twotask
from .estimator import VFPPolicy
from .trainer import Trainer

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Dataset",
    "Env2D",
    "Mlp",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "VFPPolicy",
    "evaluate",
    "gen_avoiding",
    "gen_crossing",
    "gen_twotask",
    "make_rng",
    "__version__",
]

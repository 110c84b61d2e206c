"""Adversary-aware local-global attended bad actor detection."""

from .attacks import AttackSpec, apply_attack, generate_post
from .data import RawUser, UserSequence, Vocab, gen_synthetic, kfold_split, load_corpus, preprocess
from .losses import LossBundle, cross_entropy, info_nce, total_loss
from .model import ModelConfig, classify, encode_post, encode_sequence, forward, init_params, project
from .tensor import Tensor
from .training import MetricsReport, TrainConfig, ablate, evaluate, robustness_eval, sweep, train

__all__ = [
    "AttackSpec",
    "LossBundle",
    "MetricsReport",
    "ModelConfig",
    "RawUser",
    "Tensor",
    "TrainConfig",
    "UserSequence",
    "Vocab",
    "ablate",
    "apply_attack",
    "classify",
    "cross_entropy",
    "encode_post",
    "encode_sequence",
    "evaluate",
    "forward",
    "gen_synthetic",
    "generate_post",
    "info_nce",
    "init_params",
    "kfold_split",
    "load_corpus",
    "preprocess",
    "project",
    "robustness_eval",
    "sweep",
    "total_loss",
    "train",
]

"""Classifiers and victim-side preprocessing."""

from .mlp import InputLossSpec, Mlp, MlpConfig, prune_and_finetune
from .forest import Forest, ForestConfig
from .ordinal import build_vocabulary, ordinal_encode

__all__ = [
    "InputLossSpec",
    "Mlp",
    "MlpConfig",
    "prune_and_finetune",
    "Forest",
    "ForestConfig",
    "build_vocabulary",
    "ordinal_encode",
]

"""Backdoor poisoning toolkit for mixed-type tabular data.

Reversible frequency encoding turns categorical features into reals the
attacker can optimize over; a single universal perturbation is crafted
against a surrogate model, injected into a fraction of the training set
and reverted back to ordinary category tokens for release. The package
also ships the evaluation metrics and a suite of defenses to measure the
attack against.
"""

from . import attack, data, datagen, defenses, encoding, metrics, models, pipeline
from .attack import AttackConfig, PoisonPlan, Trigger
from .data import Dataset, FeatureStats, Schema, SplitSpec
from .encoding import EncodingBook, conv, fit, revert
from .metrics import Rate
from .pipeline import ExperimentSpec, MlpParams, ForestParams, run_experiment

__version__ = "0.1.0"

__all__ = [
    "attack", "data", "datagen", "defenses", "encoding", "metrics", "models", "pipeline",
    "AttackConfig", "PoisonPlan", "Trigger",
    "Dataset", "FeatureStats", "Schema", "SplitSpec",
    "EncodingBook", "conv", "fit", "revert",
    "Rate",
    "ExperimentSpec", "MlpParams", "ForestParams", "run_experiment",
    "__version__",
]

"""End-to-end experiment orchestration.

One call takes a raw train/test split through the whole chain: attacker
view, frequency encoding, surrogate training, trigger optimization,
poisoning, release, victim training on the victim's own ordinal
preprocessing, and evaluation. The victim can be the white-box MLP or a
black-box random forest trained purely on the released file.

Metrics are computed on an evaluation slice of the test split; the rest
of the test split is reserved as the defender's clean validation data so
defense runs never score on rows they tuned on.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import (
    AttackConfig,
    PoisonPlan,
    Trigger,
    apply_trigger_released,
    optimize_trigger,
    poison_release,
    restrict_attacker_view,
    sample_poison_plan,
    select_candidates,
    snap_keys_for,
)
from .data import Dataset, FeatureStats, SplitSpec, compute_stats, split
from .encoding import EncodingBook, conv, fit
from .errors import ConfigError
from .metrics import Rate, accuracy, asr_from_predictions
from .models import Forest, ForestConfig, Mlp, MlpConfig, build_vocabulary, ordinal_encode

# Seed stream tags so the same base seed never feeds two purposes.
SEED_SURROGATE = 2
SEED_VICTIM = 3
SEED_DEFENSE_SPLIT = 11


@dataclass(frozen=True)
class MlpParams:
    """Architecture and SGD settings, independent of data shape."""

    hidden: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-2
    epochs: int = 30
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0

    def to_config(self, n_features: int, n_classes: int, seed: int) -> MlpConfig:
        return MlpConfig(
            n_features=n_features, n_classes=n_classes, hidden=tuple(self.hidden),
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, momentum=self.momentum,
            weight_decay=self.weight_decay, seed=seed,
        )


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    max_depth: int | None = 14
    min_leaf: int = 2
    feature_subsample: int | str = "sqrt"
    bootstrap: bool = True

    def to_config(self, seed: int) -> ForestConfig:
        return ForestConfig(
            n_trees=self.n_trees, max_depth=self.max_depth, min_leaf=self.min_leaf,
            feature_subsample=self.feature_subsample, bootstrap=self.bootstrap, seed=seed,
        )


@dataclass(frozen=True)
class ExperimentSpec:
    attack: AttackConfig
    surrogate: MlpParams = MlpParams()
    victim_kind: str = "mlp"
    victim_mlp: MlpParams = MlpParams()
    victim_forest: ForestParams = ForestParams()
    defense_val_fraction: float = 0.25
    experiment_id: str = "exp"
    deterministic: bool = True

    def __post_init__(self):
        if self.victim_kind not in ("mlp", "forest"):
            raise ConfigError(f"unknown victim kind {self.victim_kind!r}")
        if not 0.0 < self.defense_val_fraction < 1.0:
            raise ConfigError("defense_val_fraction must lie in (0, 1)")


@dataclass
class ExperimentResult:
    """Everything an experiment produced, plus the headline numbers."""

    spec: ExperimentSpec
    book: EncodingBook
    stats: FeatureStats
    surrogate: Mlp
    trigger: Trigger
    plan: PoisonPlan
    released: Dataset
    vocab_clean: dict[str, list[str]]
    vocab_released: dict[str, list[str]]
    clean_model: object
    victim: object
    ba: Rate
    cda: Rate
    asr: Rate
    asr_all: Rate
    n_train: int
    n_test: int
    n_eval: int
    timings: dict[str, float] | None
    # victim-space matrices kept for defense runs
    X_train_victim: np.ndarray = field(repr=False, default=None)
    y_train_victim: np.ndarray = field(repr=False, default=None)
    X_val: np.ndarray = field(repr=False, default=None)
    y_val: np.ndarray = field(repr=False, default=None)
    X_eval: np.ndarray = field(repr=False, default=None)
    y_eval: np.ndarray = field(repr=False, default=None)
    X_eval_triggered: np.ndarray = field(repr=False, default=None)

    def report_dict(self) -> dict:
        counts = {
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_eval": self.n_eval,
            "n_poisoned": int(len(self.plan.indices)),
            "n_already_target": self.plan.n_already_target,
            "n_picked": self.trigger.n_picked,
        }
        return {
            "experiment_id": self.spec.experiment_id,
            "seed": self.spec.attack.seed,
            "victim_kind": self.spec.victim_kind,
            "target_label": self.spec.attack.target_label,
            "epsilon": self.spec.attack.epsilon,
            "mu": self.spec.attack.mu,
            "ba": self.ba.to_dict(),
            "cda": self.cda.to_dict(),
            "asr": self.asr.to_dict(),
            "asr_all": self.asr_all.to_dict(),
            "counts": counts,
            "timings": self.timings,
        }


def _train_victim(kind: str, spec: ExperimentSpec, X: np.ndarray, y: np.ndarray,
                  n_classes: int, seed: int):
    if kind == "mlp":
        cfg = spec.victim_mlp.to_config(X.shape[1], n_classes, seed)
        return Mlp(cfg).fit(X, y)
    cfg = spec.victim_forest.to_config(seed)
    return Forest(cfg, n_classes).fit(X, y)


def carve_defense_split(test_raw: Dataset, attack_seed: int,
                        defense_val_fraction: float) -> tuple[Dataset, Dataset]:
    """(defender clean validation, metric evaluation) slices of the test set."""
    return split(
        test_raw,
        SplitSpec(
            test_fraction=1.0 - defense_val_fraction,
            seed=attack_seed * 1000003 + SEED_DEFENSE_SPLIT,
            stratified=True,
        ),
    )


def run_experiment(train_raw: Dataset, test_raw: Dataset, spec: ExperimentSpec) -> ExperimentResult:
    """Full attack pipeline; see the module docstring for the stages."""
    cfg = spec.attack
    timings: dict[str, float] = {}
    t0 = time.perf_counter()

    # attacker side: view, encoding, surrogate, trigger
    view = restrict_attacker_view(train_raw, cfg.attacker_data_fraction, cfg.seed)
    book = fit(view)
    view_enc = conv(view, book)
    stats = compute_stats(view_enc)
    X_view = view_enc.matrix()
    y_view = view_enc.labels
    n_classes = train_raw.schema.n_classes
    surrogate_seed = cfg.seed * 1000003 + SEED_SURROGATE
    surrogate = Mlp(spec.surrogate.to_config(X_view.shape[1], n_classes, surrogate_seed)).fit(X_view, y_view)
    timings["surrogate_fit"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    picked = select_candidates(surrogate, X_view, y_view, cfg.target_label, cfg.mu)
    keys = snap_keys_for(train_raw.schema.kinds, train_raw.schema.feature_names, book)
    trigger = optimize_trigger(surrogate, X_view[picked], stats, keys, cfg)
    timings["trigger_opt"] = time.perf_counter() - t1

    # poisoning and release on the full training set
    t2 = time.perf_counter()
    plan = sample_poison_plan(train_raw.n_rows, train_raw.labels, cfg)
    released = poison_release(train_raw, plan, trigger, book)
    timings["poison_release"] = time.perf_counter() - t2

    # victim side: ordinal preprocessing, training on released vs clean
    t3 = time.perf_counter()
    vocab_released = build_vocabulary(released)
    vocab_clean = build_vocabulary(train_raw)
    train_victim = ordinal_encode(released, vocab_released)
    train_clean = ordinal_encode(train_raw, vocab_clean)
    Xp, yp = train_victim.matrix(), train_victim.labels
    Xc, yc = train_clean.matrix(), train_clean.labels
    victim_seed = cfg.seed * 1000003 + SEED_VICTIM
    victim = _train_victim(spec.victim_kind, spec, Xp, yp, n_classes, victim_seed)
    clean_model = _train_victim(spec.victim_kind, spec, Xc, yc, n_classes, victim_seed)
    timings["victim_fit"] = time.perf_counter() - t3

    # evaluation on the eval slice; the rest is the defender's clean val
    t4 = time.perf_counter()
    val_raw, eval_raw = carve_defense_split(test_raw, cfg.seed, spec.defense_val_fraction)
    X_eval = ordinal_encode(eval_raw, vocab_released).matrix()
    y_eval = eval_raw.labels
    X_eval_clean_vocab = ordinal_encode(eval_raw, vocab_clean).matrix()
    X_val = ordinal_encode(val_raw, vocab_released).matrix()
    y_val = val_raw.labels

    ba = accuracy(clean_model.predict(X_eval_clean_vocab), y_eval)
    cda = accuracy(victim.predict(X_eval), y_eval)
    triggered_raw = apply_trigger_released(eval_raw, trigger, book)
    X_eval_trig = ordinal_encode(triggered_raw, vocab_released).matrix()
    preds_trig = victim.predict(X_eval_trig)
    asr = asr_from_predictions(preds_trig, y_eval, cfg.target_label)
    asr_all = asr_from_predictions(preds_trig, y_eval, cfg.target_label, include_target_rows=True)
    timings["evaluation"] = time.perf_counter() - t4

    return ExperimentResult(
        spec=spec, book=book, stats=stats, surrogate=surrogate, trigger=trigger,
        plan=plan, released=released, vocab_clean=vocab_clean,
        vocab_released=vocab_released, clean_model=clean_model, victim=victim,
        ba=ba, cda=cda, asr=asr, asr_all=asr_all,
        n_train=train_raw.n_rows, n_test=test_raw.n_rows, n_eval=len(y_eval),
        timings=None if spec.deterministic else timings,
        X_train_victim=Xp, y_train_victim=yp,
        X_val=X_val, y_val=y_val,
        X_eval=X_eval, y_eval=y_eval, X_eval_triggered=X_eval_trig,
    )


def run_blackbox_transfer(train_raw: Dataset, test_raw: Dataset,
                          spec: ExperimentSpec) -> ExperimentResult:
    """Same pipeline with a forest victim that only ever sees released data."""
    forest_spec = ExperimentSpec(
        attack=spec.attack, surrogate=spec.surrogate, victim_kind="forest",
        victim_mlp=spec.victim_mlp, victim_forest=spec.victim_forest,
        defense_val_fraction=spec.defense_val_fraction,
        experiment_id=spec.experiment_id, deterministic=spec.deterministic,
    )
    return run_experiment(train_raw, test_raw, forest_spec)


def config_digest(config: dict) -> str:
    """Stable hash of a JSON-serializable config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()

"""Universal trigger crafting and dataset poisoning.

The attacker fits the frequency encoding, trains a surrogate on the
encoded data and then optimizes a single additive perturbation delta that
drags *every* non-target row toward the target class while an elastic-net
penalty keeps perturbed rows close to the per-feature mode. Inside the
optimization rows are only clipped to the observed feature bounds, with a
straight-through gradient; snapping categorical dimensions onto valid
encoded values happens after convergence, when the trigger is applied.

Poisoning replaces a uniformly chosen round(epsilon * N) slice of the
training set with triggered, target-labeled copies; reverting the result
yields a released dataset whose categorical cells are ordinary tokens
again.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import CATEGORICAL, Dataset, FeatureStats, round_half_up, _snap_column
from .encoding import EncodingBook, revert
from .errors import (
    ConfigError,
    DataError,
    NoNonTargetRows,
    NoProgress,
    NonFiniteLoss,
)
from .models.mlp import InputLossSpec, Mlp

TRIGGER_FORMAT = "tabpoison-trigger/1"


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters of the trigger optimization and poisoning step."""

    target_label: int
    epsilon: float = 0.05
    mu: float = 1.0
    beta: float = 0.1
    lam: float = 0.1
    learning_rate: float = 0.1
    max_iters: int = 2000
    tol: float = 1e-6
    patience: int = 50
    min_learning_rate: float = 1e-4
    attacker_data_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ConfigError("mu must lie in (0, 1]")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in [0, 1)")
        if not 0.0 < self.attacker_data_fraction <= 1.0:
            raise ConfigError("attacker_data_fraction must lie in (0, 1]")
        if self.learning_rate <= 0 or self.max_iters < 1 or self.patience < 1:
            raise ConfigError("bad optimizer settings")
        if self.beta < 0 or self.lam < 0:
            raise ConfigError("penalty weights must be non-negative")


@dataclass
class Trigger:
    """A crafted universal perturbation plus everything needed to apply it."""

    delta: np.ndarray
    target: int
    lower: np.ndarray
    upper: np.ndarray
    mode: np.ndarray
    snap_keys: dict[int, np.ndarray]  # categorical feature index -> valid values
    loss_trace: list[float]
    config: AttackConfig
    n_picked: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0] if self.loss_trace else math.nan

    @property
    def final_loss(self) -> float:
        return min(self.loss_trace) if self.loss_trace else math.nan

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Add delta, clip to bounds, snap categorical dims to valid values."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.clip(X + self.delta[None, :], self.lower[None, :], self.upper[None, :])
        for j, keys in self.snap_keys.items():
            out[:, j] = _snap_column(out[:, j], keys)
        return out

    def to_dict(self) -> dict:
        return {
            "format": TRIGGER_FORMAT,
            "target": self.target,
            "delta": [repr(float(v)) for v in self.delta],
            "bounds": {
                "lower": [repr(float(v)) for v in self.lower],
                "upper": [repr(float(v)) for v in self.upper],
            },
            "mode": [repr(float(v)) for v in self.mode],
            "snap_keys": {
                str(j): [repr(float(v)) for v in keys] for j, keys in self.snap_keys.items()
            },
            "loss_trace": [repr(float(v)) for v in self.loss_trace],
            "config": asdict(self.config),
            "n_picked": self.n_picked,
        }

    @staticmethod
    def from_dict(d: dict) -> "Trigger":
        if d.get("format") != TRIGGER_FORMAT:
            raise DataError(f"unsupported trigger format {d.get('format')!r}")
        return Trigger(
            delta=np.asarray([float(v) for v in d["delta"]]),
            target=int(d["target"]),
            lower=np.asarray([float(v) for v in d["bounds"]["lower"]]),
            upper=np.asarray([float(v) for v in d["bounds"]["upper"]]),
            mode=np.asarray([float(v) for v in d["mode"]]),
            snap_keys={
                int(j): np.asarray([float(v) for v in keys])
                for j, keys in d["snap_keys"].items()
            },
            loss_trace=[float(v) for v in d["loss_trace"]],
            config=AttackConfig(**d["config"]),
            n_picked=int(d.get("n_picked", 0)),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "Trigger":
        with open(path) as fh:
            return Trigger.from_dict(json.load(fh))


def snap_keys_for(schema_kinds, feature_names, book: EncodingBook) -> dict[int, np.ndarray]:
    """Valid encoded values per categorical feature index."""
    keys = {}
    for j, kind in enumerate(schema_kinds):
        if kind == CATEGORICAL:
            keys[j] = book.table(feature_names[j]).keys.copy()
    return keys


def select_candidates(model: Mlp, X: np.ndarray, y: np.ndarray, target: int,
                      mu: float) -> np.ndarray:
    """Indices of the non-target rows the surrogate finds closest to the target.

    Rows are scored by the surrogate's softmax probability of the target
    class and the top ceil(mu * |non-target|) are returned, ties broken by
    row index so the pick is reproducible.
    """
    y = np.asarray(y, dtype=np.int64)
    eligible = np.flatnonzero(y != target)
    if len(eligible) == 0:
        raise NoNonTargetRows(f"no rows outside class {target}")
    scores = model.predict_proba(X[eligible])[:, target]
    k = int(math.ceil(mu * len(eligible)))
    order = np.lexsort((eligible, -scores))
    return eligible[order[:k]]


def trigger_loss(model: Mlp, X: np.ndarray, delta: np.ndarray, target: int,
                 beta: float, lam: float, mode: np.ndarray,
                 lower: np.ndarray, upper: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean attack loss over a batch and its gradient w.r.t. delta.

    Perturbed rows are clipped to the bounds; the clip passes gradient
    through where x + delta is inside (or exactly on) the bounds and blocks
    it outside. No snapping happens here: the objective stays smooth apart
    from the ReLU and clip kinks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    shifted = X + delta[None, :]
    x_hat = np.clip(shifted, lower[None, :], upper[None, :])
    passthrough = (shifted >= lower[None, :]) & (shifted <= upper[None, :])
    spec = InputLossSpec(target=target, beta=beta, lam=lam, mode=mode)
    losses, grads = model.input_loss_and_grad(x_hat, spec)
    loss = float(losses.mean())
    grad = (grads * passthrough).mean(axis=0)
    return loss, grad


def apply_trigger(X: np.ndarray, trigger: Trigger) -> np.ndarray:
    """Clip-and-snap application of a trigger to encoded rows."""
    return trigger.apply(X)


def fooling_rate(model: Mlp, X: np.ndarray, trigger: Trigger) -> float:
    """Fraction of rows the surrogate sends to the target once triggered."""
    preds = model.predict(trigger.apply(X))
    return float(np.mean(preds == trigger.target))


def optimize_trigger(model: Mlp, X_picked: np.ndarray, stats: FeatureStats,
                     snap_keys: dict[int, np.ndarray], cfg: AttackConfig) -> Trigger:
    """Gradient descent on the universal perturbation, starting from zero.

    The learning rate halves whenever the best loss stalls for `patience`
    iterations; the run stops once it stalls at the minimum rate or
    max_iters is hit. A run that neither reduces the loss nor fools the
    surrogate on at least half the picked rows raises NoProgress rather
    than handing back a useless trigger.
    """
    X_picked = np.atleast_2d(np.asarray(X_picked, dtype=np.float64))
    if len(X_picked) == 0:
        raise NoNonTargetRows("empty picked set")
    lower, upper, mode = stats.min, stats.max, stats.mode
    d = X_picked.shape[1]
    delta = np.zeros(d)
    best_delta = delta.copy()
    best_loss = math.inf
    lr = cfg.learning_rate
    last_gain = 0
    trace: list[float] = []

    for it in range(cfg.max_iters):
        loss, grad = trigger_loss(
            model, X_picked, delta, cfg.target_label, cfg.beta, cfg.lam, mode, lower, upper
        )
        if not (math.isfinite(loss) and np.isfinite(grad).all()):
            raise NonFiniteLoss(f"trigger loss became non-finite at iteration {it}")
        trace.append(loss)
        if loss < best_loss - cfg.tol:
            last_gain = it
        if loss < best_loss:
            best_loss = loss
            best_delta = delta.copy()
        if it - last_gain >= cfg.patience:
            if lr > cfg.min_learning_rate:
                lr *= 0.5
                last_gain = it  # give the smaller step a fresh window
            else:
                break
        delta = delta - lr * grad

    trigger = Trigger(
        delta=best_delta, target=cfg.target_label, lower=lower.copy(), upper=upper.copy(),
        mode=mode.copy(), snap_keys={j: k.copy() for j, k in snap_keys.items()},
        loss_trace=trace, config=cfg, n_picked=len(X_picked),
    )
    improved = trace[0] - best_loss >= cfg.tol
    if not improved and fooling_rate(model, X_picked, trigger) < 0.5:
        raise NoProgress(
            f"no loss reduction after {len(trace)} iterations "
            f"(initial {trace[0]:.6f}, best {best_loss:.6f})",
            loss_trace=trace,
        )
    return trigger


@dataclass
class PoisonPlan:
    """Which training rows were replaced, and with what label."""

    indices: np.ndarray
    target: int
    epsilon: float
    seed: int
    n_rows: int
    n_already_target: int

    def to_dict(self) -> dict:
        return {
            "indices": [int(i) for i in self.indices],
            "target": self.target,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "n_rows": self.n_rows,
            "n_already_target": self.n_already_target,
        }

    @staticmethod
    def from_dict(d: dict) -> "PoisonPlan":
        return PoisonPlan(
            indices=np.asarray(d["indices"], dtype=np.int64),
            target=int(d["target"]),
            epsilon=float(d["epsilon"]),
            seed=int(d["seed"]),
            n_rows=int(d["n_rows"]),
            n_already_target=int(d["n_already_target"]),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "PoisonPlan":
        with open(path) as fh:
            return PoisonPlan.from_dict(json.load(fh))


def sample_poison_plan(n_rows: int, labels: np.ndarray, cfg: AttackConfig) -> PoisonPlan:
    """Uniform random choice of round(epsilon * n) distinct row indices.

    Rows already labeled with the target are eligible too; their count is
    recorded so reports can show how much of the budget was spent on them.
    """
    m = round_half_up(cfg.epsilon * n_rows)
    if m > n_rows:
        raise DataError(f"epsilon {cfg.epsilon} asks for {m} of {n_rows} rows")
    rng = np.random.default_rng([cfg.seed, 7919])  # stream reserved for row choice
    indices = np.sort(rng.choice(n_rows, size=m, replace=False))
    labels = np.asarray(labels, dtype=np.int64)
    return PoisonPlan(
        indices=indices, target=cfg.target_label, epsilon=cfg.epsilon, seed=cfg.seed,
        n_rows=n_rows, n_already_target=int(np.sum(labels[indices] == cfg.target_label)),
    )


def build_poisoned(train: Dataset, trigger: Trigger, cfg: AttackConfig) -> tuple[Dataset, PoisonPlan]:
    """Poison an encoded training set in place of the planned rows."""
    if not train.encoded:
        raise DataError("build_poisoned expects an encoded dataset")
    plan = sample_poison_plan(train.n_rows, train.labels, cfg)
    X = train.matrix()
    X[plan.indices] = trigger.apply(X[plan.indices])
    labels = train.labels.copy()
    labels[plan.indices] = cfg.target_label
    cols = [X[:, j].copy() for j in range(train.n_features)]
    return Dataset(train.schema, cols, labels, encoded=True), plan


def release_dataset(poisoned: Dataset, book: EncodingBook) -> Dataset:
    """Revert an encoded (poisoned) dataset back to ordinary tokens."""
    return revert(poisoned, book)


def restrict_attacker_view(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Uniform random subset of round(fraction * n) rows the attacker sees."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return ds
    m = round_half_up(fraction * ds.n_rows)
    if m == 0:
        raise DataError(f"fraction {fraction} leaves the attacker no rows")
    rng = np.random.default_rng([seed, 104729])  # stream reserved for the view
    return ds.take(np.sort(rng.choice(ds.n_rows, size=m, replace=False)))


# --- released-form application ---------------------------------------------

def _transform_raw_row(ds: Dataset, i: int, trigger: Trigger, book: EncodingBook) -> list:
    """Trigger one raw row: encode known cells, shift, snap, decode.

    Category tokens absent from the attacker's book cannot be encoded, so
    those cells pass through untouched; with a full-view book this path is
    cell-for-cell identical to poisoning in encoded space and reverting.
    """
    out = []
    for j, name in enumerate(ds.schema.feature_names):
        v = ds.columns[j][i]
        if ds.schema.kinds[j] != CATEGORICAL:
            shifted = float(v) + trigger.delta[j]
            out.append(min(max(shifted, trigger.lower[j]), trigger.upper[j]))
            continue
        table = book.table(name)
        tok = str(v)
        if tok not in table.forward:
            out.append(tok)
            continue
        enc = table.forward[tok]
        shifted = min(max(enc + trigger.delta[j], trigger.lower[j]), trigger.upper[j])
        out.append(table.decode_value(table.snap(shifted)))
    return out


def poison_release(train_raw: Dataset, plan: PoisonPlan, trigger: Trigger,
                   book: EncodingBook) -> Dataset:
    """Released dataset: planned rows triggered and relabeled, rest verbatim."""
    if train_raw.encoded:
        raise DataError("poison_release expects a raw dataset")
    cols = [c.copy() for c in train_raw.columns]
    labels = train_raw.labels.copy()
    for i in plan.indices:
        row = _transform_raw_row(train_raw, int(i), trigger, book)
        for j in range(train_raw.n_features):
            cols[j][i] = row[j]
        labels[i] = plan.target
    return Dataset(train_raw.schema, cols, labels, encoded=False)


def apply_trigger_released(ds_raw: Dataset, trigger: Trigger, book: EncodingBook) -> Dataset:
    """Trigger every row of a raw dataset, keeping labels (for evaluation)."""
    if ds_raw.encoded:
        raise DataError("apply_trigger_released expects a raw dataset")
    cols = [c.copy() for c in ds_raw.columns]
    for i in range(ds_raw.n_rows):
        row = _transform_raw_row(ds_raw, i, trigger, book)
        for j in range(ds_raw.n_features):
            cols[j][i] = row[j]
    return Dataset(ds_raw.schema, cols, ds_raw.labels.copy(), encoded=False)

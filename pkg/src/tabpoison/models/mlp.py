"""Feed-forward classifier trained with mini-batch SGD.

Plain numpy implementation: ReLU hidden layers, softmax output,
cross-entropy loss. The backward pass is written out by hand because the
attack needs exact gradients of the loss with respect to the *input*, and
the defenses need per-layer activations and neuron-level prune masks.
Training is deterministic for a fixed config seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ModelFormatError, NonFiniteLoss, ShapeMismatch

MLP_FORMAT = "tabpoison-mlp/1"


@dataclass(frozen=True)
class MlpConfig:
    n_features: int
    n_classes: int
    hidden: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-2
    batch_size: int = 128
    epochs: int = 20
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2:
            raise ShapeMismatch("need at least 1 feature and 2 classes")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ShapeMismatch("hidden layer sizes must be positive")


@dataclass(frozen=True)
class InputLossSpec:
    """Objective whose input gradient the attack follows.

    loss(x) = -log f_target(x) + beta * ||x - mode||_1 + lam * ||x - mode||_2^2
    With mode None the regularizers are dropped.
    """

    target: int
    beta: float = 0.0
    lam: float = 0.0
    mode: np.ndarray | None = None


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Mlp:
    """ReLU network with softmax head and optional per-neuron prune masks."""

    def __init__(self, config: MlpConfig):
        self.config = config
        sizes = [config.n_features, *config.hidden, config.n_classes]
        rng = np.random.default_rng(config.seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        # 1.0 = keep, 0.0 = pruned; one mask vector per hidden layer
        self.masks: list[np.ndarray] = [np.ones(h) for h in config.hidden]
        self.loss_history: list[float] = []
        self._rng = rng

    # --- forward / backward -------------------------------------------------

    @property
    def n_hidden(self) -> int:
        return len(self.config.hidden)

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.config.n_features:
            raise ShapeMismatch(
                f"expected {self.config.n_features} features, got {X.shape[1]}"
            )
        return X

    def _forward(self, X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Returns (pre-activations, post-activations, logits)."""
        pre, post = [], []
        a = X
        for l in range(self.n_hidden):
            z = a @ self.weights[l] + self.biases[l]
            a = np.maximum(z, 0.0) * self.masks[l]
            pre.append(z)
            post.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        return pre, post, logits

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        _, _, logits = self._forward(self._check_input(X))
        return softmax(logits)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def activations(self, X: np.ndarray) -> list[np.ndarray]:
        """Post-activation values for every hidden layer."""
        _, post, _ = self._forward(self._check_input(X))
        return post

    @property
    def representation_layer(self) -> int:
        """Default layer index whose activations serve as representations."""
        return self.n_hidden - 1

    def _backward_to_input(self, X: np.ndarray, dlogits: np.ndarray,
                           pre: list[np.ndarray]) -> np.ndarray:
        """Propagate a gradient at the logits back to the input rows."""
        g = dlogits @ self.weights[-1].T
        for l in range(self.n_hidden - 1, -1, -1):
            g = g * self.masks[l] * (pre[l] > 0.0)
            g = g @ self.weights[l].T
        return g

    # --- training -----------------------------------------------------------

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Mlp":
        """Mini-batch SGD on cross-entropy; records mean loss per epoch."""
        cfg = self.config
        X = self._check_input(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ShapeMismatch("X and y row counts differ")
        n = len(X)
        velocity_w = [np.zeros_like(w) for w in self.weights]
        velocity_b = [np.zeros_like(b) for b in self.biases]
        for _ in range(cfg.epochs):
            order = self._rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                loss = self._sgd_step(X[idx], y[idx], velocity_w, velocity_b)
                epoch_loss += loss * len(idx)
            epoch_loss /= n
            if not math.isfinite(epoch_loss):
                raise NonFiniteLoss(f"training loss became {epoch_loss}")
            self.loss_history.append(epoch_loss)
        return self

    def _sgd_step(self, Xb, yb, velocity_w, velocity_b) -> float:
        cfg = self.config
        m = len(Xb)
        pre, post, logits = self._forward(Xb)
        logp = log_softmax(logits)
        loss = -float(logp[np.arange(m), yb].mean())
        probs = np.exp(logp)
        dlogits = probs.copy()
        dlogits[np.arange(m), yb] -= 1.0
        dlogits /= m

        acts = [Xb, *post]
        grads_w, grads_b = [], []
        g = dlogits
        for l in range(self.n_hidden, -1, -1):
            grads_w.append(acts[l].T @ g)
            grads_b.append(g.sum(axis=0))
            if l > 0:
                g = g @ self.weights[l].T
                g = g * self.masks[l - 1] * (pre[l - 1] > 0.0)
        grads_w.reverse()
        grads_b.reverse()

        for l in range(len(self.weights)):
            gw = grads_w[l]
            if cfg.weight_decay:
                gw = gw + cfg.weight_decay * self.weights[l]
            velocity_w[l] = cfg.momentum * velocity_w[l] - cfg.learning_rate * gw
            velocity_b[l] = cfg.momentum * velocity_b[l] - cfg.learning_rate * grads_b[l]
            self.weights[l] += velocity_w[l]
            self.biases[l] += velocity_b[l]
        return loss

    # --- input gradients ----------------------------------------------------

    def input_loss_and_grad(self, X: np.ndarray, spec: InputLossSpec) -> tuple[np.ndarray, np.ndarray]:
        """Per-row loss values and per-row gradients w.r.t. the input.

        The L1 subgradient at zero is taken as 0 so an already-modal cell
        produces no pull.
        """
        X = self._check_input(X)
        pre, _, logits = self._forward(X)
        logp = log_softmax(logits)
        losses = -logp[:, spec.target].copy()
        probs = np.exp(logp)
        dlogits = probs.copy()
        dlogits[:, spec.target] -= 1.0
        grads = self._backward_to_input(X, dlogits, pre)
        if spec.mode is not None and (spec.beta or spec.lam):
            diff = X - np.asarray(spec.mode, dtype=np.float64)[None, :]
            losses = losses + spec.beta * np.abs(diff).sum(axis=1) + spec.lam * (diff ** 2).sum(axis=1)
            grads = grads + spec.beta * np.sign(diff) + 2.0 * spec.lam * diff
        return losses, grads

    # --- persistence --------------------------------------------------------

    def copy(self) -> "Mlp":
        clone = Mlp(self.config)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        clone.masks = [m.copy() for m in self.masks]
        clone.loss_history = list(self.loss_history)
        return clone

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "format": MLP_FORMAT,
            "config": cfg,
            "weights": [_encode_array(w) for w in self.weights],
            "biases": [_encode_array(b) for b in self.biases],
            "masks": [_encode_array(m) for m in self.masks],
        }

    @staticmethod
    def from_dict(d: dict) -> "Mlp":
        if d.get("format") != MLP_FORMAT:
            raise ModelFormatError(f"unsupported model format {d.get('format')!r}")
        cfg = dict(d["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        model = Mlp(MlpConfig(**cfg))
        try:
            model.weights = [_decode_array(w) for w in d["weights"]]
            model.biases = [_decode_array(b) for b in d["biases"]]
            model.masks = [_decode_array(m) for m in d["masks"]]
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"malformed model payload: {exc}") from None
        sizes = [cfg["n_features"], *cfg["hidden"], cfg["n_classes"]]
        for l, w in enumerate(model.weights):
            if w.shape != (sizes[l], sizes[l + 1]):
                raise ModelFormatError(f"layer {l} weight shape {w.shape} mismatch")
        return model

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "Mlp":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
        return Mlp.from_dict(payload)


def _encode_array(a: np.ndarray) -> dict:
    """Serialize a float array with shortest round-trip decimal strings."""
    return {"shape": list(a.shape), "values": [repr(float(v)) for v in a.ravel()]}


def _decode_array(d: dict) -> np.ndarray:
    values = np.asarray([float(v) for v in d["values"]], dtype=np.float64)
    return values.reshape(d["shape"])


# --- pruning ----------------------------------------------------------------

def prune_and_finetune(model: Mlp, X_clean: np.ndarray, y_clean: np.ndarray,
                       rate: float, finetune_epochs: int,
                       finetune_lr: float | None = None) -> Mlp:
    """Mask the least active hidden neurons, then fine-tune on clean data.

    Neurons across all hidden layers are ranked by mean absolute activation
    on the clean set, ascending, and the lowest floor(rate * total) are
    masked. The mask persists through fine-tuning: masked neurons stay dead
    and their incoming weights receive no gradient. Returns a new model.
    """
    if not 0.0 <= rate <= 1.0:
        raise ShapeMismatch("prune rate must lie in [0, 1]")
    pruned = model.copy()
    total = sum(model.config.hidden)
    k = int(math.floor(rate * total))
    if k > 0:
        acts = model.activations(X_clean)
        scores = np.concatenate([np.abs(a).mean(axis=0) for a in acts])
        layer_of = np.concatenate(
            [np.full(h, l, dtype=np.int64) for l, h in enumerate(model.config.hidden)]
        )
        index_in_layer = np.concatenate(
            [np.arange(h, dtype=np.int64) for h in model.config.hidden]
        )
        order = np.argsort(scores, kind="stable")  # ties resolved by layer/index order
        for pos in order[:k]:
            pruned.masks[layer_of[pos]][index_in_layer[pos]] = 0.0
    if finetune_epochs > 0:
        cfg = pruned.config
        tuned_cfg = MlpConfig(
            n_features=cfg.n_features, n_classes=cfg.n_classes, hidden=cfg.hidden,
            learning_rate=finetune_lr if finetune_lr is not None else cfg.learning_rate,
            batch_size=cfg.batch_size, epochs=finetune_epochs,
            momentum=cfg.momentum, weight_decay=cfg.weight_decay, seed=cfg.seed,
        )
        state = pruned
        pruned = Mlp(tuned_cfg)
        pruned.weights = [w.copy() for w in state.weights]
        pruned.biases = [b.copy() for b in state.biases]
        pruned.masks = [m.copy() for m in state.masks]
        pruned.fit(np.asarray(X_clean, dtype=np.float64), np.asarray(y_clean))
    return pruned

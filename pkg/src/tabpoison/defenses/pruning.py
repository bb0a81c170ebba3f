"""Fine-pruning evaluation: prune dormant neurons, fine-tune, re-measure.

This wraps models.prune_and_finetune with the attack metrics so a defender
sweep (prune rate, fine-tune epochs) reports what it bought: clean
accuracy retained and attack success remaining. With rate 0 and 0 epochs
the model passes through untouched, which doubles as a self-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import Rate, accuracy, asr_from_predictions
from ..models.mlp import Mlp, prune_and_finetune


@dataclass
class FinePruningReport:
    rate: float
    epochs: int
    cda: Rate
    asr: Rate
    asr_all: Rate

    def to_dict(self) -> dict:
        return {
            "defense": "fine-prune",
            "rate": self.rate,
            "epochs": self.epochs,
            "cda": self.cda.to_dict(),
            "asr": self.asr.to_dict(),
            "asr_all": self.asr_all.to_dict(),
        }


def fine_pruning_eval(model: Mlp, X_val: np.ndarray, y_val: np.ndarray,
                      X_test: np.ndarray, y_test: np.ndarray,
                      X_test_triggered: np.ndarray, target: int,
                      rate: float = 0.9, epochs: int = 5,
                      finetune_lr: float | None = None) -> tuple[Mlp, FinePruningReport]:
    """Prune on clean validation data, then score the result.

    X_test_triggered must hold the triggered twins of X_test rows, already
    in the model's input space (the caller owns the application path, so
    released-form and encoded-form victims both work).
    """
    pruned = prune_and_finetune(model, X_val, y_val, rate, epochs, finetune_lr)
    preds_clean = pruned.predict(X_test)
    preds_trig = pruned.predict(X_test_triggered)
    report = FinePruningReport(
        rate=rate,
        epochs=epochs,
        cda=accuracy(preds_clean, y_test),
        asr=asr_from_predictions(preds_trig, y_test, target),
        asr_all=asr_from_predictions(preds_trig, y_test, target, include_target_rows=True),
    )
    return pruned, report

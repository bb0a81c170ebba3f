"""Defense suite evaluated against the poisoning attack."""

from .spectral import (
    SpectralReport,
    spectral_scores,
    spectral_signatures,
    top_right_singular_vector,
)
from .cleanse import (
    NeuralCleanseConfig,
    NeuralCleanseReport,
    anomaly_indices,
    neural_cleanse,
    reconstruct_mask,
)
from .beatrix import (
    BeatrixReport,
    beatrix,
    beatrix_from_activations,
    deviation_scores,
    gaussian_mmd,
    gram_features,
)
from .pruning import FinePruningReport, fine_pruning_eval
from .outliers import (
    DbscanResult,
    IsolationForestConfig,
    IsolationForestReport,
    average_path_length,
    dbscan,
    isolation_forest,
)

__all__ = [
    "SpectralReport", "spectral_scores", "spectral_signatures", "top_right_singular_vector",
    "NeuralCleanseConfig", "NeuralCleanseReport", "anomaly_indices", "neural_cleanse",
    "reconstruct_mask",
    "BeatrixReport", "beatrix", "beatrix_from_activations", "deviation_scores",
    "gaussian_mmd", "gram_features",
    "FinePruningReport", "fine_pruning_eval",
    "DbscanResult", "IsolationForestConfig", "IsolationForestReport",
    "average_path_length", "dbscan", "isolation_forest",
]

"""Multi-label species prediction for vegetation plot images.

Linear classifiers over patch-token embeddings, with grid-tile inference that
splits each plot image into an N x N grid and aggregates per-tile predictions
into one species set.
"""

from .classifier import LinearModel, TrainConfig, TrainResult, load_model, predict_log_probs, save_model, train
from .core import ImageRecord, PlotLabelSet, SpeciesCatalog, build_catalog
from .features import EmbeddingRecord, ToyEmbedder, cls_embedding, dct2_orthonormal, dct_coefficients, idct2_orthonormal
from .inference import InferenceConfig, PredictionSet, predict_plot
from .metrics import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "EmbeddingRecord",
    "ImageRecord",
    "InferenceConfig",
    "LinearModel",
    "MetricsReport",
    "PlotLabelSet",
    "PredictionSet",
    "SpeciesCatalog",
    "ToyEmbedder",
    "TrainConfig",
    "TrainResult",
    "build_catalog",
    "cls_embedding",
    "dct2_orthonormal",
    "dct_coefficients",
    "evaluate",
    "idct2_orthonormal",
    "load_model",
    "predict_log_probs",
    "predict_plot",
    "save_model",
    "train",
    "__version__",
]

"""From-scratch CNN engine: multi-kernel spatial attention, fuzzy-max
ensembling, hand-derived backprop, and a training CLI."""

from .attention import MlsamBlock, export_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .ensemble import EnsembleModel, FusionParams, ensemble_predict, fuzzy_max_fuse
from .layers import Mode, cce_loss, softmax_cce_grad
from .metrics import MetricsReport, classification_metrics, confusion_matrix
from .model import ModelConfig, TFusionModel, build_tfusion, count_parameters
from .training import Adam, History, TrainConfig, stratified_split, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "EnsembleModel", "FusionParams", "History", "MetricsReport",
    "MlsamBlock", "Mode", "ModelConfig", "TFusionModel", "TrainConfig",
    "build_tfusion", "cce_loss", "classification_metrics", "confusion_matrix",
    "count_parameters", "ensemble_predict", "export_attention", "fuzzy_max_fuse",
    "load_checkpoint", "save_checkpoint", "softmax_cce_grad",
    "stratified_split", "train",
]

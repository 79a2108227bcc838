"""Face presentation attack detection toolkit.

Residual and pixel-wise binary supervision PAD networks, a MixStyle layer
for synthetic-to-authentic domain adaptation, manifest-driven data handling,
ISO/IEC 30107-3 metrics and cross-dataset protocol runs.
"""

from .data import AugmentationConfig, Manifest, Sample, load_manifest, write_manifest
from .metrics import MetricsReport, ScoreRecord, evaluate_scores
from .mixstyle import MixStyle, MixStyleConfig, mixstyle_forward
from .models import PadModelConfig, build_model, load_checkpoint, predict_score, save_checkpoint
from .training import ProtocolSpec, TrainConfig, evaluate_model, run_protocols, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig",
    "Manifest",
    "MetricsReport",
    "MixStyle",
    "MixStyleConfig",
    "PadModelConfig",
    "ProtocolSpec",
    "Sample",
    "ScoreRecord",
    "TrainConfig",
    "build_model",
    "evaluate_model",
    "evaluate_scores",
    "load_checkpoint",
    "load_manifest",
    "mixstyle_forward",
    "predict_score",
    "run_protocols",
    "save_checkpoint",
    "train",
    "write_manifest",
]

from pdvox.models.common import StrictModel
from pdvox.models.config import (
    ModelConfig,
    NormMode,
    SearchSpace,
    TrainConfig,
    Variant,
)
from pdvox.models.history import EpochRecord, TrainHistory
from pdvox.models.report import ClassificationReport, ConfusionCounts
from pdvox.models.subject import DatasetSplit, Label, Sex, SplitName, Subject
from pdvox.models.trial import TrialMetrics, TrialResult, TrialSpec

__all__ = [
    "StrictModel",
    "ModelConfig",
    "NormMode",
    "SearchSpace",
    "TrainConfig",
    "Variant",
    "EpochRecord",
    "TrainHistory",
    "ClassificationReport",
    "ConfusionCounts",
    "DatasetSplit",
    "Label",
    "Sex",
    "SplitName",
    "Subject",
    "TrialMetrics",
    "TrialResult",
    "TrialSpec",
]

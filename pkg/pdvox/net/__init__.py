from pdvox.net.architecture import (
    Model,
    build_layers,
    build_model,
    forward,
    forward_var,
    parameter_count,
    predict_proba,
    shape_chain,
)
from pdvox.net.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from pdvox.net.training import evaluate, train

__all__ = [
    "Model",
    "build_layers",
    "build_model",
    "forward",
    "forward_var",
    "parameter_count",
    "predict_proba",
    "shape_chain",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "evaluate",
    "train",
]

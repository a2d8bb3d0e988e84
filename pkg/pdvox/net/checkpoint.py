"""
Checkpoint directory layout:

    checkpoint.json          format version, ModelConfig, input extents, age
                             statistics, and one entry per stored tensor
    <param name>.mvol        one per parameter, flattened to extents (size, 1, 1)
    <layer>.running_mean.mvol, <layer>.running_var.mvol
                             batch-norm running statistics, same layout
"""

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pydantic

from pdvox.data.batching import AgeStats
from pdvox.data.volume import load_volume, save_volume, to_volume
from pdvox.errors import DataError
from pdvox.models.common import StrictModel
from pdvox.models.config import ModelConfig
from pdvox.net.architecture import Model, build_model
from pdvox.tensor.ops import NormState

FORMAT_VERSION = 1
MANIFEST_NAME = "checkpoint.json"


class TensorEntry(StrictModel):
    file: str
    shape: list[int]


class NormStateEntry(StrictModel):
    running_mean: TensorEntry
    running_var: TensorEntry
    momentum: float
    eps: float


class CheckpointManifest(StrictModel):
    format_version: int = FORMAT_VERSION
    model: ModelConfig
    input_extents: tuple[int, int, int]
    age_stats: AgeStats | None = None
    parameters: dict[str, TensorEntry]
    norm_states: dict[str, NormStateEntry] = {}


class Checkpoint(NamedTuple):
    model: Model
    age_stats: AgeStats | None


def _save_tensor(directory: Path, name: str, value: np.ndarray) -> TensorEntry:
    file = f"{name}.mvol"
    save_volume(to_volume(value.reshape(-1, 1, 1)), directory / file)
    return TensorEntry(file=file, shape=list(value.shape))


def _load_tensor(directory: Path, entry: TensorEntry) -> np.ndarray:
    path = directory / entry.file
    if not path.exists():
        raise DataError(f"checkpoint tensor file missing: {path}")
    voxels = load_volume(path).voxels
    if voxels.size != math.prod(entry.shape):
        raise DataError(
            f"{path} holds {voxels.size} values, manifest expects shape {entry.shape}"
        )
    return voxels.reshape(entry.shape).copy()


def save_checkpoint(
    path: str | Path, model: Model, age_stats: AgeStats | None = None
) -> Path:
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        manifest = CheckpointManifest(
            model=model.config,
            input_extents=model.input_extents,
            age_stats=age_stats,
            parameters={
                name: _save_tensor(directory, name, value)
                for name, value in model.params.items()
            },
            norm_states={
                name: NormStateEntry(
                    running_mean=_save_tensor(directory, f"{name}.running_mean", s.running_mean),
                    running_var=_save_tensor(directory, f"{name}.running_var", s.running_var),
                    momentum=s.momentum,
                    eps=s.eps,
                )
                for name, s in model.norm_states.items()
            },
        )
        (directory / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2))
    except OSError as e:
        raise DataError(f"cannot write checkpoint to {directory}: {e}") from e
    return directory


def load_checkpoint(path: str | Path) -> Checkpoint:
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = CheckpointManifest.model_validate_json(manifest_path.read_text())
    except OSError as e:
        raise DataError(f"cannot read checkpoint {manifest_path}: {e}") from e
    except pydantic.ValidationError as e:
        raise DataError(f"invalid checkpoint manifest {manifest_path}: {e}") from e
    if manifest.format_version != FORMAT_VERSION:
        raise DataError(
            f"unsupported checkpoint format {manifest.format_version}, "
            f"expected {FORMAT_VERSION}"
        )

    model = build_model(manifest.model, manifest.input_extents)
    if set(manifest.parameters) != set(model.params):
        missing = sorted(set(model.params) - set(manifest.parameters))
        extra = sorted(set(manifest.parameters) - set(model.params))
        raise DataError(f"checkpoint parameters do not match the model: missing {missing}, unexpected {extra}")
    for name, entry in manifest.parameters.items():
        value = _load_tensor(directory, entry)
        if value.shape != model.params[name].shape:
            raise DataError(
                f"parameter {name!r} has shape {value.shape}, "
                f"model expects {model.params[name].shape}"
            )
        model.params[name] = value
    for name, entry in manifest.norm_states.items():
        if name not in model.norm_states:
            raise DataError(f"checkpoint has running statistics for unknown layer {name!r}")
        model.norm_states[name] = NormState(
            running_mean=_load_tensor(directory, entry.running_mean),
            running_var=_load_tensor(directory, entry.running_var),
            momentum=entry.momentum,
            eps=entry.eps,
        )
    return Checkpoint(model, manifest.age_stats)

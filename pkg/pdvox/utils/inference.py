from pathlib import Path

import numpy as np
import structlog

from pdvox.data.batching import encode_demographics
from pdvox.data.volume import Volume, load_volume, normalize_intensity, save_volume
from pdvox.errors import DataError
from pdvox.interpret import occlusion_heatmap
from pdvox.models.subject import Label, Sex
from pdvox.net.architecture import predict_proba
from pdvox.net.checkpoint import Checkpoint, load_checkpoint


def prepare_inputs(
    checkpoint: Checkpoint, volume_path: str | Path, age: int, sex: Sex
) -> tuple[Volume, np.ndarray | None]:
    volume = normalize_intensity(load_volume(volume_path))
    if not checkpoint.model.config.use_demographics:
        return volume, None
    if checkpoint.age_stats is None:
        raise DataError("checkpoint uses demographics but stores no age statistics")
    return volume, np.array(
        encode_demographics(age, sex, checkpoint.age_stats), dtype=np.float32
    )


def diagnose(
    log: structlog.stdlib.BoundLogger,
    checkpoint_path: str | Path,
    volume_path: str | Path,
    age: int,
    sex: Sex,
) -> tuple[float, Label]:
    """PD probability and predicted label for one raw (unnormalized) volume."""
    checkpoint = load_checkpoint(checkpoint_path)
    volume, demographics = prepare_inputs(checkpoint, volume_path, age, sex)
    probs = predict_proba(
        checkpoint.model,
        volume.voxels[None, ..., None],
        None if demographics is None else demographics[None],
    )[0]
    label = Label.from_index(int(probs.argmax()))
    log.info("Diagnosed volume", volume=str(volume_path), pd_probability=float(probs[1]), label=label.value)
    return float(probs[1]), label


def occlusion_for_volume(
    log: structlog.stdlib.BoundLogger,
    checkpoint_path: str | Path,
    volume_path: str | Path,
    age: int,
    sex: Sex,
    output_path: str | Path,
    box: int = 2,
    stride: int = 1,
) -> Path:
    checkpoint = load_checkpoint(checkpoint_path)
    volume, demographics = prepare_inputs(checkpoint, volume_path, age, sex)
    heatmap = occlusion_heatmap(
        log, checkpoint.model, volume, demographics, box=box, stride=stride
    )
    save_volume(heatmap, output_path)
    return Path(output_path)

"""
Occlusion sensitivity: zero a box of (normalized) voxels, re-run inference and
record the change in PD probability. Negative values mark regions that
support the PD call.
"""

import enum
from pathlib import Path
from typing import Callable

import numpy as np
import structlog

from pdvox.data.volume import Volume, to_volume
from pdvox.errors import DataError, ShapeError
from pdvox.net.architecture import Model, predict_proba

Scorer = Callable[[np.ndarray], np.ndarray]
"""Maps a batch of volumes [B, X, Y, Z] to PD probabilities [B]."""


class Plane(str, enum.Enum):
    SAGITTAL = "sagittal"
    CORONAL = "coronal"
    AXIAL = "axial"

    @property
    def axis(self) -> int:
        return list(Plane).index(self)


def box_starts(extent: int, stride: int) -> range:
    return range(0, extent, stride)


def occlusion_map(
    scorer: Scorer,
    volume: np.ndarray,
    box: int = 2,
    stride: int = 1,
    batch_size: int = 8,
) -> np.ndarray:
    """
    Per-voxel mean of P(occluded) - P(original) over every box covering the
    voxel. Boxes start every `stride` voxels and are clipped at the far border;
    voxels no box covers (stride > box) stay 0.
    """
    if volume.ndim != 3:
        raise ShapeError(f"volume must be 3D, got shape {volume.shape}")
    if box < 1 or stride < 1:
        raise ValueError(f"box and stride must be >= 1, got box={box}, stride={stride}")
    if any(box > extent for extent in volume.shape):
        raise ValueError(f"box {box} exceeds volume extents {volume.shape}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    baseline = float(np.asarray(scorer(volume[None]))[0])
    positions = [
        (x, y, z)
        for x in box_starts(volume.shape[0], stride)
        for y in box_starts(volume.shape[1], stride)
        for z in box_starts(volume.shape[2], stride)
    ]

    total = np.zeros(volume.shape, dtype=np.float64)
    count = np.zeros(volume.shape, dtype=np.int64)
    for start in range(0, len(positions), batch_size):
        chunk = positions[start : start + batch_size]
        occluded = np.repeat(volume[None], len(chunk), axis=0)
        for i, (x, y, z) in enumerate(chunk):
            occluded[i, x : x + box, y : y + box, z : z + box] = 0
        deltas = np.asarray(scorer(occluded), dtype=np.float64) - baseline
        for (x, y, z), delta in zip(chunk, deltas):
            region = (slice(x, x + box), slice(y, y + box), slice(z, z + box))
            total[region] += delta
            count[region] += 1
    return np.divide(total, count, out=np.zeros_like(total), where=count > 0)


def model_scorer(model: Model, demographics: np.ndarray | None = None) -> Scorer:
    def score(volumes: np.ndarray) -> np.ndarray:
        demo = None
        if model.config.use_demographics:
            if demographics is None:
                raise ShapeError("model was built with demographics but none were given")
            demo = np.repeat(np.asarray(demographics, dtype=np.float32)[None], len(volumes), axis=0)
        # probabilities are widened so deltas subtract in double precision
        return predict_proba(model, volumes[..., None], demo, len(volumes))[:, 1].astype(
            np.float64
        )

    return score


def occlusion_heatmap(
    log: structlog.stdlib.BoundLogger,
    model: Model,
    volume: Volume | np.ndarray,
    demographics: np.ndarray | None = None,
    box: int = 2,
    stride: int = 1,
    batch_size: int = 8,
) -> Volume:
    voxels = volume.voxels if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float32)
    if tuple(voxels.shape) != model.input_extents:
        raise ShapeError(
            f"model expects extents {model.input_extents}, volume has {tuple(voxels.shape)}"
        )
    log.info(
        "Computing occlusion heatmap",
        extents=model.input_extents,
        box=box,
        stride=stride,
    )
    heat = occlusion_map(model_scorer(model, demographics), voxels, box, stride, batch_size)
    log.info(
        "Occlusion heatmap done",
        min_delta=float(heat.min()),
        max_delta=float(heat.max()),
    )
    return to_volume(heat)


def rescale_to_gray(slice_2d: np.ndarray) -> np.ndarray:
    """Linear map min -> 0, max -> 255, rounding halves up; constant -> 128."""
    values = np.asarray(slice_2d, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        return np.full(values.shape, 128, dtype=np.uint8)
    scaled = (values - low) / (high - low) * 255
    return np.floor(scaled + 0.5).astype(np.uint8)


def take_slice(h: Volume | np.ndarray, plane: Plane | str, index: int) -> np.ndarray:
    voxels = h.voxels if isinstance(h, Volume) else np.asarray(h)
    axis = Plane(plane).axis
    extent = voxels.shape[axis]
    if not 0 <= index < extent:
        raise ValueError(f"{Plane(plane).value} index {index} outside [0, {extent})")
    return np.take(voxels, index, axis=axis)


def export_slice(
    h: Volume | np.ndarray, plane: Plane | str, index: int, path: str | Path
) -> Path:
    """Write one slice as a binary PGM (P5); rows are the first remaining axis."""
    pixels = rescale_to_gray(take_slice(h, plane, index))
    height, width = pixels.shape
    path = Path(path)
    try:
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    except OSError as e:
        raise DataError(f"cannot write slice image {path}: {e}") from e
    return path


def export_center_slices(h: Volume, out_dir: str | Path, stem: str = "heatmap") -> list[Path]:
    out_dir = Path(out_dir)
    return [
        export_slice(h, plane, h.extents[plane.axis] // 2, out_dir / f"{stem}_{plane.value}.pgm")
        for plane in Plane
    ]

"""
MVOL: magic b"MVL1", three little-endian uint32 extents X, Y, Z, then X·Y·Z
little-endian float32 voxels with X slowest and Z fastest.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pdvox.errors import (
    MvolMagicError,
    MvolNonFiniteError,
    MvolTruncatedError,
    ShapeError,
    ZeroVarianceError,
)

MAGIC = b"MVL1"
HEADER_DTYPE = np.dtype("<u4")
VOXEL_DTYPE = np.dtype("<f4")
HEADER_SIZE = len(MAGIC) + 3 * HEADER_DTYPE.itemsize


@dataclass(frozen=True, eq=False)
class Volume:
    """A sagittal x coronal x axial scalar grid."""

    voxels: np.ndarray

    def __post_init__(self):
        if self.voxels.dtype != np.float32:
            object.__setattr__(self, "voxels", self.voxels.astype(np.float32))
        if self.voxels.ndim != 3 or any(extent < 1 for extent in self.voxels.shape):
            raise ShapeError(f"volume must be 3D with positive extents, got {self.voxels.shape}")
        if not np.isfinite(self.voxels).all():
            raise MvolNonFiniteError("volume contains non-finite voxels")

    @property
    def extents(self) -> tuple[int, int, int]:
        x, y, z = self.voxels.shape
        return x, y, z

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.voxels.shape == other.voxels.shape and np.array_equal(
            self.voxels.view(np.uint32), other.voxels.view(np.uint32)
        )


def to_volume(voxels: np.ndarray) -> Volume:
    return Volume(np.ascontiguousarray(voxels, dtype=np.float32))


def encode_volume(volume: Volume) -> bytes:
    header = MAGIC + np.asarray(volume.extents, dtype=HEADER_DTYPE).tobytes()
    return header + np.ascontiguousarray(volume.voxels, dtype=VOXEL_DTYPE).tobytes()


def decode_volume(data: bytes, source: str = "<bytes>") -> Volume:
    if data[: len(MAGIC)] != MAGIC:
        raise MvolMagicError(f"{source}: bad magic {data[:len(MAGIC)]!r}")
    if len(data) < HEADER_SIZE:
        raise MvolTruncatedError(f"{source}: header truncated at {len(data)} bytes")

    extents = np.frombuffer(data, dtype=HEADER_DTYPE, count=3, offset=len(MAGIC))
    x, y, z = (int(e) for e in extents)
    if min(x, y, z) < 1:
        raise ShapeError(f"{source}: zero extent in header {(x, y, z)}")
    expected = x * y * z * VOXEL_DTYPE.itemsize
    payload = len(data) - HEADER_SIZE
    if payload < expected:
        raise MvolTruncatedError(
            f"{source}: header advertises {x}x{y}x{z} voxels "
            f"({expected} bytes) but payload has {payload} bytes"
        )
    if payload > expected:
        raise MvolTruncatedError(
            f"{source}: {payload - expected} trailing bytes after the voxel payload"
        )

    voxels = np.frombuffer(data, dtype=VOXEL_DTYPE, offset=HEADER_SIZE).reshape(x, y, z)
    if not np.isfinite(voxels).all():
        raise MvolNonFiniteError(f"{source}: non-finite voxel values")
    return Volume(voxels.astype(np.float32))


def save_volume(volume: Volume, path: str | Path) -> None:
    Path(path).write_bytes(encode_volume(volume))


def load_volume(path: str | Path) -> Volume:
    path = Path(path)
    return decode_volume(path.read_bytes(), source=str(path))


def normalize_intensity(volume: Volume) -> Volume:
    """Per-volume z-score over all voxels."""
    voxels = volume.voxels.astype(np.float64)
    std = voxels.std()
    if std == 0:
        raise ZeroVarianceError("cannot normalize a constant volume")
    return to_volume((voxels - voxels.mean()) / std)


def hemisphere_flip(volume: Volume) -> Volume:
    """Reverse the sagittal (first) axis: (x, y, z) -> (X-1-x, y, z)."""
    return Volume(np.ascontiguousarray(volume.voxels[::-1]))

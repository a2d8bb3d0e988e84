from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from pdvox.errors import DataError, ShapeError
from pdvox.data.volume import Volume, hemisphere_flip, load_volume, normalize_intensity
from pdvox.models.common import StrictModel
from pdvox.models.subject import Sex, Subject


class AgeStats(StrictModel):
    mean: float
    std: float


def fit_age_stats(subjects: Sequence[Subject]) -> AgeStats:
    """Age mean and std over unique subject ids; fit on the training split only."""
    ages = {subject.id: subject.age for subject in subjects}
    if not ages:
        return AgeStats(mean=0.0, std=1.0)
    values = np.array(list(ages.values()), dtype=np.float64)
    std = float(values.std())
    return AgeStats(mean=float(values.mean()), std=std if std > 0 else 1.0)


def encode_demographics(age: float, sex: Sex, stats: AgeStats) -> tuple[float, float]:
    # sex encoded F = 0, M = 1
    return (age - stats.mean) / stats.std, 1.0 if sex is Sex.M else 0.0


@dataclass
class SampleSet:
    ids: list[str]
    volumes: np.ndarray
    """[N, X, Y, Z, 1] float32, intensity-normalized."""
    demographics: np.ndarray
    """[N, 2] float32: z-scored age, sex."""
    labels: np.ndarray
    """[N] int64, PD = 1."""
    flipped: list[bool]

    def __len__(self):
        return len(self.ids)

    @property
    def extents(self) -> tuple[int, int, int]:
        _, x, y, z, _ = self.volumes.shape
        return x, y, z

    def subset(self, indices: Sequence[int] | np.ndarray) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(
            ids=[self.ids[i] for i in indices],
            volumes=self.volumes[indices],
            demographics=self.demographics[indices],
            labels=self.labels[indices],
            flipped=[self.flipped[i] for i in indices],
        )


def resolve_volume_path(subject: Subject, base_dir: str | Path | None) -> Path:
    path = Path(subject.volume_path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return path


def load_subject_volume(subject: Subject, base_dir: str | Path | None = None) -> Volume:
    path = resolve_volume_path(subject, base_dir)
    if not path.exists():
        raise DataError(f"volume file for subject {subject.id!r} not found: {path}")
    volume = normalize_intensity(load_volume(path))
    return hemisphere_flip(volume) if subject.flipped else volume


def load_samples(
    subjects: Sequence[Subject],
    age_stats: AgeStats,
    base_dir: str | Path | None = None,
) -> SampleSet:
    if not subjects:
        raise DataError("no subjects to load")

    volumes = []
    extents = None
    for subject in subjects:
        volume = load_subject_volume(subject, base_dir)
        if extents is None:
            extents = volume.extents
        elif volume.extents != extents:
            raise ShapeError(
                f"subject {subject.id!r} has extents {volume.extents}, expected {extents}"
            )
        volumes.append(volume.voxels)

    return SampleSet(
        ids=[s.id for s in subjects],
        volumes=np.stack(volumes)[..., None],
        demographics=np.array(
            [encode_demographics(s.age, s.sex, age_stats) for s in subjects],
            dtype=np.float32,
        ),
        labels=np.array([s.label.index for s in subjects], dtype=np.int64),
        flipped=[s.flipped for s in subjects],
    )


class Batch(NamedTuple):
    volumes: np.ndarray
    demographics: np.ndarray
    labels: np.ndarray


def iter_batches(
    samples: SampleSet, batch_size: int, shuffle_seed: int | None = None
) -> Iterator[Batch]:
    """Every sample exactly once; the final short batch is emitted as-is."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(samples)
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(samples.volumes[idx], samples.demographics[idx], samples.labels[idx])


def batch_iter(
    subjects: Sequence[Subject],
    batch_size: int,
    shuffle_seed: int | None = None,
    age_stats: AgeStats | None = None,
    base_dir: str | Path | None = None,
) -> Iterator[Batch]:
    if age_stats is None:
        age_stats = fit_age_stats(subjects)
    return iter_batches(load_samples(subjects, age_stats, base_dir), batch_size, shuffle_seed)

"""
Synthetic stand-in for a skull-stripped MR cohort.

Every subject gets a smooth ellipsoidal "brain" over smoothed noise. PD
subjects additionally carry a Gaussian intensity deficit at a fixed locus
placed off the sagittal midline, so a hemisphere flip moves it.
"""

from pathlib import Path
from typing import NamedTuple

import numpy as np
import structlog
from pydantic import Field, field_validator
from scipy import ndimage

from pdvox.data.manifest import save_manifest
from pdvox.data.volume import save_volume, to_volume
from pdvox.errors import DataError
from pdvox.models.common import StrictModel
from pdvox.models.subject import Label, Sex, Subject
from pdvox.utils.seeding import rng_for

# age mean per sex for the healthy group; PD is shifted by `age_effect`
HC_AGE_MEAN = {Sex.F: 59.2, Sex.M: 61.7}
AGE_STD = 10.0
MALE_RATIO = {Label.HC: 134 / 204, Label.PD: 292 / 452}

# lesion centre as a fraction of each extent
LESION_CENTER = (0.3, 0.55, 0.45)


class SynthSpec(StrictModel):
    n_per_class: int = Field(default=12, ge=1)
    extents: tuple[int, int, int] = (16, 20, 20)
    signal_strength: float = Field(default=0.5, ge=0)
    age_effect: float = 2.0
    seed: int = 0
    noise: float = Field(default=0.2, ge=0, description="Std of the smoothed noise")
    smoothing: float = Field(default=1.0, ge=0, description="Gaussian sigma in voxels")

    @field_validator("extents")
    @classmethod
    def check_extents(cls, extents: tuple[int, int, int]):
        if any(e < 8 for e in extents):
            raise ValueError(f"every extent must be >= 8, got {extents}")
        return extents

    @classmethod
    def strong(cls, **kwargs) -> "SynthSpec":
        """A clearly separable preset for overfit and localization checks."""
        return cls(**{"signal_strength": 1.5, "noise": 0.1, **kwargs})


class LesionBox(NamedTuple):
    lower: tuple[int, int, int]
    upper: tuple[int, int, int]
    """Exclusive."""

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi) for lo, hi in zip(self.lower, self.upper))  # pyright: ignore[reportReturnType]


def lesion_sigma(extents: tuple[int, int, int]) -> float:
    return max(1.0, min(extents) / 10)


def lesion_center(extents: tuple[int, int, int]) -> tuple[float, float, float]:
    return tuple((e - 1) * f for e, f in zip(extents, LESION_CENTER))  # pyright: ignore[reportReturnType]


def lesion_box(extents: tuple[int, int, int]) -> LesionBox:
    """Voxels within two sigmas of the deficit centre."""
    sigma = lesion_sigma(extents)
    center = lesion_center(extents)
    lower = tuple(max(0, int(np.floor(c - 2 * sigma))) for c in center)
    upper = tuple(min(e, int(np.ceil(c + 2 * sigma)) + 1) for c, e in zip(center, extents))
    return LesionBox(lower, upper)  # pyright: ignore[reportArgumentType]


def _grid(extents: tuple[int, int, int]) -> list[np.ndarray]:
    return np.meshgrid(*(np.arange(e, dtype=np.float64) for e in extents), indexing="ij")


def brain_template(extents: tuple[int, int, int]) -> np.ndarray:
    grid = _grid(extents)
    radius = sum(
        ((axis - (e - 1) / 2) / (0.42 * e)) ** 2 for axis, e in zip(grid, extents)
    )
    return ndimage.gaussian_filter((radius <= 1).astype(np.float64), sigma=1.0)


def lesion_profile(extents: tuple[int, int, int]) -> np.ndarray:
    sigma = lesion_sigma(extents)
    grid = _grid(extents)
    r2 = sum((axis - c) ** 2 for axis, c in zip(grid, lesion_center(extents)))
    return np.exp(-r2 / (2 * sigma**2))


def synth_volume(
    spec: SynthSpec,
    label: Label,
    rng: np.random.Generator,
    template: np.ndarray | None = None,
) -> np.ndarray:
    if template is None:
        template = brain_template(spec.extents)
    noise = rng.standard_normal(spec.extents)
    if spec.smoothing > 0:
        noise = ndimage.gaussian_filter(noise, sigma=spec.smoothing)
    std = noise.std()
    if std > 0:
        noise = noise / std
    voxels = template + spec.noise * noise
    if label is Label.PD and spec.signal_strength > 0:
        voxels = voxels - spec.signal_strength * lesion_profile(spec.extents)
    return voxels


def synth_demographics(
    spec: SynthSpec, label: Label, rng: np.random.Generator
) -> tuple[int, Sex]:
    sex = Sex.M if rng.random() < MALE_RATIO[label] else Sex.F
    mean = HC_AGE_MEAN[sex] + (spec.age_effect if label is Label.PD else 0.0)
    age = int(np.clip(np.floor(rng.normal(mean, AGE_STD) + 0.5), 0, 120))
    return age, sex


def synth_generate(
    log: structlog.stdlib.BoundLogger, spec: SynthSpec, out_dir: str | Path
) -> Path:
    """Write `2 * n_per_class` MVOL volumes and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    volume_dir = out_dir / "volumes"
    try:
        volume_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {volume_dir}: {e}") from e

    template = brain_template(spec.extents)
    subjects = []
    for label_index, label in enumerate((Label.HC, Label.PD)):
        for i in range(spec.n_per_class):
            rng = rng_for(spec.seed, label_index, i)
            age, sex = synth_demographics(spec, label, rng)
            voxels = synth_volume(spec, label, rng, template)
            subject_id = f"{label.value}{i + 1:04d}"
            relative_path = f"volumes/{subject_id}.mvol"
            try:
                save_volume(to_volume(voxels), out_dir / relative_path)
            except OSError as e:
                raise DataError(f"cannot write volume for subject {subject_id!r}: {e}") from e
            subjects.append(
                Subject(
                    id=subject_id,
                    volume_path=relative_path,
                    age=age,
                    sex=sex,
                    label=label,
                )
            )

    manifest_path = out_dir / "manifest.csv"
    try:
        save_manifest(subjects, manifest_path)
    except OSError as e:
        raise DataError(f"cannot write manifest {manifest_path}: {e}") from e
    log.info(
        "Synthetic dataset written",
        subjects=len(subjects),
        extents=spec.extents,
        signal_strength=spec.signal_strength,
        manifest=str(manifest_path),
    )
    return manifest_path

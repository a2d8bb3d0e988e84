import csv
from pathlib import Path

import numpy as np
import pydantic

from pdvox.errors import ManifestError
from pdvox.models.common import StrictModel
from pdvox.models.subject import Label, Sex, Subject

MANIFEST_HEADER = ("id", "path", "age", "sex", "label")


def load_manifest(path: str | Path) -> list[Subject]:
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e

    subjects = []
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: expected header {','.join(MANIFEST_HEADER)}, got {header}",
                row=1,
            )
        # row numbers count the header as row 1
        for row_number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(
                    f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}",
                    row=row_number,
                )
            subject_id, volume_path, age, sex, label = (cell.strip() for cell in row)
            try:
                subjects.append(
                    Subject(
                        id=subject_id,
                        volume_path=volume_path,
                        age=age,  # pyright: ignore[reportArgumentType]
                        sex=sex,  # pyright: ignore[reportArgumentType]
                        label=label,  # pyright: ignore[reportArgumentType]
                    )
                )
            except pydantic.ValidationError as e:
                problems = "; ".join(
                    f"{'.'.join(str(loc) for loc in err['loc'])}: {err['msg']}"
                    for err in e.errors()
                )
                raise ManifestError(problems, row=row_number) from e
    return subjects


def save_manifest(subjects: list[Subject], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for subject in subjects:
            if subject.flipped:
                continue
            writer.writerow(
                [
                    subject.id,
                    subject.volume_path,
                    subject.age,
                    subject.sex.value,
                    subject.label.value,
                ]
            )


class DemographicRow(StrictModel):
    sex: Sex
    label: Label
    count: int
    mean: float | None = None
    std: float | None = None
    min: int | None = None
    q25: float | None = None
    q50: float | None = None
    q75: float | None = None
    max: int | None = None


def describe_demographics(subjects: list[Subject]) -> list[DemographicRow]:
    """Age statistics per sex x label group; flipped copies are not counted."""
    rows = []
    originals = [s for s in subjects if not s.flipped]
    for sex in Sex:
        for label in Label:
            ages = np.array(
                [s.age for s in originals if s.sex is sex and s.label is label],
                dtype=np.float64,
            )
            if ages.size == 0:
                rows.append(DemographicRow(sex=sex, label=label, count=0))
                continue
            q25, q50, q75 = np.percentile(ages, [25, 50, 75])
            rows.append(
                DemographicRow(
                    sex=sex,
                    label=label,
                    count=int(ages.size),
                    mean=float(ages.mean()),
                    std=float(ages.std(ddof=1)) if ages.size > 1 else 0.0,
                    min=int(ages.min()),
                    q25=float(q25),
                    q50=float(q50),
                    q75=float(q75),
                    max=int(ages.max()),
                )
            )
    return rows


def format_demographics(rows: list[DemographicRow]) -> str:
    lines = ["sex group count   mean    std  min    25%    50%    75%  max"]
    for row in rows:
        if row.count == 0:
            lines.append(f"{row.sex.value:<3} {row.label.value:<5} {0:>5}")
            continue
        lines.append(
            f"{row.sex.value:<3} {row.label.value:<5} {row.count:>5} "
            f"{row.mean:6.1f} {row.std:6.1f} {row.min:4d} "
            f"{row.q25:6.1f} {row.q50:6.1f} {row.q75:6.1f} {row.max:4d}"
        )
    return "\n".join(lines)

import math
from pathlib import Path
from typing import Sequence

import numpy as np
import pydantic

from pdvox.errors import SplitError
from pdvox.models.subject import DatasetSplit, Label, Subject

DEFAULT_FRACTIONS = (0.85, 0.10, 0.05)


def augment(subjects: Sequence[Subject]) -> list[Subject]:
    """Pair every subject with its hemisphere-flipped copy."""
    out = []
    for subject in subjects:
        out.append(subject)
        out.append(subject.model_copy(update={"flipped": not subject.flipped}))
    return out


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _controlled_rounding(
    totals: list[int], n_pd: int, n_hc: int, fractions: Sequence[float]
) -> tuple[list[int], list[int]]:
    # every (class, split) count is the floor or ceiling of its quota while
    # the split totals stay fixed
    q_pd = [n_pd * f for f in fractions]
    q_hc = [n_hc * f for f in fractions]
    lo = [
        max(math.floor(qp), total - math.ceil(qh))
        for qp, qh, total in zip(q_pd, q_hc, totals)
    ]
    hi = [
        min(math.ceil(qp), total - math.floor(qh))
        for qp, qh, total in zip(q_pd, q_hc, totals)
    ]
    remaining = n_pd - sum(lo)
    if remaining < 0 or any(low > high for low, high in zip(lo, hi)):
        raise SplitError("cannot apportion classes across splits")

    pd_counts = list(lo)
    order = sorted(range(len(q_pd)), key=lambda i: (-(q_pd[i] - math.floor(q_pd[i])), i))
    for i in order:
        take = min(remaining, hi[i] - pd_counts[i])
        pd_counts[i] += take
        remaining -= take
    if remaining:
        raise SplitError("cannot apportion classes across splits")
    return pd_counts, [total - pd for total, pd in zip(totals, pd_counts)]


def stratified_split(
    subjects: Sequence[Subject],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> DatasetSplit:
    """
    Split by subject id into train/dev/test.

    All entries sharing an id (an original and its flipped copy) land in the
    same split. Split sizes use largest-remainder rounding and each class gets
    the floor or ceiling of its share of every split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise SplitError(f"expected 3 fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise SplitError(f"every fraction must be positive, got {fractions}")
    if abs(sum(fractions) - 1) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")

    groups: dict[str, list[Subject]] = {}
    for subject in subjects:
        group = groups.setdefault(subject.id, [])
        if group and group[0].label is not subject.label:
            raise SplitError(f"subject {subject.id!r} has conflicting labels")
        group.append(subject)

    ids_by_label = {
        label: sorted(sid for sid, group in groups.items() if group[0].label is label)
        for label in Label
    }
    totals = largest_remainder(len(groups), fractions)
    if min(totals) == 0:
        raise SplitError(
            f"{len(groups)} subjects are too few to populate splits {fractions}"
        )
    pd_counts, hc_counts = _controlled_rounding(
        totals, len(ids_by_label[Label.PD]), len(ids_by_label[Label.HC]), fractions
    )

    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    for label, counts in ((Label.HC, hc_counts), (Label.PD, pd_counts)):
        ids = ids_by_label[label]
        permuted = [ids[i] for i in rng.permutation(len(ids))]
        start = 0
        for split_index, count in enumerate(counts):
            for sid in permuted[start : start + count]:
                assignment[sid] = split_index
            start += count

    buckets: list[list[Subject]] = [[], [], []]
    for subject in subjects:
        buckets[assignment[subject.id]].append(subject)
    return DatasetSplit(
        train=buckets[0],
        dev=buckets[1],
        test=buckets[2],
        fractions=fractions,  # pyright: ignore[reportArgumentType]
        seed=seed,
    )


def augment_split(split: DatasetSplit, augment_eval: bool = False) -> DatasetSplit:
    return split.model_copy(
        update={
            "train": augment(split.train),
            "dev": augment(split.dev) if augment_eval else split.dev,
            "test": augment(split.test) if augment_eval else split.test,
        }
    )


def save_split(split: DatasetSplit, path: str | Path) -> None:
    Path(path).write_text(split.model_dump_json(indent=2))


def load_split(path: str | Path) -> DatasetSplit:
    path = Path(path)
    try:
        return DatasetSplit.model_validate_json(path.read_text())
    except OSError as e:
        raise SplitError(f"cannot read split record {path}: {e}") from e
    except pydantic.ValidationError as e:
        raise SplitError(f"invalid split record {path}: {e}") from e

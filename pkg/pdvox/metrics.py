"""
Binary HC/PD evaluation with PD as the positive class.

Zero-division conventions: precision is 0 when nothing is predicted PD,
recall is 0 when no PD is present, F2 is 0 when both are 0, except that F2 is
1 when there are no positives and no false positives (the vacuous case).
"""

from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import numpy.typing as npt
from pydantic import Field

from pdvox.models.common import StrictModel
from pdvox.models.report import ClassificationReport, ConfusionCounts
from pdvox.models.subject import Label, Subject

NormalizedBy = Literal["predicted", "truth"]


def as_label_indices(labels: Sequence[Label | int] | np.ndarray) -> np.ndarray:
    return np.array(
        [label.index if isinstance(label, Label) else int(label) for label in labels],
        dtype=np.int64,
    )


def confusion(
    pred: Sequence[Label | int] | np.ndarray,
    truth: Sequence[Label | int] | np.ndarray,
    normalized_by: NormalizedBy = "predicted",
) -> tuple[ConfusionCounts, list[list[float]]]:
    """
    Counts plus the row-normalized 2x2 matrix, indexed [row][column] with
    0 = HC and 1 = PD. Rows are predicted classes by default; a row whose class
    never occurs stays all zeros.
    """
    pred = as_label_indices(pred)
    truth = as_label_indices(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"{len(pred)} predictions for {len(truth)} labels")
    if pred.size == 0:
        raise ValueError("cannot tally an empty evaluation")

    pred_pd = pred == 1
    truth_pd = truth == 1
    counts = ConfusionCounts(
        tp=int(np.sum(pred_pd & truth_pd)),
        tn=int(np.sum(~pred_pd & ~truth_pd)),
        fp=int(np.sum(pred_pd & ~truth_pd)),
        fn=int(np.sum(~pred_pd & truth_pd)),
    )
    # raw[predicted][true]
    raw = [[counts.tn, counts.fn], [counts.fp, counts.tp]]
    if normalized_by == "truth":
        raw = [list(row) for row in zip(*raw)]
    matrix = []
    for row in raw:
        total = sum(row)
        matrix.append([v / total for v in row] if total else [0.0, 0.0])
    return counts, matrix


def is_vacuous(c: ConfusionCounts) -> bool:
    return c.tp + c.fn == 0 and c.fp == 0


def precision_recall_f2(c: ConfusionCounts) -> tuple[float, float, float]:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    if is_vacuous(c):
        return precision, recall, 1.0
    if precision == 0 and recall == 0:
        return precision, recall, 0.0
    return precision, recall, 5 * precision * recall / (4 * precision + recall)


def roc_auc(
    scores: npt.ArrayLike, truth: Sequence[Label | int] | np.ndarray
) -> tuple[list[tuple[float, float]], float]:
    """
    Threshold sweep over the distinct scores, highest first, with tied scores
    sharing one threshold. The trapezoidal area is accumulated in integers so
    it equals the pairwise-concordance estimate exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = as_label_indices(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"{len(scores)} scores for {len(truth)} labels")
    positives = int(np.sum(truth == 1))
    negatives = int(truth.size - positives)
    if positives == 0 or negatives == 0:
        raise ValueError("ROC needs both classes present")

    points = [(0.0, 0.0)]
    tp = fp = 0
    twice_area = 0
    for threshold in np.unique(scores)[::-1]:
        at = scores == threshold
        new_tp = tp + int(np.sum(at & (truth == 1)))
        new_fp = fp + int(np.sum(at & (truth != 1)))
        twice_area += (new_fp - fp) * (new_tp + tp)
        tp, fp = new_tp, new_fp
        points.append((fp / negatives, tp / positives))
    return points, twice_area / (2 * positives * negatives)


def build_report(
    pred: Sequence[Label | int] | np.ndarray,
    truth: Sequence[Label | int] | np.ndarray,
    scores: npt.ArrayLike | None = None,
    normalized_by: NormalizedBy = "predicted",
) -> ClassificationReport:
    counts, matrix = confusion(pred, truth, normalized_by)
    precision, recall, f2 = precision_recall_f2(counts)
    roc_points = auc = None
    truth_indices = as_label_indices(truth)
    if scores is not None and len(np.unique(truth_indices == 1)) == 2:
        roc_points, auc = roc_auc(scores, truth_indices)
    return ClassificationReport(
        counts=counts,
        accuracy=(counts.tp + counts.tn) / counts.total,
        precision=precision,
        recall=recall,
        f2=f2,
        vacuous_f2=is_vacuous(counts),
        normalized_matrix=matrix,
        normalized_by=normalized_by,
        roc_points=roc_points,
        auc=auc,
    )


def export_roc(report: ClassificationReport, path: str | Path) -> None:
    """Two whitespace-separated columns, fpr and tpr, one point per line."""
    if report.roc_points is None:
        raise ValueError("report has no ROC curve (only one class present)")
    lines = ["# fpr tpr"] + [f"{fpr:.10g} {tpr:.10g}" for fpr, tpr in report.roc_points]
    Path(path).write_text("\n".join(lines) + "\n")


###
# Age-only baseline
###


class BaselineResult(StrictModel):
    accuracy: float = Field(ge=0, le=1)
    majority_rate: float = Field(
        ge=0, le=1, description="Test accuracy of always predicting the train majority"
    )
    n_train: int
    n_test: int
    weight: float
    bias: float
    losses: list[float]


def age_logistic_baseline(
    subjects: Sequence[Subject],
    seed: int = 0,
    iterations: int = 1000,
    lr: float = 0.5,
    holdout: float = 0.2,
) -> BaselineResult:
    """
    One-feature logistic regression of PD status on z-scored age, fit by full
    batch gradient descent and scored on a seeded holdout. Flipped copies are
    ignored.
    """
    originals = [s for s in subjects if not s.flipped]
    labels = np.array([s.label.index for s in originals], dtype=np.float64)
    ages = np.array([s.age for s in originals], dtype=np.float64)
    n_pd = int(labels.sum())
    if n_pd == 0 or n_pd == labels.size:
        raise ValueError("age baseline needs both classes present")
    if min(n_pd, labels.size - n_pd) < 10:
        raise ValueError("age baseline needs at least 10 subjects per class")

    order = np.random.default_rng(seed).permutation(labels.size)
    n_test = max(1, int(np.floor(labels.size * holdout + 0.5)))
    test, train = order[:n_test], order[n_test:]

    mean, std = ages[train].mean(), ages[train].std()
    z = (ages - mean) / (std if std > 0 else 1.0)
    x, y = z[train], labels[train]

    w = b = 0.0
    losses = []
    for _ in range(iterations):
        logits = w * x + b
        p = 1 / (1 + np.exp(-logits))
        # log(1 + e^l) - y*l, stable for either sign of l
        losses.append(float(np.mean(np.logaddexp(0, logits) - y * logits)))
        residual = p - y
        w -= lr * float(np.mean(residual * x))
        b -= lr * float(np.mean(residual))

    predicted = (w * z[test] + b) > 0
    majority = 1.0 if y.mean() >= 0.5 else 0.0
    return BaselineResult(
        accuracy=float(np.mean(predicted == labels[test].astype(bool))),
        majority_rate=float(np.mean(labels[test] == majority)),
        n_train=int(train.size),
        n_test=int(test.size),
        weight=w,
        bias=b,
        losses=losses,
    )

from typing import Literal

from pydantic import Field, model_validator

from pdvox.models.common import StrictModel


class ConfusionCounts(StrictModel):
    tp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


class ClassificationReport(StrictModel):
    """
    Evaluation of a binary HC/PD classifier, PD being the positive class.

    `normalized_matrix` is indexed [row][column] with index 0 = HC and 1 = PD;
    rows are predicted classes when `normalized_by == "predicted"`, true classes
    otherwise. `roc_points` and `auc` are None when only one class is present.
    """

    counts: ConfusionCounts
    accuracy: float = Field(ge=0, le=1)
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    f2: float = Field(ge=0, le=1)
    vacuous_f2: bool = False
    normalized_matrix: list[list[float]]
    normalized_by: Literal["predicted", "truth"] = "predicted"
    roc_points: list[tuple[float, float]] | None = None
    auc: float | None = Field(default=None, ge=0, le=1)

    @model_validator(mode="after")
    def check_matrix_shape(self):
        if len(self.normalized_matrix) != 2 or any(
            len(row) != 2 for row in self.normalized_matrix
        ):
            raise ValueError("normalized_matrix must be 2x2")
        return self

    def to_text(self) -> str:
        c = self.counts
        axis = "predicted" if self.normalized_by == "predicted" else "actual"
        lines = [
            f"samples    {c.total}",
            f"tp {c.tp}  tn {c.tn}  fp {c.fp}  fn {c.fn}",
            f"accuracy   {self.accuracy:.4f}",
            f"precision  {self.precision:.4f}",
            f"recall     {self.recall:.4f}",
            f"f2         {self.f2:.4f}" + ("  (vacuous: no positives)" if self.vacuous_f2 else ""),
            f"auc        {'n/a' if self.auc is None else f'{self.auc:.4f}'}",
            f"normalized confusion matrix (rows: {axis} HC, PD)",
        ]
        for name, row in zip(("HC", "PD"), self.normalized_matrix):
            lines.append(f"  {name}  {row[0]:.4f}  {row[1]:.4f}")
        return "\n".join(lines)

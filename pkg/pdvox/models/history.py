from pathlib import Path

from pydantic import Field

from pdvox.models.common import StrictModel


class EpochRecord(StrictModel):
    epoch: int = Field(ge=1)
    train_loss: float
    train_f2: float = Field(ge=0, le=1)
    dev_f2: float | None = Field(default=None, ge=0, le=1)
    lr: float = Field(gt=0)
    wall_time: float = Field(ge=0)


class TrainHistory(StrictModel):
    records: list[EpochRecord] = []
    best_epoch: int | None = None
    best_dev_f2: float | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    @property
    def final_train_f2(self) -> float | None:
        if not self.records:
            return None
        return self.records[-1].train_f2

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for record in self.records:
                f.write(record.model_dump_json() + "\n")

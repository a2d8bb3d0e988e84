import enum

from pydantic import Field, model_validator

from pdvox.models.common import StrictModel


class Sex(str, enum.Enum):
    F = "F"
    M = "M"


class Label(str, enum.Enum):
    HC = "HC"
    PD = "PD"

    @property
    def index(self) -> int:
        # PD is the positive class
        return 1 if self is Label.PD else 0

    @classmethod
    def from_index(cls, index: int) -> "Label":
        return cls.PD if index == 1 else cls.HC


class Subject(StrictModel):
    id: str = Field(min_length=1)
    volume_path: str = Field(min_length=1)
    age: int = Field(ge=0, le=120)
    sex: Sex
    label: Label
    flipped: bool = False


class SplitName(str, enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class DatasetSplit(StrictModel):
    train: list[Subject]
    dev: list[Subject]
    test: list[Subject]
    fractions: tuple[float, float, float]
    seed: int

    @model_validator(mode="after")
    def check_disjoint(self):
        seen: dict[str, str] = {}
        for split_name in ("train", "dev", "test"):
            for subject in getattr(self, split_name):
                other = seen.setdefault(subject.id, split_name)
                if other != split_name:
                    raise ValueError(
                        f"Subject {subject.id!r} appears in both {other} and {split_name}"
                    )
        return self

    def subjects(self, name: SplitName | str) -> list[Subject]:
        return getattr(self, SplitName(name).value)

    def assignment(self) -> dict[str, SplitName]:
        return {
            subject.id: name
            for name in SplitName
            for subject in self.subjects(name)
        }

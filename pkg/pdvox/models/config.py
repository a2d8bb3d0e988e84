import enum

from pydantic import Field, model_validator

from pdvox.models.common import StrictModel


class Variant(str, enum.Enum):
    ORIGINAL = "original"
    SIMPLIFIED = "simplified"


class NormMode(str, enum.Enum):
    NONE = "none"
    BATCH = "batch"
    GROUP = "group"


class ModelConfig(StrictModel):
    variant: Variant = Variant.SIMPLIFIED
    norm: NormMode = NormMode.NONE
    use_demographics: bool = False
    alpha: float = Field(default=0.0, ge=0, description="Leaky-ReLU slope for x < 0")
    rc: float = Field(
        default=0.0,
        ge=0,
        description="L2 coefficient applied to conv kernels and biases",
    )
    kp1: float = Field(default=1.0, gt=0, le=1, description="Keep probability, FC512")
    kp2: float = Field(default=1.0, gt=0, le=1, description="Keep probability, FC128")
    num_classes: int = Field(default=2, ge=2)


class TrainConfig(StrictModel):
    lr0: float = Field(default=1e-4, gt=0)
    decay_k: float = Field(default=0.0, ge=0)
    decay_steps: int = Field(default=1, ge=1)
    batch_size: int = Field(default=8, ge=1)
    max_epochs: int = Field(default=200, ge=0)
    seed: int = 0
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps_adam: float = Field(default=1e-8, gt=0)
    early_stop: bool = True
    stop_patience: int = Field(
        default=5,
        ge=1,
        description="Epochs of sustained train F2 = 1 before stopping",
    )


class LogUniform(StrictModel):
    low: float = Field(gt=0)
    high: float = Field(gt=0)

    @model_validator(mode="after")
    def check_bounds(self):
        if self.low > self.high:
            raise ValueError("`low` must not exceed `high`")
        return self


class Uniform(StrictModel):
    low: float
    high: float

    @model_validator(mode="after")
    def check_bounds(self):
        if self.low > self.high:
            raise ValueError("`low` must not exceed `high`")
        return self


class SearchSpace(StrictModel):
    lr0: LogUniform = LogUniform(low=1e-6, high=1e-3)
    alpha: list[float] = Field(default=[0.0, 0.01, 0.1], min_length=1)
    rc: LogUniform = LogUniform(low=1e-4, high=1e-1)
    rc_zero_probability: float = Field(default=0.25, ge=0, le=1)
    kp1: Uniform = Uniform(low=0.2, high=1.0)
    kp2: Uniform = Uniform(low=0.2, high=1.0)
    variant: list[Variant] = Field(
        default=[Variant.ORIGINAL, Variant.SIMPLIFIED], min_length=1
    )
    norm: list[NormMode] = Field(
        default=[NormMode.NONE, NormMode.BATCH, NormMode.GROUP], min_length=1
    )
    use_demographics: list[bool] = Field(default=[False, True], min_length=1)
    base_train: TrainConfig = TrainConfig()

    @model_validator(mode="after")
    def check_keep_probabilities(self):
        for name in ("kp1", "kp2"):
            bounds: Uniform = getattr(self, name)
            if bounds.low <= 0 or bounds.high > 1:
                raise ValueError(f"`{name}` range must lie in (0, 1]")
        if any(a < 0 for a in self.alpha):
            raise ValueError("`alpha` choices must be non-negative")
        return self

"""
The two 3D-CNN variants.

Original stacks two 3x3x3 convolutions before each of three max-pools
(32, 64, 128 channels; pool windows 2, 4, 4; stride 2); Simplified keeps one
convolution per block. Both continue with FC512 -> FC128 -> output, with
optional age/sex fusion at the output layer's input.
"""

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import numpy.typing as npt

from pdvox.errors import ShapeError
from pdvox.models.config import ModelConfig, NormMode, Variant
from pdvox.tensor import ops
from pdvox.tensor.ops import NormState
from pdvox.tensor.tape import Tape, Var

CONV_CHANNELS = (32, 64, 128)
POOL_WINDOWS = (2, 4, 4)
POOL_STRIDE = 2
KERNEL_SIZE = 3
FC_WIDTHS = (512, 128)
DEMOGRAPHIC_FEATURES = 2

Shape = tuple[int, ...]


@dataclass
class _ForwardContext:
    model: "Model"
    tape: Tape
    training: bool
    rng: np.random.Generator | None
    demographics: np.ndarray | None

    def param(self, name: str) -> Var:
        return self.tape.param(name, self.model.params[name])


@dataclass(frozen=True)
class Layer:
    name: str

    kind = "layer"

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def param_shapes(self) -> dict[str, Shape]:
        return {}

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        raise NotImplementedError


@dataclass(frozen=True)
class ConvLayer(Layer):
    in_channels: int
    out_channels: int
    kernel_size: int = KERNEL_SIZE

    kind = "conv"

    def output_shape(self, shape: Shape) -> Shape:
        return (*shape[:-1], self.out_channels)

    def param_shapes(self) -> dict[str, Shape]:
        k = self.kernel_size
        return {
            f"{self.name}.kernel": (k, k, k, self.in_channels, self.out_channels),
            f"{self.name}.bias": (self.out_channels,),
        }

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        return ctx.tape.conv3d(
            x, ctx.param(f"{self.name}.kernel"), ctx.param(f"{self.name}.bias")
        )


@dataclass(frozen=True)
class NormLayer(Layer):
    mode: NormMode
    channels: int

    kind = "norm"

    @property
    def groups(self) -> int:
        return ops.group_count(self.channels)

    def param_shapes(self) -> dict[str, Shape]:
        return {
            f"{self.name}.gamma": (self.channels,),
            f"{self.name}.beta": (self.channels,),
        }

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        gamma = ctx.param(f"{self.name}.gamma")
        beta = ctx.param(f"{self.name}.beta")
        if self.mode is NormMode.BATCH:
            state = ctx.model.norm_states[self.name]
            return ctx.tape.batch_norm(x, gamma, beta, state, ctx.training)
        return ctx.tape.group_norm(x, self.groups, gamma, beta)


@dataclass(frozen=True)
class LeakyReluLayer(Layer):
    alpha: float

    kind = "leaky_relu"

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        return ctx.tape.leaky_relu(x, self.alpha)


@dataclass(frozen=True)
class PoolLayer(Layer):
    window: int
    stride: int = POOL_STRIDE

    kind = "maxpool"

    def output_shape(self, shape: Shape) -> Shape:
        for extent in shape[:-1]:
            if extent < self.stride:
                raise ShapeError(
                    f"layer {self.name!r} receives spatial extents {shape[:-1]}, "
                    f"each must be at least {self.stride}"
                )
        return (*(math.ceil(e / self.stride) for e in shape[:-1]), shape[-1])

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        return ctx.tape.maxpool3d(x, self.window, self.stride)


@dataclass(frozen=True)
class FlattenLayer(Layer):
    kind = "flatten"

    def output_shape(self, shape: Shape) -> Shape:
        return (math.prod(shape),)

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        return ctx.tape.flatten(x)


@dataclass(frozen=True)
class DenseLayer(Layer):
    in_features: int
    out_features: int

    kind = "dense"

    def output_shape(self, shape: Shape) -> Shape:
        return (self.out_features,)

    def param_shapes(self) -> dict[str, Shape]:
        return {
            f"{self.name}.weight": (self.in_features, self.out_features),
            f"{self.name}.bias": (self.out_features,),
        }

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        return ctx.tape.dense(
            x, ctx.param(f"{self.name}.weight"), ctx.param(f"{self.name}.bias")
        )


@dataclass(frozen=True)
class DropoutLayer(Layer):
    keep_prob: float

    kind = "dropout"

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        if not ctx.training or self.keep_prob == 1:
            return x
        if ctx.rng is None:
            raise ValueError("training with dropout requires an rng")
        return ctx.tape.dropout(x, self.keep_prob, ctx.rng, ctx.training)


@dataclass(frozen=True)
class DemographicsLayer(Layer):
    """Appends the [N, 2] age/sex features to the incoming [N, F] activations."""

    features: int = DEMOGRAPHIC_FEATURES

    kind = "concat_demographics"

    def output_shape(self, shape: Shape) -> Shape:
        return (shape[0] + self.features,)

    def apply(self, ctx: _ForwardContext, x: Var) -> Var:
        assert ctx.demographics is not None
        return ctx.tape.concat(x, ctx.tape.constant(ctx.demographics))


@dataclass
class Model:
    config: ModelConfig
    input_extents: tuple[int, int, int]
    layers: list[Layer]
    params: dict[str, np.ndarray]
    norm_states: dict[str, NormState] = field(default_factory=dict)

    @property
    def conv_parameter_names(self) -> list[str]:
        return [
            name
            for layer in self.layers
            if isinstance(layer, ConvLayer)
            for name in layer.param_shapes()
        ]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype if self.params else np.dtype(np.float32)

    def shape_chain(self) -> Iterator[tuple[Layer, Shape]]:
        return shape_chain(self.layers, self.input_extents)

    def metadata(self) -> list[dict]:
        return [
            {
                "name": layer.name,
                "kind": layer.kind,
                "output_shape": list(shape),
                "parameters": sum(math.prod(s) for s in layer.param_shapes().values()),
            }
            for layer, shape in self.shape_chain()
        ]

    def astype(self, dtype: npt.DTypeLike) -> "Model":
        return Model(
            config=self.config,
            input_extents=self.input_extents,
            layers=list(self.layers),
            params={name: p.astype(dtype) for name, p in self.params.items()},
            norm_states={
                name: NormState(
                    running_mean=s.running_mean.astype(dtype),
                    running_var=s.running_var.astype(dtype),
                    momentum=s.momentum,
                    eps=s.eps,
                )
                for name, s in self.norm_states.items()
            },
        )

    def copy(self) -> "Model":
        return self.astype(self.dtype)


def shape_chain(
    layers: Sequence[Layer], input_extents: Sequence[int]
) -> Iterator[tuple[Layer, Shape]]:
    """Each layer with its per-sample output shape."""
    shape: Shape = (*input_extents, 1)
    for layer in layers:
        shape = layer.output_shape(shape)
        yield layer, shape


def _block_layers(cfg: ModelConfig) -> list[Layer]:
    convs_per_block = 2 if cfg.variant is Variant.ORIGINAL else 1
    layers: list[Layer] = []
    in_channels = 1
    conv_index = 0
    for block, (channels, window) in enumerate(zip(CONV_CHANNELS, POOL_WINDOWS), start=1):
        for _ in range(convs_per_block):
            conv_index += 1
            layers.append(ConvLayer(f"conv{conv_index}", in_channels, channels))
            if cfg.norm is not NormMode.NONE:
                layers.append(NormLayer(f"norm{conv_index}", cfg.norm, channels))
            layers.append(LeakyReluLayer(f"act{conv_index}", cfg.alpha))
            in_channels = channels
        layers.append(PoolLayer(f"pool{block}", window))
    return layers


def _init_param(name: str, shape: Shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    kind = name.rsplit(".", 1)[-1]
    if kind in ("kernel", "weight"):
        fan_in = math.prod(shape[:-1])
        return (rng.standard_normal(shape) * math.sqrt(2 / fan_in)).astype(np.float32)
    if kind == "gamma":
        return np.ones(shape, dtype=np.float32)
    return np.zeros(shape, dtype=np.float32)


def _check_extents(input_extents: Sequence[int]) -> tuple[int, int, int]:
    extents = tuple(int(e) for e in input_extents)
    if len(extents) != 3 or min(extents) < 1:
        raise ShapeError(f"input extents must be three positive integers, got {extents}")
    return extents  # pyright: ignore[reportReturnType]


def build_layers(cfg: ModelConfig, input_extents: Sequence[int]) -> list[Layer]:
    """The layer stack for `cfg`; raises ShapeError naming a pool that gets too little input."""
    extents = _check_extents(input_extents)
    layers = _block_layers(cfg)
    shape: Shape = (*extents, 1)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers.append(FlattenLayer("flatten"))
    in_features = math.prod(shape)

    for i, (width, keep_prob) in enumerate(zip(FC_WIDTHS, (cfg.kp1, cfg.kp2)), start=1):
        layers += [
            DenseLayer(f"fc{i}", in_features, width),
            LeakyReluLayer(f"fc{i}_act", cfg.alpha),
            DropoutLayer(f"fc{i}_dropout", keep_prob),
        ]
        in_features = width
    if cfg.use_demographics:
        layers.append(DemographicsLayer("demographics"))
        in_features += DEMOGRAPHIC_FEATURES
    layers.append(DenseLayer("output", in_features, cfg.num_classes))
    return layers


def build_model(
    cfg: ModelConfig, input_extents: Sequence[int], seed: int = 0
) -> Model:
    """
    Each parameter is initialized from its own generator keyed by (seed, name),
    so adding demographic fusion leaves every upstream parameter unchanged.
    """
    extents = _check_extents(input_extents)
    layers = build_layers(cfg, extents)
    params = {
        name: _init_param(name, param_shape, seed)
        for layer in layers
        for name, param_shape in layer.param_shapes().items()
    }
    norm_states = {
        layer.name: NormState.create(layer.channels)
        for layer in layers
        if isinstance(layer, NormLayer) and layer.mode is NormMode.BATCH
    }
    return Model(cfg, extents, layers, params, norm_states)


def _check_inputs(model: Model, volumes: np.ndarray, demographics: np.ndarray | None):
    expected = (*model.input_extents, 1)
    if volumes.ndim != 5 or volumes.shape[1:] != expected:
        raise ShapeError(
            f"model expects volumes shaped [N, {', '.join(map(str, expected))}], "
            f"got {list(volumes.shape)}"
        )
    if model.config.use_demographics:
        if demographics is None:
            raise ShapeError("model was built with demographics but none were given")
        if demographics.shape != (volumes.shape[0], DEMOGRAPHIC_FEATURES):
            raise ShapeError(
                f"demographics must have shape [{volumes.shape[0]}, {DEMOGRAPHIC_FEATURES}], "
                f"got {list(demographics.shape)}"
            )
    elif demographics is not None:
        raise ShapeError("model was built without demographics but some were given")


def forward_var(
    model: Model,
    tape: Tape,
    volumes: np.ndarray,
    demographics: np.ndarray | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Var:
    """Run the layer stack on `tape`; returns the logits Var."""
    _check_inputs(model, volumes, demographics)
    ctx = _ForwardContext(model, tape, training, rng, demographics)
    x = tape.constant(volumes.astype(model.dtype, copy=False))
    for layer in model.layers:
        x = layer.apply(ctx, x)
    return x


def forward(
    model: Model,
    volumes: np.ndarray,
    demographics: np.ndarray | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Logits [N, c] without recording anything."""
    return forward_var(
        model, Tape(enabled=False), volumes, demographics, training, rng
    ).value


def predict_proba(
    model: Model,
    volumes: np.ndarray,
    demographics: np.ndarray | None = None,
    batch_size: int = 8,
) -> np.ndarray:
    """Inference-mode class probabilities [N, c], in fixed-size batches."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    probs = []
    for start in range(0, volumes.shape[0], batch_size):
        stop = start + batch_size
        logits = forward(
            model,
            volumes[start:stop],
            None if demographics is None else demographics[start:stop],
        )
        probs.append(ops.softmax(logits))
    if not probs:
        return np.zeros((0, model.config.num_classes), dtype=model.dtype)
    return np.concatenate(probs)


def parameter_count(model: Model) -> int:
    return sum(p.size for p in model.params.values())

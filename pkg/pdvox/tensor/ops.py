"""
Layer primitives over channels-last tensors.

Every primitive is a `*_forward` / `*_backward` pair. The forward returns
`(out, cache)` and the backward takes the upstream gradient together with that
cache. Spatial tensors are laid out as [N, D, H, W, C], row-major.
"""

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
import numpy.typing as npt

from pdvox.errors import ShapeError

Tensor = npt.NDArray[np.floating]
Padding = Literal["same", "valid"]

DEFAULT_MOMENTUM = 0.9
DEFAULT_EPS = 1e-5


def check_tensor(x: np.ndarray, name: str = "input", ndim: int | None = None) -> None:
    if ndim is not None and x.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {x.shape}")
    if any(extent < 1 for extent in x.shape):
        raise ShapeError(f"{name} has a zero extent: {x.shape}")


class AxisGeometry(NamedTuple):
    out: int
    before: int
    after: int


def axis_geometry(extent: int, window: int, stride: int, padding: Padding) -> AxisGeometry:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if padding == "same":
        out = math.ceil(extent / stride)
        total = max((out - 1) * stride + window - extent, 0)
        return AxisGeometry(out, total // 2, total - total // 2)
    if padding == "valid":
        if window > extent:
            raise ShapeError(f"window {window} exceeds extent {extent}")
        return AxisGeometry((extent - window) // stride + 1, 0, 0)
    raise ValueError(f"Unknown padding {padding!r}")


def _window_slices(
    offsets: tuple[int, int, int], geometry: list[AxisGeometry], stride: int
) -> tuple[slice, ...]:
    spatial = tuple(
        slice(offset, offset + stride * (g.out - 1) + 1, stride)
        for offset, g in zip(offsets, geometry)
    )
    return (slice(None), *spatial, slice(None))


###
# Convolution
###


@dataclass
class ConvCache:
    x_padded: np.ndarray
    kernel: np.ndarray
    stride: int
    geometry: list[AxisGeometry]
    input_shape: tuple[int, ...]


def conv3d_forward(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: Padding = "same",
) -> tuple[Tensor, ConvCache]:
    """
    Cross-correlation of `x` [N, D, H, W, Cin] with `kernel` [kd, kh, kw, Cin, Cout].

    Computed as one (N·D'·H'·W', Cin) x (Cin, Cout) matrix product per kernel
    offset, accumulated in a fixed order.
    """
    check_tensor(x, "input", ndim=5)
    check_tensor(kernel, "kernel", ndim=5)
    kd, kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(
            f"input has {x.shape[-1]} channels but the kernel expects {cin}"
        )
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")

    geometry = [
        axis_geometry(extent, k, stride, padding)
        for extent, k in zip(x.shape[1:4], (kd, kh, kw))
    ]
    pads = [(0, 0), *((g.before, g.after) for g in geometry), (0, 0)]
    x_padded = np.pad(x, pads)

    n = x.shape[0]
    out_spatial = tuple(g.out for g in geometry)
    dtype = np.result_type(x, kernel)
    acc = np.zeros((n * math.prod(out_spatial), cout), dtype=dtype)
    for offsets in np.ndindex(kd, kh, kw):
        patch = x_padded[_window_slices(offsets, geometry, stride)]
        acc += patch.reshape(-1, cin) @ kernel[offsets]
    out = acc.reshape(n, *out_spatial, cout) + bias

    cache = ConvCache(x_padded, kernel, stride, geometry, x.shape)
    return out, cache


def conv3d_backward(
    dout: Tensor, cache: ConvCache
) -> tuple[Tensor, Tensor, Tensor]:
    kernel = cache.kernel
    kd, kh, kw, cin, cout = kernel.shape
    x_padded = cache.x_padded

    dflat = dout.reshape(-1, cout)
    dbias = dflat.sum(axis=0)
    dkernel = np.zeros_like(kernel)
    dx_padded = np.zeros_like(x_padded)
    for offsets in np.ndindex(kd, kh, kw):
        window = _window_slices(offsets, cache.geometry, cache.stride)
        patch = x_padded[window]
        dkernel[offsets] = patch.reshape(-1, cin).T @ dflat
        dx_padded[window] += (dflat @ kernel[offsets].T).reshape(patch.shape)

    _, d, h, w, _ = cache.input_shape
    bd, bh, bw = (g.before for g in cache.geometry)
    dx = dx_padded[:, bd : bd + d, bh : bh + h, bw : bw + w, :]
    return dx, dkernel, dbias


###
# Max pooling
###


@dataclass
class PoolCache:
    argmax: np.ndarray
    """Flat indices into the padded input, one per output element."""
    padded_shape: tuple[int, ...]
    geometry: list[AxisGeometry]
    input_shape: tuple[int, ...]


def maxpool3d_forward(
    x: Tensor, window: int, stride: int
) -> tuple[Tensor, PoolCache]:
    """
    Same-style max pooling: output extents are ceil(in / stride), windows are
    clipped at the borders and clipped cells never win. Ties go to the lowest
    flat index.
    """
    check_tensor(x, "input", ndim=5)
    geometry = [axis_geometry(extent, window, stride, "same") for extent in x.shape[1:4]]
    pads = [(0, 0), *((g.before, g.after) for g in geometry), (0, 0)]
    x_padded = np.pad(x, pads, constant_values=-np.inf)
    if any(extent < window for extent in x_padded.shape[1:4]):
        raise ShapeError(
            f"pool window {window} larger than padded input {x_padded.shape[1:4]}"
        )

    n, c = x.shape[0], x.shape[-1]
    od, oh, ow = (g.out for g in geometry)
    views = np.lib.stride_tricks.sliding_window_view(
        x_padded, (window, window, window), axis=(1, 2, 3)
    )
    views = views[:, ::stride, ::stride, ::stride][:, :od, :oh, :ow]
    # [N, od, oh, ow, C, w, w, w] -> [N, od, oh, ow, C, w^3], window row-major
    flat_windows = views.reshape(n, od, oh, ow, c, window**3)
    arg = flat_windows.argmax(axis=-1)
    out = np.take_along_axis(flat_windows, arg[..., None], axis=-1)[..., 0]

    a, b, e = np.unravel_index(arg, (window, window, window))
    nn, dd, hh, ww, cc = np.indices(arg.shape, sparse=True)
    coords = np.broadcast_arrays(
        nn, dd * stride + a, hh * stride + b, ww * stride + e, cc
    )
    argmax = np.ravel_multi_index(tuple(coords), x_padded.shape)

    return out, PoolCache(argmax, x_padded.shape, geometry, x.shape)


def maxpool3d_backward(dout: Tensor, cache: PoolCache) -> Tensor:
    dx_padded = np.zeros(math.prod(cache.padded_shape), dtype=dout.dtype)
    np.add.at(dx_padded, cache.argmax.ravel(), dout.ravel())
    dx_padded = dx_padded.reshape(cache.padded_shape)
    _, d, h, w, _ = cache.input_shape
    bd, bh, bw = (g.before for g in cache.geometry)
    return dx_padded[:, bd : bd + d, bh : bh + h, bw : bw + w, :]


###
# Activation, affine
###


def leaky_relu_forward(x: Tensor, alpha: float) -> tuple[Tensor, tuple[np.ndarray, float]]:
    positive = x >= 0
    return np.where(positive, x, alpha * x), (positive, alpha)


def leaky_relu_backward(dout: Tensor, cache: tuple[np.ndarray, float]) -> Tensor:
    positive, alpha = cache
    return np.where(positive, dout, alpha * dout)


def dense_forward(
    x: Tensor, w: Tensor, b: Tensor
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    check_tensor(x, "input", ndim=2)
    if w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply input {x.shape} by weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias must have shape ({w.shape[1]},), got {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(
    dout: Tensor, cache: tuple[Tensor, Tensor]
) -> tuple[Tensor, Tensor, Tensor]:
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


###
# Normalization
###


@dataclass
class NormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = DEFAULT_MOMENTUM
    eps: float = DEFAULT_EPS

    @classmethod
    def create(
        cls,
        channels: int,
        dtype: npt.DTypeLike = np.float32,
        momentum: float = DEFAULT_MOMENTUM,
        eps: float = DEFAULT_EPS,
    ) -> "NormState":
        if not 0 < momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        return cls(
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class NormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool


def batch_norm_forward(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: NormState,
    training: bool,
) -> tuple[Tensor, NormCache]:
    """
    Per-channel normalization over every axis but the last. In training mode
    the running statistics in `state` are updated in place.
    """
    check_tensor(x)
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(
            state.running_mean.dtype
        )
        state.running_var = (m * state.running_var + (1 - m) * var).astype(
            state.running_var.dtype
        )
    else:
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv_std = 1 / np.sqrt(var + x.dtype.type(state.eps))
    x_hat = (x - mean) * inv_std
    return gamma * x_hat + beta, NormCache(x_hat, inv_std, gamma, training)


def batch_norm_backward(
    dout: Tensor, cache: NormCache
) -> tuple[Tensor, Tensor, Tensor]:
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * cache.x_hat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dx_hat = dout * cache.gamma
    if not cache.training:
        return dx_hat * cache.inv_std, dgamma, dbeta
    m = math.prod(dout.shape[:-1])
    dx = (cache.inv_std / m) * (
        m * dx_hat
        - dx_hat.sum(axis=axes)
        - cache.x_hat * (dx_hat * cache.x_hat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


def group_count(channels: int, preferred: int = 8) -> int:
    return min(preferred, channels)


def group_norm_forward(
    x: Tensor,
    groups: int,
    gamma: Tensor,
    beta: Tensor,
    eps: float = DEFAULT_EPS,
) -> tuple[Tensor, NormCache]:
    """Per-sample normalization over (spatial, channels-in-group)."""
    check_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"group_norm needs a batch and a channel axis, got {x.shape}")
    channels = x.shape[-1]
    if groups < 1 or channels % groups:
        raise ShapeError(f"{groups} groups do not divide {channels} channels")

    grouped = x.reshape(x.shape[0], -1, groups, channels // groups)
    mean = grouped.mean(axis=(1, 3), keepdims=True)
    var = grouped.var(axis=(1, 3), keepdims=True)
    inv_std = 1 / np.sqrt(var + x.dtype.type(eps))
    x_hat = (grouped - mean) * inv_std
    out = gamma * x_hat.reshape(x.shape) + beta
    return out, NormCache(x_hat, inv_std, gamma, training=True)


def group_norm_backward(
    dout: Tensor, cache: NormCache
) -> tuple[Tensor, Tensor, Tensor]:
    axes = tuple(range(dout.ndim - 1))
    x_hat = cache.x_hat
    dgamma = (dout * x_hat.reshape(dout.shape)).sum(axis=axes)
    dbeta = dout.sum(axis=axes)

    dx_hat = (dout * cache.gamma).reshape(x_hat.shape)
    m = x_hat.shape[1] * x_hat.shape[3]
    dx = (cache.inv_std / m) * (
        m * dx_hat
        - dx_hat.sum(axis=(1, 3), keepdims=True)
        - x_hat * (dx_hat * x_hat).sum(axis=(1, 3), keepdims=True)
    )
    return dx.reshape(dout.shape), dgamma, dbeta


###
# Dropout
###


def dropout_forward(
    x: Tensor,
    keep_prob: float,
    rng: np.random.Generator,
    training: bool,
) -> tuple[Tensor, np.ndarray | None]:
    """Inverted dropout; identity at inference and for keep_prob == 1."""
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1:
        return x, None
    scaled_mask = ((rng.random(x.shape) < keep_prob) / keep_prob).astype(x.dtype)
    return x * scaled_mask, scaled_mask


def dropout_backward(dout: Tensor, scaled_mask: np.ndarray | None) -> Tensor:
    if scaled_mask is None:
        return dout
    return dout * scaled_mask


###
# Loss
###


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor, labels: npt.ArrayLike
) -> tuple[float, Tensor]:
    """Mean cross-entropy over the batch, stabilized by max-subtraction."""
    check_tensor(logits, "logits", ndim=2)
    labels = np.asarray(labels)
    n, c = logits.shape
    if c < 2:
        raise ShapeError(f"need at least 2 classes, got {c}")
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got {labels.tolist()}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), labels].mean()
    return float(loss), np.exp(log_probs)


def softmax_cross_entropy_backward(probs: Tensor, labels: npt.ArrayLike) -> Tensor:
    labels = np.asarray(labels)
    n = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    return dlogits / n

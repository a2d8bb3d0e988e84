from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

from pdvox.tensor import ops
from pdvox.tensor.ops import NormState, Padding, Tensor


class Var:
    """A value flowing through a recorded forward pass."""

    __slots__ = ("value", "name")

    def __init__(self, value: Tensor, name: str | None = None):
        self.value = value
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Node:
    output: Var
    inputs: tuple[Var, ...]
    backward: BackwardFn


class Tape:
    """
    Records the forward pass in execution order.

    With `enabled=False` nothing is recorded, which is how inference runs.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._nodes: list[_Node] = []
        self._params: dict[str, Var] = {}

    @property
    def params(self) -> dict[str, Var]:
        return self._params

    def __len__(self):
        return len(self._nodes)

    def param(self, name: str, value: Tensor) -> Var:
        existing = self._params.get(name)
        if existing is not None:
            if existing.value is not value:
                raise ValueError(f"Parameter {name!r} already registered on this tape")
            return existing
        var = Var(value, name=name)
        self._params[name] = var
        return var

    def constant(self, value: Tensor) -> Var:
        return Var(value)

    def _record(self, value: np.ndarray, inputs: tuple[Var, ...], backward: BackwardFn) -> Var:
        out = Var(value)
        if self.enabled:
            self._nodes.append(_Node(out, inputs, backward))
        return out

    def conv3d(
        self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: int = 1,
        padding: Padding = "same",
    ) -> Var:
        out, cache = ops.conv3d_forward(x.value, kernel.value, bias.value, stride, padding)
        return self._record(
            out, (x, kernel, bias), lambda dout: ops.conv3d_backward(dout, cache)
        )

    def maxpool3d(self, x: Var, window: int, stride: int) -> Var:
        out, cache = ops.maxpool3d_forward(x.value, window, stride)
        return self._record(
            out, (x,), lambda dout: (ops.maxpool3d_backward(dout, cache),)
        )

    def leaky_relu(self, x: Var, alpha: float) -> Var:
        out, cache = ops.leaky_relu_forward(x.value, alpha)
        return self._record(
            out, (x,), lambda dout: (ops.leaky_relu_backward(dout, cache),)
        )

    def dense(self, x: Var, w: Var, b: Var) -> Var:
        out, cache = ops.dense_forward(x.value, w.value, b.value)
        return self._record(
            out, (x, w, b), lambda dout: ops.dense_backward(dout, cache)
        )

    def batch_norm(
        self, x: Var, gamma: Var, beta: Var, state: NormState, training: bool
    ) -> Var:
        out, cache = ops.batch_norm_forward(
            x.value, gamma.value, beta.value, state, training
        )
        return self._record(
            out, (x, gamma, beta), lambda dout: ops.batch_norm_backward(dout, cache)
        )

    def group_norm(self, x: Var, groups: int, gamma: Var, beta: Var) -> Var:
        out, cache = ops.group_norm_forward(x.value, groups, gamma.value, beta.value)
        return self._record(
            out, (x, gamma, beta), lambda dout: ops.group_norm_backward(dout, cache)
        )

    def dropout(
        self, x: Var, keep_prob: float, rng: np.random.Generator, training: bool
    ) -> Var:
        out, mask = ops.dropout_forward(x.value, keep_prob, rng, training)
        return self._record(
            out, (x,), lambda dout: (ops.dropout_backward(dout, mask),)
        )

    def flatten(self, x: Var) -> Var:
        shape = x.shape
        return self._record(
            x.value.reshape(shape[0], -1), (x,), lambda dout: (dout.reshape(shape),)
        )

    def concat(self, a: Var, b: Var) -> Var:
        """Concatenate two [N, F] values along the feature axis."""
        split = a.shape[1]
        out = np.concatenate([a.value, b.value.astype(a.dtype)], axis=1)
        return self._record(
            out, (a, b), lambda dout: (dout[:, :split], dout[:, split:])
        )

    def add(self, a: Var, b: Var) -> Var:
        return self._record(a.value + b.value, (a, b), lambda dout: (dout, dout))

    def sum(self, x: Var) -> Var:
        shape = x.shape
        return self._record(
            np.asarray(x.value.sum()),
            (x,),
            lambda dout: (np.broadcast_to(dout, shape).astype(x.dtype),),
        )

    def softmax_cross_entropy(
        self, logits: Var, labels: npt.ArrayLike
    ) -> tuple[Var, Tensor]:
        loss, probs = ops.softmax_cross_entropy(logits.value, labels)
        labels = np.asarray(labels)
        out = self._record(
            np.asarray(loss, dtype=logits.dtype),
            (logits,),
            lambda dout: (dout * ops.softmax_cross_entropy_backward(probs, labels),),
        )
        return out, probs


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """
    Reverse-mode sweep from a scalar `loss` recorded on `tape`.

    Returns one gradient per registered parameter, keyed by name and shaped like
    the parameter; parameters the loss does not reach get zeros.
    """
    if not tape.enabled or len(tape) == 0:
        raise RuntimeError("backward called before a forward pass was recorded")
    if loss.value.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(node.output is loss for node in tape._nodes):
        raise RuntimeError("loss was not produced by this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape._nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        for inp, grad in zip(node.inputs, node.backward(upstream)):
            if grad is None:
                continue
            key = id(inp)
            grads[key] = grads[key] + grad if key in grads else grad

    return {
        name: np.asarray(grads.get(id(var), np.zeros_like(var.value)), dtype=var.dtype)
        for name, var in tape.params.items()
    }

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np

from pdvox.errors import NumericalError, ShapeError
from pdvox.models.config import TrainConfig

if TYPE_CHECKING:
    from pdvox.net.architecture import Model


def lr_schedule(lr0: float, k: float, step: int, decay_steps: int) -> float:
    """Staircase exponential decay: lr0 * exp(-k * floor(step / decay_steps))."""
    if lr0 <= 0:
        raise ValueError(f"lr0 must be positive, got {lr0}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if decay_steps < 1:
        raise ValueError(f"decay_steps must be >= 1, got {decay_steps}")
    if k == 0:
        return lr0
    return lr0 * math.exp(-k * (step // decay_steps))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    tc: TrainConfig,
) -> dict[str, np.ndarray]:
    """
    One bias-corrected Adam update, applied to `params` in place.

    Every gradient is validated before any parameter moves.
    """
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"no gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}"
            )
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")

    state.step += 1
    t = state.step
    b1, b2 = tc.beta1, tc.beta2
    correction1 = 1 - b1**t
    correction2 = 1 - b2**t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p -= (lr * m_hat / (np.sqrt(v_hat) + tc.eps_adam)).astype(p.dtype, copy=False)
    return params


def l2_penalty(model: "Model", rc: float) -> tuple[float, dict[str, np.ndarray]]:
    """rc * sum of squares over conv kernels and biases, with its gradient."""
    if rc < 0:
        raise ValueError(f"rc must be non-negative, got {rc}")
    if rc == 0:
        return 0.0, {}
    loss = 0.0
    grads = {}
    for name in model.conv_parameter_names:
        p = model.params[name]
        loss += rc * float(np.sum(np.square(p, dtype=np.float64)))
        grads[name] = (2 * rc * p).astype(p.dtype, copy=False)
    return loss, grads

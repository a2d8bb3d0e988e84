from typing import Callable, Iterable

import numpy as np


def finite_difference_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> np.ndarray:
    """
    Central differences (f(x + h·e) - f(x - h·e)) / 2h per coordinate.

    `x` is perturbed in place and restored, so `f` may close over it. When
    `coords` (flat indices) is given only those coordinates are evaluated and
    the rest of the result is left at zero.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    if not np.shares_memory(flat, x):
        raise ValueError("x must be contiguous so it can be perturbed in place")

    for i in range(flat.size) if coords is None else coords:
        original = flat[i]
        try:
            flat[i] = original + h
            f_plus = f(x)
            flat[i] = original - h
            f_minus = f(x)
        finally:
            flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def sample_coords(size: int, count: int, rng: np.random.Generator) -> list[int]:
    if size <= count:
        return list(range(size))
    return sorted(rng.choice(size, size=count, replace=False).tolist())

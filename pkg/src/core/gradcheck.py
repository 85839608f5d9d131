"""
Gradient Checking - Central finite differences against backward().

Perturbs tensor data in place and restores it, so the function under test
may close over the very tensors being checked (model parameters).
"""

import logging
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from src.core.errors import InputError
from src.core.tensor import Tape, Tensor

logger = logging.getLogger("ssdnet.gradcheck")

MIN_STEP = 1e-5
MAX_STEP = 1e-2


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _scalar(value: Tensor) -> float:
    return float(value.data.reshape(-1)[0])


def _check_step(step: float) -> None:
    if not MIN_STEP <= step <= MAX_STEP:
        raise InputError(f"finite-difference step must be in [{MIN_STEP}, {MAX_STEP}], got {step}")


def _compare_coordinates(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    analytic: np.ndarray,
    coords: Iterable[int],
    step: float,
) -> float:
    flat = tensor.data.reshape(-1)
    grad = analytic.reshape(-1)
    worst = 0.0
    for i in coords:
        original = flat[i]
        flat[i] = original + step
        plus = _scalar(loss_fn())
        flat[i] = original - step
        minus = _scalar(loss_fn())
        flat[i] = original
        numeric = (plus - minus) / (2 * step)
        worst = max(worst, relative_error(float(grad[i]), numeric))
    return worst


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """
    Compare backward()'s gradient of a scalar function with central differences.

    Args:
        f: Scalar-valued function of x
        x: Point to check at (its data is perturbed and restored)
        step: Difference step h

    Returns:
        Max over coordinates of |a - b| / max(|a|, |b|, 1e-8)
    """
    _check_step(step)
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        root = f(x)
    tape.backward(root)
    analytic = x.grad if x.grad is not None else np.zeros(x.shape, dtype=x.dtype)
    return _compare_coordinates(lambda: f(x), x, analytic, range(x.size), step)


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    coords_per_tensor: Optional[int] = None,
    seed: int = 0,
    group_of: Callable[[str], str] = lambda name: name,
) -> dict[str, float]:
    """
    Finite-difference check of every named tensor a loss depends on.

    Args:
        loss_fn: Zero-argument function computing the scalar loss
        params: Named tensors to check
        step: Difference step h
        coords_per_tensor: Sample at most this many coordinates per tensor
            (None checks all of them)
        seed: Seed for the coordinate sample
        group_of: Maps a tensor name to the group it is reported under

    Returns:
        Max relative error per group
    """
    _check_step(step)
    for tensor in params.values():
        tensor.requires_grad = True
        tensor.grad = None
    with Tape() as tape:
        root = loss_fn()
    tape.backward(root)

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, tensor in params.items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape, dtype=tensor.dtype)
        if coords_per_tensor is None or tensor.size <= coords_per_tensor:
            coords = range(tensor.size)
        else:
            coords = sorted(rng.choice(tensor.size, size=coords_per_tensor, replace=False).tolist())
        error = _compare_coordinates(loss_fn, tensor, analytic, coords, step)
        group = group_of(name)
        errors[group] = max(errors.get(group, 0.0), error)
        logger.debug(f"{name}: max relative error {error:.3e}")
    return errors

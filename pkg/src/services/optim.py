"""
Optimizer Service - Adam with bias correction and the linear LR schedule.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from src.core.errors import ConfigError, InputError, OptimizerError
from src.model.params import ParameterStore

logger = logging.getLogger("ssdnet.optim")


@dataclass
class OptimState:
    """First/second moments per parameter name and the global step counter."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParameterStore) -> "OptimState":
        return cls(
            first={name: np.zeros_like(t.data) for name, t in params.items()},
            second={name: np.zeros_like(t.data) for name, t in params.items()},
        )

    def check(self, params: ParameterStore) -> None:
        """Raise OptimizerError unless the moments mirror the parameters."""
        if self.step < 0:
            raise OptimizerError(f"optimizer step must be >= 0, got {self.step}")
        if list(self.first) != params.names() or list(self.second) != params.names():
            raise OptimizerError("optimizer moments do not match the parameter names")
        for name, tensor in params.items():
            if self.first[name].shape != tensor.shape or self.second[name].shape != tensor.shape:
                raise OptimizerError(f"optimizer moments for {name} do not match shape {tensor.shape}")


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("Adam eps must be > 0")


def adam_step(
    params: ParameterStore,
    state: OptimState,
    lr: float,
    config: AdamConfig = AdamConfig(),
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> OptimState:
    """
    One bias-corrected Adam update, in place.

    Args:
        params: Parameters to update
        state: Moments and step counter (mutated)
        lr: Step size
        config: β₁, β₂, ε
        grads: Gradient per name (defaults to each parameter's .grad)

    Returns:
        The updated state

    Raises:
        OptimizerError: a parameter has no gradient, or state is inconsistent
    """
    state.check(params)
    if grads is None:
        grads = {name: t.grad for name, t in params.items()}
    for name in params:
        if grads.get(name) is None:
            raise OptimizerError(f"missing gradient for parameter {name}")

    state.step += 1
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step
    for name, tensor in params.items():
        g = np.asarray(grads[name], dtype=tensor.dtype)
        m = state.first[name]
        v = state.second[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(tensor.dtype)
    return state


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    """Scale every .grad so their global L2 norm is at most max_norm; returns the norm before."""
    if max_norm <= 0:
        raise InputError(f"max_norm must be > 0, got {max_norm}")
    total = math.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2))
                          for t in params.values() if t.grad is not None))
    if total > max_norm:
        scale = max_norm / total
        for tensor in params.values():
            if tensor.grad is not None:
                tensor.grad = (tensor.grad * scale).astype(tensor.dtype)
    return total


def lr_schedule(epoch: int, total_epochs: int, lr_start: float, lr_end: float) -> float:
    """
    Linear decay from lr_start at epoch 0 to lr_end at the last epoch.

    Raises:
        InputError: epoch outside [0, total_epochs)
        ConfigError: lr_start < lr_end or lr_end <= 0
    """
    if not lr_start >= lr_end > 0:
        raise ConfigError(f"need lr_start >= lr_end > 0, got {lr_start}, {lr_end}")
    if not 0 <= epoch < total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch == 0:
        return lr_start
    if epoch == total_epochs - 1:
        return lr_end
    return lr_start + (lr_end - lr_start) * epoch / (total_epochs - 1)

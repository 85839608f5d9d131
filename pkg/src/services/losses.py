"""
Loss Service - Differentiable training objectives.

SSIM (Gaussian-window structural similarity), L1, and the composite
objective that supervises both the clean image and the recomposed input.
"""

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.errors import ConfigError, ShapeError
from src.core.nn import ConvSpec, conv2d
from src.core.tensor import Tensor, absolute, reduce_mean


@dataclass(frozen=True)
class SsimConfig:
    """Canonical SSIM constants for images in [0, data_range]."""

    window: int = 11
    sigma: float = 1.5
    data_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"SSIM window must be odd and positive, got {self.window}")
        if self.sigma <= 0 or self.data_range <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("SSIM sigma, data_range, k1 and k2 must be > 0")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def kernel(self) -> np.ndarray:
        return gaussian_window(self.window, self.sigma)


@functools.lru_cache(maxsize=8)
def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Separable 2-D Gaussian window normalised to sum 1 (float64)."""
    offsets = np.arange(size) - (size - 1) / 2
    profile = np.exp(-(offsets ** 2) / (2 * sigma ** 2))
    profile /= profile.sum()
    window = np.outer(profile, profile)
    window.setflags(write=False)
    return window


@dataclass(frozen=True)
class LossWeights:
    """Weights of the recomposition terms (SSIM and L1 of x' against x)."""

    alpha: float = 0.2
    beta: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be nonnegative")


def _window_filter(x: Tensor, cfg: SsimConfig) -> Tensor:
    channels = x.shape[1]
    weights = np.broadcast_to(cfg.kernel(), (channels, 1, cfg.window, cfg.window))
    spec = ConvSpec(channels, channels, cfg.window, groups=channels, has_bias=False)
    return conv2d(x, spec, Tensor(weights, dtype=x.dtype))


def ssim_map(e: Tensor, r: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Per-window SSIM values over valid (unpadded) window positions."""
    if e.shape != r.shape:
        raise ShapeError(f"SSIM inputs differ in shape: {e.shape} vs {r.shape}")
    if e.ndim != 4:
        raise ShapeError(f"SSIM expects N×C×H×W tensors, got {e.shape}")
    if min(e.shape[2:]) < cfg.window:
        raise ShapeError(f"SSIM needs extents >= {cfg.window}, got {e.shape[2:]}")

    mu_e = _window_filter(e, cfg)
    mu_r = _window_filter(r, cfg)
    var_e = _window_filter(e * e, cfg) - mu_e * mu_e
    var_r = _window_filter(r * r, cfg) - mu_r * mu_r
    cov = _window_filter(e * r, cfg) - mu_e * mu_r

    luminance = (2 * mu_e * mu_r + cfg.c1) / (mu_e * mu_e + mu_r * mu_r + cfg.c1)
    structure = (2 * cov + cfg.c2) / (var_e + var_r + cfg.c2)
    return luminance * structure


def ssim(e: Tensor, r: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Mean SSIM over windows, channels and batch."""
    return reduce_mean(ssim_map(e, r, cfg))


def ssim_loss(e: Tensor, r: Tensor, cfg: SsimConfig = SsimConfig()) -> Tensor:
    return 1.0 - ssim(e, r, cfg)


def l1_loss(e: Tensor, r: Tensor) -> Tensor:
    if e.shape != r.shape:
        raise ShapeError(f"L1 inputs differ in shape: {e.shape} vs {r.shape}")
    return reduce_mean(absolute(e - r))


def total_loss(
    clean: Tensor,
    reference: Tensor,
    recomposed: Tensor,
    degraded: Optional[Tensor],
    weights: LossWeights = LossWeights(),
    cfg: SsimConfig = SsimConfig(),
) -> Tensor:
    """
    L_ssim(x_c, y) + L_1(x_c, y) + α·L_ssim(x', x) + β·L_1(x', x).

    The degraded input is only read when α or β is nonzero.

    Args:
        clean: Predicted clean image x_c
        reference: Clean reference y
        recomposed: Recomposed input x' = x_c + x_d
        degraded: Network input x
        weights: α and β
        cfg: SSIM constants

    Returns:
        Scalar loss
    """
    loss = ssim_loss(clean, reference, cfg) + l1_loss(clean, reference)
    if weights.alpha:
        loss = loss + ssim_loss(recomposed, degraded, cfg) * weights.alpha
    if weights.beta:
        loss = loss + l1_loss(recomposed, degraded) * weights.beta
    return loss

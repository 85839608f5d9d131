"""
Neural Building Blocks - Differentiable convolutions, normalizations,
resampling, pooling and concatenation over NCHW tensors.

Convolution forward and backward both walk the k×k kernel offsets and
contract channels per offset, so each pass can be checked against a naive
loop.
"""

import functools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core.errors import ShapeError
from src.core.tensor import (
    Tensor,
    apply_op,
    concat,
    div,
    reduce_mean,
    reshape,
    sqrt,
)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride, self.groups) < 1:
            raise ShapeError(f"conv extents must be positive: {self}")
        if self.padding < 0:
            raise ShapeError(f"conv padding must be >= 0: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups {self.groups}"
            )

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def param_count(self) -> int:
        out, per_group, k, _ = self.weight_shape
        return out * per_group * k * k + (out if self.has_bias else 0)

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int, groups: int = 1, has_bias: bool = True):
        """Stride-1 convolution whose padding preserves spatial extents."""
        return cls(in_channels, out_channels, kernel, 1, (kernel - 1) // 2, groups, has_bias)


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Grouped 2-D convolution with zero padding.

    Args:
        x: Input N×C×H×W
        spec: Convolution geometry
        weight: out × in/groups × k × k
        bias: out, required iff spec.has_bias

    Returns:
        N×out×H'×W' with H' = (H + 2p - k) / s + 1
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects N×C×H×W, got {x.shape}")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d expects {spec.in_channels} input channels, got {c}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight shape {weight.shape} != {spec.weight_shape}")
    if spec.has_bias and (bias is None or bias.shape != (spec.out_channels,)):
        raise ShapeError(f"conv2d needs a bias of shape ({spec.out_channels},)")
    if not spec.has_bias and bias is not None:
        raise ShapeError("conv2d got a bias for a bias-free spec")

    k, s, p, g = spec.kernel, spec.stride, spec.padding, spec.groups
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError(f"conv2d output extent non-positive for input {h}×{w}, kernel {k}, padding {p}")
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    per_group, out_per_group = c // g, spec.out_channels // g

    padded = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = padded.shape[2:]
    grouped = padded.reshape(n, g, per_group, hp, wp)
    kernels = weight.data.reshape(g, out_per_group, per_group, k, k)

    def window(ki: int, kj: int):
        return (
            slice(None), slice(None), slice(None),
            slice(ki, ki + s * (ho - 1) + 1, s),
            slice(kj, kj + s * (wo - 1) + 1, s),
        )

    out = np.zeros((n, g, out_per_group, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            out += np.einsum(
                "ngchw,goc->ngohw", grouped[window(ki, kj)], kernels[:, :, :, ki, kj], optimize=True
            )
    out = out.reshape(n, spec.out_channels, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def backward_fn(grad):
        grad = grad.reshape(n, g, out_per_group, ho, wo)
        grad_x = np.zeros_like(grouped)
        grad_w = np.zeros_like(kernels)
        for ki in range(k):
            for kj in range(k):
                region = window(ki, kj)
                grad_w[:, :, :, ki, kj] = np.einsum(
                    "ngohw,ngchw->goc", grad, grouped[region], optimize=True
                )
                grad_x[region] += np.einsum(
                    "ngohw,goc->ngchw", grad, kernels[:, :, :, ki, kj], optimize=True
                )
        grad_x = grad_x.reshape(n, c, hp, wp)
        if p:
            grad_x = grad_x[:, :, p:p + h, p:p + w]
        grads = [grad_x, grad_w.reshape(weight.shape)]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 3, 4)).reshape(-1))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("conv2d", out, inputs, backward_fn)


def depthwise_separable(
    x: Tensor,
    dw_weight: Tensor,
    pw_weight: Tensor,
    dw_bias: Optional[Tensor] = None,
    pw_bias: Optional[Tensor] = None,
) -> Tensor:
    """Per-channel k×k convolution followed by a dense 1×1 convolution."""
    channels = x.shape[1]
    depthwise = ConvSpec.same(channels, channels, dw_weight.shape[-1], groups=channels, has_bias=dw_bias is not None)
    pointwise = ConvSpec.same(channels, pw_weight.shape[0], 1, has_bias=pw_bias is not None)
    return conv2d(conv2d(x, depthwise, dw_weight, dw_bias), pointwise, pw_weight, pw_bias)


def l2_normalize(t: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """y = t / (‖t‖₂ + ε) along one axis; zero slices stay zero."""
    norm = np.sqrt((t.data * t.data).sum(axis=axis, keepdims=True))
    denom = norm + eps
    out = t.data / denom

    def backward_fn(g):
        safe_norm = np.where(norm > 0, norm, 1)
        projection = (g * t.data).sum(axis=axis, keepdims=True)
        return (g / denom - t.data * projection / (safe_norm * denom * denom),)

    return apply_op("l2_normalize", out, (t,), backward_fn)


def layernorm_channels(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize channels at every spatial location, then apply gain/offset."""
    if x.ndim != 4:
        raise ShapeError(f"layernorm_channels expects N×C×H×W, got {x.shape}")
    mean = reduce_mean(x, axis=1, keep=True)
    centered = x - mean
    variance = reduce_mean(centered * centered, axis=1, keep=True)
    normed = div(centered, sqrt(variance + eps))
    return normed * reshape(gain, (1, -1, 1, 1)) + reshape(offset, (1, -1, 1, 1))


@functools.lru_cache(maxsize=64)
def _interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel (align-corners-false) linear interpolation weights, n_out × n_in."""
    scale = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        lo = min(int(np.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        weights[i, lo] += 1.0 - frac
        weights[i, hi] += frac
    weights.setflags(write=False)
    return weights


def resize_bilinear(x: Tensor, scale: float) -> Tensor:
    """Bilinear resampling by 0.5 or 2.0."""
    if x.ndim != 4:
        raise ShapeError(f"resize_bilinear expects N×C×H×W, got {x.shape}")
    _, _, h, w = x.shape
    if scale == 0.5:
        if h % 2 or w % 2:
            raise ShapeError(f"downsampling needs even extents, got {h}×{w}")
        ho, wo = h // 2, w // 2
    elif scale == 2.0:
        ho, wo = h * 2, w * 2
    else:
        raise ShapeError(f"resize scale must be 0.5 or 2.0, got {scale}")

    rows = _interpolation_matrix(h, ho).astype(x.dtype)
    cols = _interpolation_matrix(w, wo).astype(x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", rows, x.data, cols, optimize=True)

    def backward_fn(g):
        return (np.einsum("ih,ncij,jw->nchw", rows, g, cols, optimize=True),)

    return apply_op("resize_bilinear", out, (x,), backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, N×C×1×1."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects N×C×H×W, got {x.shape}")
    return reduce_mean(x, axis=(2, 3), keep=True)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels expects N×C×H×W tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    return concat([a, b], axis=1)

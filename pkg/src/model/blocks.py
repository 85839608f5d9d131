"""
SSD-Net Blocks - Adaptive sparse attention, transformer block, DSC channel
attention, the parallel decomposition block (PFDB) and the bidirectional
communication block (BFCB).

Each block has an ``init_*`` function that registers its parameters under a
prefix and a forward function that reads them back through a scope.
"""

from dataclasses import dataclass
from typing import Iterator

from src.core.errors import ShapeError
from src.core.nn import (
    ConvSpec,
    concat_channels,
    conv2d,
    global_avg_pool,
    l2_normalize,
    layernorm_channels,
    resize_bilinear,
)
from src.core.tensor import (
    Tensor,
    matmul,
    narrow,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    transpose,
)
from src.model.config import ModelConfig
from src.model.params import Initializer, ParameterScope

# Guards the token-axis L2 normalisation of queries and keys.
NORMALIZE_EPS = 1e-6


@dataclass(frozen=True)
class BranchPair:
    """Degradation-branch and clear-branch features threaded through the cascade."""

    f_d: Tensor
    f_c: Tensor

    def __post_init__(self):
        if self.f_d.shape != self.f_c.shape:
            raise ShapeError(f"branch shapes differ: {self.f_d.shape} vs {self.f_c.shape}")

    def __iter__(self) -> Iterator[Tensor]:
        return iter((self.f_d, self.f_c))


def conv_layer(x: Tensor, params: ParameterScope, name: str, groups: int = 1) -> Tensor:
    """Apply the stride-1, extent-preserving convolution stored under ``name``."""
    weight = params[f"{name}.weight"]
    bias = params.get(f"{name}.bias")
    spec = ConvSpec.same(x.shape[1], weight.shape[0], weight.shape[-1], groups=groups, has_bias=bias is not None)
    return conv2d(x, spec, weight, bias)


# --- channel attention with depthwise separable convolution -----------------

def init_channel_attention(init: Initializer, prefix: str, in_channels: int, config: ModelConfig) -> None:
    channels = config.width
    init.conv(f"{prefix}.dw", ConvSpec.same(in_channels, in_channels, 3, groups=in_channels))
    init.conv(f"{prefix}.pw", ConvSpec.same(in_channels, channels, 1))
    init.conv(f"{prefix}.squeeze", ConvSpec.same(channels, config.squeeze_width, 1))
    init.conv(f"{prefix}.excite", ConvSpec.same(config.squeeze_width, channels, 1))


def channel_attention_dsc(f: Tensor, params: ParameterScope) -> Tensor:
    """
    DSC projection to C channels followed by squeeze-excite gating.

    Accepts C_in != C so a 2C concatenation is projected back to C.
    """
    features = conv_layer(f, params, "dw", groups=f.shape[1])
    features = conv_layer(features, params, "pw")
    gate = relu(conv_layer(global_avg_pool(features), params, "squeeze"))
    gate = sigmoid(conv_layer(gate, params, "excite"))
    return features * gate


# --- adaptive sparse attention ----------------------------------------------

def sparse_attention(scores: Tensor, eps: float) -> Tensor:
    """ReLU scores normalised by their row sum; rows of negatives become zero."""
    positive = relu(scores)
    return positive / (reduce_sum(positive, axis=-1, keep=True) + eps)


def fuse_attention(scores: Tensor, w_dense: Tensor, w_sparse: Tensor, eps: float) -> Tensor:
    """α = w_dense·softmax(A) + w_sparse·ReLU(A)/(ΣReLU(A) + ε), row-wise."""
    return softmax(scores, axis=-1) * w_dense + sparse_attention(scores, eps) * w_sparse


def attention_weights(scores: Tensor, params: ParameterScope, config: ModelConfig) -> Tensor:
    if config.attention_mode == "dense":
        return softmax(scores, axis=-1)
    if config.attention_mode == "sparse":
        return sparse_attention(scores, config.attn_eps)
    return fuse_attention(scores, params["w_dense"], params["w_sparse"], config.attn_eps)


def init_attention(init: Initializer, prefix: str, config: ModelConfig) -> None:
    c = config.width
    init.conv(f"{prefix}.qkv.pw", ConvSpec.same(c, 3 * c, 1))
    init.conv(f"{prefix}.qkv.dw", ConvSpec.same(3 * c, 3 * c, 3, groups=3 * c))
    init.constant(f"{prefix}.temperature", (config.heads,), config.temperature_init)
    if config.attention_mode == "adaptive":
        init.constant(f"{prefix}.w_dense", (1,), config.fuse_weight_init)
        init.constant(f"{prefix}.w_sparse", (1,), config.fuse_weight_init)
    init.conv(f"{prefix}.proj", ConvSpec.same(c, c, 1))


def adaptive_sparse_attention(
    f: Tensor, params: ParameterScope, config: ModelConfig, residual: bool = True
) -> Tensor:
    """
    Channel-wise (transposed) attention with dense/sparse score fusion.

    Q, K, V come from a 1×1 expansion to 3C, a 3×3 depthwise convolution and
    a channel split. Per head, the (C/heads)×(C/heads) similarity of the
    L2-normalised token rows is scaled by a learnable temperature, turned
    into attention weights and applied to V.

    Args:
        f: Features N×C×h×w
        params: Scope holding qkv, temperature, fusion weights and proj
        config: Model configuration (heads, mode, ε)
        residual: Add f to the projected output

    Returns:
        N×C×h×w
    """
    n, c, h, w = f.shape
    heads = config.heads
    if c % heads:
        raise ShapeError(f"{c} channels not divisible by {heads} heads")
    per_head = c // heads

    qkv = conv_layer(f, params, "qkv.pw")
    qkv = conv_layer(qkv, params, "qkv.dw", groups=3 * c)

    def tokens(part: int) -> Tensor:
        return reshape(narrow(qkv, 1, part * c, c), (n * heads, per_head, h * w))

    q = l2_normalize(tokens(0), axis=-1, eps=NORMALIZE_EPS)
    k = l2_normalize(tokens(1), axis=-1, eps=NORMALIZE_EPS)
    v = tokens(2)

    scores = reshape(matmul(q, transpose(k, (0, 2, 1))), (n, heads, per_head, per_head))
    scores = scores * reshape(params["temperature"], (1, heads, 1, 1))
    alpha = reshape(attention_weights(scores, params, config), (n * heads, per_head, per_head))

    out = reshape(matmul(alpha, v), (n, c, h, w))
    out = conv_layer(out, params, "proj")
    return f + out if residual else out


# --- transformer block ------------------------------------------------------

def init_ast_block(init: Initializer, prefix: str, config: ModelConfig) -> None:
    c = config.width
    hidden = config.ffn_expansion * c
    init.constant(f"{prefix}.norm1.gain", (c,), 1.0)
    init.constant(f"{prefix}.norm1.offset", (c,), 0.0)
    init_attention(init, prefix, config)
    init.constant(f"{prefix}.norm2.gain", (c,), 1.0)
    init.constant(f"{prefix}.norm2.offset", (c,), 0.0)
    init.conv(f"{prefix}.ffn.expand", ConvSpec.same(c, hidden, 1))
    init.conv(f"{prefix}.ffn.dw", ConvSpec.same(hidden, hidden, 3, groups=hidden))
    init.conv(f"{prefix}.ffn.reduce", ConvSpec.same(hidden, c, 1))


def ast_block(f: Tensor, params: ParameterScope, config: ModelConfig) -> Tensor:
    """Pre-norm attention then pre-norm depthwise feed-forward, both residual."""
    normed = layernorm_channels(f, params["norm1.gain"], params["norm1.offset"], config.norm_eps)
    f = f + adaptive_sparse_attention(normed, params, config, residual=False)
    normed = layernorm_channels(f, params["norm2.gain"], params["norm2.offset"], config.norm_eps)
    hidden = conv_layer(normed, params, "ffn.expand")
    hidden = relu(conv_layer(hidden, params, "ffn.dw", groups=hidden.shape[1]))
    return f + conv_layer(hidden, params, "ffn.reduce")


# --- PFDB -------------------------------------------------------------------

def init_pfdb(init: Initializer, prefix: str, config: ModelConfig) -> None:
    c = config.width
    init_channel_attention(init, f"{prefix}.ca_d.inner", c, config)
    init_channel_attention(init, f"{prefix}.ca_d.outer", 2 * c, config)
    for m in range(config.ast_depth):
        init_ast_block(init, f"{prefix}.ast.{m}", config)
    init.conv(f"{prefix}.proj", ConvSpec.same(2 * c, c, 1))
    init_channel_attention(init, f"{prefix}.ca_c.inner", c, config)
    init_channel_attention(init, f"{prefix}.ca_c.outer", 2 * c, config)


def dual_channel_attention(f: Tensor, params: ParameterScope) -> Tensor:
    """CA([F, CA(F)]): inner CA maps C->C, outer CA maps 2C->C."""
    inner = channel_attention_dsc(f, params.scope("inner"))
    return channel_attention_dsc(concat_channels(f, inner), params.scope("outer"))


def pfdb_forward(pair: BranchPair, params: ParameterScope, config: ModelConfig) -> BranchPair:
    """
    Parallel feature decomposition.

    The degradation branch adds a half-resolution transformer path,
    concatenated with its own downsampled input, projected to C and
    upsampled. The clear branch is convolutional only.
    """
    f_d, f_c = pair
    h, w = f_d.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(f"PFDB needs even spatial extents, got {h}×{w}")

    low = resize_bilinear(f_d, 0.5)
    attended = low
    for m in range(config.ast_depth):
        attended = ast_block(attended, params.scope(f"ast.{m}"), config)
    global_path = conv_layer(concat_channels(attended, low), params, "proj")

    f_d_hat = dual_channel_attention(f_d, params.scope("ca_d")) + resize_bilinear(global_path, 2.0)
    f_c_hat = dual_channel_attention(f_c, params.scope("ca_c"))
    return BranchPair(f_d_hat, f_c_hat)


# --- BFCB -------------------------------------------------------------------

def init_bfcb(init: Initializer, prefix: str, config: ModelConfig) -> None:
    c = config.width
    for gate in ("gate_d", "gate_c"):
        init.conv(f"{prefix}.{gate}.conv1", ConvSpec.same(c, c, 1))
        init.conv(f"{prefix}.{gate}.conv2", ConvSpec.same(c, c, 1))
    init.constant(f"{prefix}.w_c2d", (1,), config.gate_scale_init)
    init.constant(f"{prefix}.w_d2c", (1,), config.gate_scale_init)


def _gate(f: Tensor, params: ParameterScope) -> Tensor:
    return sigmoid(conv_layer(relu(conv_layer(f, params, "conv1")), params, "conv2"))


def bfcb_forward(pair: BranchPair, params: ParameterScope) -> BranchPair:
    """
    Bidirectional feature communication.

    Each branch gates the other's contribution; the residual a branch gives
    away is exactly what the other receives, so F_d' + F_c' == F̂_d + F̂_c.
    """
    f_d, f_c = pair
    gate_c2d = _gate(f_d, params.scope("gate_d"))
    gate_d2c = _gate(f_c, params.scope("gate_c"))
    res_c2d = f_c * gate_c2d * params["w_c2d"]
    res_d2c = f_d * gate_d2c * params["w_d2c"]
    return BranchPair(f_d - res_d2c + res_c2d, f_c - res_c2d + res_d2c)

"""
SSD-Net - Single-scale dual-branch decomposition network.

embed -> N × (PFDB, BFCB) -> reconstruct. The clean image x_c and the
degradation residual x_d are added element-wise to recompose the input
x' = x_c + x_d.
"""

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from src.core.errors import InputError, ShapeError
from src.core.nn import ConvSpec
from src.core.tensor import DEFAULT_DTYPE, Tensor
from src.model.blocks import (
    BranchPair,
    bfcb_forward,
    conv_layer,
    init_bfcb,
    init_pfdb,
    pfdb_forward,
)
from src.model.config import ModelConfig
from src.model.params import Initializer, ParameterScope, ParameterStore, parameter_group

logger = logging.getLogger("ssdnet.model")

IMAGE_CHANNELS = 3
MIN_EXTENT = 8


class SSDOutput(NamedTuple):
    """Forward result: clean image, degradation residual, recomposed input."""

    clean: Tensor
    residual: Tensor
    recomposed: Tensor


def build_parameters(
    config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE, random: bool = True
) -> ParameterStore:
    """
    Create the full parameter store for a configuration.

    Args:
        config: Architecture
        seed: Initialization seed
        dtype: Element type
        random: False leaves weights at zero (shape-only builds)

    Returns:
        Store in deterministic creation order
    """
    store = ParameterStore()
    init = Initializer(store, seed=seed, dtype=dtype, random=random)
    c = config.width
    init.conv("embed.d", ConvSpec.same(IMAGE_CHANNELS, c, 3))
    init.conv("embed.c", ConvSpec.same(IMAGE_CHANNELS, c, 3))
    for n in range(config.cascade_depth):
        init_pfdb(init, f"pfdb.{n}", config)
        if config.use_bfcb:
            init_bfcb(init, f"bfcb.{n}", config)
    init.conv("recon.c", ConvSpec.same(c, IMAGE_CHANNELS, 3))
    init.conv("recon.d", ConvSpec.same(c, IMAGE_CHANNELS, 3))
    return store


def _check_image(x: Tensor, check_range: bool = True) -> None:
    if x.ndim != 4 or x.shape[1] != IMAGE_CHANNELS:
        raise ShapeError(f"expected an N×3×H×W image tensor, got {x.shape}")
    h, w = x.shape[2:]
    if h < MIN_EXTENT or w < MIN_EXTENT or h % 2 or w % 2:
        raise ShapeError(f"image extents must be even and >= {MIN_EXTENT}, got {h}×{w}")
    if check_range and (x.data.min() < 0 or x.data.max() > 1):
        raise InputError("image values must lie in [0, 1]")


def embed(x: Tensor, params: ParameterScope) -> BranchPair:
    """Two independent 3×3 convolutions 3->C giving F⁰_d and F⁰_c."""
    _check_image(x, check_range=False)
    return BranchPair(conv_layer(x, params, "d"), conv_layer(x, params, "c"))


def reconstruct(pair: BranchPair, params: ParameterScope) -> tuple[Tensor, Tensor]:
    """3×3 heads C->3 for the clean image and the degradation residual; no activation."""
    return conv_layer(pair.f_c, params, "c"), conv_layer(pair.f_d, params, "d")


def ssdnet_forward(x: Tensor, config: ModelConfig, params: ParameterStore) -> SSDOutput:
    """
    Full forward pass.

    Args:
        x: Degraded images N×3×H×W in [0, 1], H and W even
        config: Architecture
        params: Store built for config

    Returns:
        (x_c, x_d, x') with x' = x_c + x_d
    """
    _check_image(x)
    pair = embed(x, params.scope("embed"))
    for n in range(config.cascade_depth):
        pair = pfdb_forward(pair, params.scope(f"pfdb.{n}"), config)
        if config.use_bfcb:
            pair = bfcb_forward(pair, params.scope(f"bfcb.{n}"))
    clean, residual = reconstruct(pair, params.scope("recon"))
    return SSDOutput(clean, residual, clean + residual)


class SSDNet:
    """
    A configuration bound to its parameters.

    Convenience wrapper used by the trainer and the commands; all the work
    happens in ssdnet_forward.
    """

    def __init__(self, config: ModelConfig, params: Optional[ParameterStore] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else build_parameters(config, seed=seed)
        expected = build_parameters(config, random=False)
        for name in expected:
            if name not in self.params or self.params[name].shape != expected[name].shape:
                raise ShapeError(f"parameter {name} missing or mis-shaped for this config")
        if len(self.params) != len(expected):
            raise ShapeError("parameter store has names this config does not define")

    def __call__(self, x: Tensor) -> SSDOutput:
        return ssdnet_forward(x, self.config, self.params)

    def enhance(self, image: np.ndarray) -> SSDOutput:
        """Run one H×W×3 array in [0, 1] through the network (no tape)."""
        x = Tensor(np.transpose(image, (2, 0, 1))[None], dtype=self.params.dtype)
        return self(x)

    @property
    def param_count(self) -> int:
        return self.params.count()


def param_count(config: ModelConfig) -> int:
    """Exact number of trainable scalars for a configuration."""
    return build_parameters(config, random=False).count()


def param_breakdown(config: ModelConfig) -> dict[str, int]:
    """Trainable scalars per group (embed, pfdb.n, bfcb.n, recon), in model order."""
    counts: dict[str, int] = {}
    for name, tensor in build_parameters(config, random=False).items():
        group = parameter_group(name)
        counts[group] = counts.get(group, 0) + tensor.size
    return counts


@dataclass(frozen=True)
class ParamGrid:
    """Parameter counts over cascade depths N (columns) and AST depths M (rows)."""

    n_values: tuple[int, ...]
    m_values: tuple[int, ...]
    counts: tuple[tuple[int, ...], ...]

    def count(self, n: int, m: int) -> int:
        return self.counts[self.m_values.index(m)][self.n_values.index(n)]

    def n_deltas(self, m: int) -> list[int]:
        row = self.counts[self.m_values.index(m)]
        return [b - a for a, b in zip(row, row[1:])]

    def m_deltas(self, n: int) -> list[int]:
        column = [row[self.n_values.index(n)] for row in self.counts]
        return [b - a for a, b in zip(column, column[1:])]


def param_grid(n_values: Sequence[int], m_values: Sequence[int], base: ModelConfig) -> ParamGrid:
    counts = tuple(
        tuple(param_count(replace(base, cascade_depth=n, ast_depth=m)) for n in n_values)
        for m in m_values
    )
    return ParamGrid(tuple(n_values), tuple(m_values), counts)

"""
Parameter Store - Ordered, hierarchically named trainable tensors.

The store is both the model state and the checkpoint unit. Names look like
``pfdb.0.ast.1.qkv.pw.weight``; scopes hand a block only its own subtree.
"""

import logging
from typing import Iterator, Optional

import numpy as np

from src.core.errors import InputError
from src.core.nn import ConvSpec
from src.core.tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger("ssdnet.params")


class ParameterStore:
    """Ordered map from hierarchical names to trainable tensors."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise InputError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise InputError(f"unknown parameter: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def get(self, name: str) -> Optional[Tensor]:
        return self._tensors.get(name)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def scope(self, prefix: str) -> "ParameterScope":
        return ParameterScope(self, prefix)

    def count(self) -> int:
        """Total number of trainable scalars."""
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def astype(self, dtype) -> "ParameterStore":
        """Copy of the store with every tensor converted to ``dtype``."""
        converted = ParameterStore()
        for name, tensor in self._tensors.items():
            converted.add(name, Tensor(tensor.data.astype(dtype), dtype=dtype))
        return converted

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        first = next(iter(self._tensors.values()), None)
        return first.dtype if first is not None else np.dtype(DEFAULT_DTYPE)


class ParameterScope:
    """Read view of a store restricted to names under a prefix."""

    def __init__(self, store: ParameterStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._full(name)]

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self.store

    def get(self, name: str) -> Optional[Tensor]:
        return self.store.get(self._full(name))

    def scope(self, name: str) -> "ParameterScope":
        return ParameterScope(self.store, self._full(name))


class Initializer:
    """
    Deterministic parameter factory.

    Convolution weights are drawn uniformly in ±1/sqrt(fan_in), biases start
    at zero. Draws happen in creation order from one seeded generator, so a
    (config, seed) pair always yields the same store.
    """

    def __init__(self, store: ParameterStore, seed: int = 0, dtype=DEFAULT_DTYPE, random: bool = True):
        self.store = store
        self.dtype = dtype
        self.random = random
        self._rng = np.random.default_rng(seed)

    def conv(self, name: str, spec: ConvSpec) -> None:
        shape = spec.weight_shape
        if self.random:
            _, per_group, k, _ = shape
            bound = 1.0 / np.sqrt(per_group * k * k)
            weight = self._rng.uniform(-bound, bound, size=shape)
        else:
            weight = np.zeros(shape)
        self.store.add(f"{name}.weight", Tensor(weight.astype(self.dtype)))
        if spec.has_bias:
            self.store.add(f"{name}.bias", Tensor(np.zeros(spec.out_channels, dtype=self.dtype)))

    def constant(self, name: str, shape: tuple[int, ...], value: float) -> None:
        self.store.add(name, Tensor(np.full(shape, value, dtype=self.dtype)))


def parameter_group(name: str) -> str:
    """Report group of a parameter: ``pfdb.0.ast.1.qkv.pw.weight`` -> ``pfdb.0``."""
    parts = name.split(".")
    if len(parts) > 1 and parts[1].isdigit():
        return f"{parts[0]}.{parts[1]}"
    return parts[0]

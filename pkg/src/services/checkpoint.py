"""
Checkpoint Service - Binary persistence of model parameters and optimizer state.

Layout (little-endian):
    magic "SSDN" | version u32 | config length u32 | config JSON
    | step u64 | tensor count u32
    | per tensor: name length u16, name UTF-8, rank u8, extents u32×rank, float32 payload
    | optimizer flag u8 [| optimizer step u64 | per tensor: first, second moment payloads]
    | CRC32 u32 of everything before it
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.core.errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointMismatchError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from src.core.tensor import Tensor
from src.model.config import ModelConfig
from src.model.network import SSDNet, build_parameters
from src.model.params import ParameterStore
from src.services.optim import OptimState
from src.utils.files import atomic_write_bytes

logger = logging.getLogger("ssdnet.checkpoint")

MAGIC = b"SSDN"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Model configuration, named float32 tensors in store order, optional optimizer state."""

    config: ModelConfig
    step: int
    tensors: dict[str, np.ndarray]
    optim: Optional[OptimState] = None

    @classmethod
    def from_model(cls, model: SSDNet, step: int = 0, optim: Optional[OptimState] = None) -> "Checkpoint":
        tensors = {name: t.data.astype(PAYLOAD_DTYPE) for name, t in model.params.items()}
        return cls(model.config, step, tensors, optim)

    def match_model(self, config: ModelConfig) -> None:
        """
        Raise CheckpointMismatchError unless the stored names and shapes are
        exactly those a model with ``config`` defines.
        """
        expected = build_parameters(config, random=False)
        if list(self.tensors) != expected.names():
            missing = sorted(set(expected.names()) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected.names()))
            raise CheckpointMismatchError(
                f"parameter names differ from the model (missing {missing[:3]}, unexpected {extra[:3]})"
            )
        for name, array in self.tensors.items():
            if array.shape != expected[name].shape:
                raise CheckpointMismatchError(
                    f"{name}: stored shape {array.shape} vs model shape {expected[name].shape}"
                )

    def to_params(self) -> ParameterStore:
        store = ParameterStore()
        for name, array in self.tensors.items():
            store.add(name, Tensor(array.astype(np.float32)))
        return store

    def to_model(self, config: Optional[ModelConfig] = None) -> SSDNet:
        """Model built from the stored tensors, checked against ``config`` (default: the stored one)."""
        self.match_model(config or self.config)
        return SSDNet(config or self.config, self.to_params())


# --- encoding ---------------------------------------------------------------

def _payload(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    config = json.dumps(ckpt.config.to_dict(), sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(config)), config]
    parts += [struct.pack("<Q", ckpt.step), struct.pack("<I", len(ckpt.tensors))]
    for name, array in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        parts += [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", array.ndim)]
        parts += [struct.pack(f"<{array.ndim}I", *array.shape), _payload(array)]

    if ckpt.optim is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts += [struct.pack("<B", 1), struct.pack("<Q", ckpt.optim.step)]
        for name in ckpt.tensors:
            parts += [_payload(ckpt.optim.first[name]), _payload(ckpt.optim.second[name])]

    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.pos + count
        if end > len(self.raw):
            raise CheckpointTruncatedError(
                f"file ends while reading {what}: need {count} bytes at offset {self.pos}, have {len(self.raw) - self.pos}"
            )
        chunk = self.raw[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return values if len(values) > 1 else values[0]

    def array(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        chunk = self.take(count * PAYLOAD_DTYPE.itemsize, what)
        return np.frombuffer(chunk, dtype=PAYLOAD_DTYPE).reshape(shape).copy()


def decode_checkpoint(raw: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        CheckpointMagicError, CheckpointVersionError, CheckpointTruncatedError,
        CheckpointChecksumError, or CheckpointError for other malformed content
    """
    if raw[:4] != MAGIC:
        raise CheckpointMagicError(f"expected magic {MAGIC!r}, got {raw[:4]!r}")
    reader = _Reader(raw)
    reader.take(4, "magic")
    version = reader.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")

    config_bytes = reader.take(reader.unpack("<I", "config length"), "config")
    step = reader.unpack("<Q", "step")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.unpack("<I", "tensor count")):
        name = reader.take(reader.unpack("<H", "name length"), "tensor name").decode("utf-8", errors="replace")
        rank = reader.unpack("<B", f"rank of {name}")
        shape = tuple(struct.unpack(f"<{rank}I", reader.take(4 * rank, f"extents of {name}")))
        tensors[name] = reader.array(shape, f"payload of {name}")

    optim = None
    flag = reader.unpack("<B", "optimizer flag")
    if flag == 1:
        optim = OptimState(step=reader.unpack("<Q", "optimizer step"))
        for name, array in tensors.items():
            optim.first[name] = reader.array(array.shape, f"first moment of {name}")
            optim.second[name] = reader.array(array.shape, f"second moment of {name}")
    elif flag != 0:
        raise CheckpointError(f"invalid optimizer flag {flag} at offset {reader.pos - 1}")

    body_end = reader.pos
    stored = reader.unpack("<I", "checksum")
    if reader.pos != len(raw):
        raise CheckpointError(f"{len(raw) - reader.pos} unexpected trailing bytes")
    if zlib.crc32(raw[:body_end]) != stored:
        raise CheckpointChecksumError("checkpoint checksum mismatch")

    try:
        config = ModelConfig.from_dict(json.loads(config_bytes.decode("utf-8")))
    except (ValueError, TypeError, ConfigError) as e:
        raise CheckpointError(f"invalid stored model config: {e}") from None
    return Checkpoint(config, step, tensors, optim)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info(f"Saved checkpoint {path} (step {ckpt.step}, {len(ckpt.tensors)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    ckpt = decode_checkpoint(Path(path).read_bytes())
    logger.debug(f"Loaded checkpoint {path} (step {ckpt.step})")
    return ckpt

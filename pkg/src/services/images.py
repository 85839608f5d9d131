"""
Image Service - RGB image buffers and the binary PPM (P6) codec.

Samples map linearly between 0..255 on disk and [0, 1] in memory.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.core.errors import InputError, PPMError, ShapeError
from src.core.tensor import DEFAULT_DTYPE, Tensor
from src.utils.files import atomic_write_bytes

logger = logging.getLogger("ssdnet.images")

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255
WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass
class ImageBuffer:
    """H×W×3 row-major pixels in [0, 1]."""

    pixels: np.ndarray
    source: Optional[str] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=DEFAULT_DTYPE)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"expected H×W×3 pixels, got {self.pixels.shape}")
        if self.pixels.size and (not np.all(np.isfinite(self.pixels))
                                 or self.pixels.min() < 0 or self.pixels.max() > 1):
            raise InputError("pixel values must be finite and lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_tensor(self, dtype=DEFAULT_DTYPE) -> Tensor:
        """1×3×H×W tensor for the network."""
        return Tensor(np.transpose(self.pixels, (2, 0, 1))[None], dtype=dtype)

    def quantized(self) -> "ImageBuffer":
        """The buffer as it reads back after a PPM round trip."""
        samples = np.round(self.pixels * PPM_MAXVAL).astype(np.uint8)
        return ImageBuffer(samples.astype(DEFAULT_DTYPE) / PPM_MAXVAL, source=self.source)

    @classmethod
    def from_array(cls, array: np.ndarray, clamp: bool = True, source: Optional[str] = None) -> "ImageBuffer":
        """From an H×W×3 or 3×H×W array; clamp maps out-of-range values to [0, 1]."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 3 and array.shape[0] == 3 and array.shape[2] != 3:
            array = np.transpose(array, (1, 2, 0))
        if clamp:
            array = np.clip(array, 0.0, 1.0)
        return cls(array, source=source)


def _skip_separators(raw: bytes, pos: int) -> int:
    while pos < len(raw):
        if raw[pos] in WHITESPACE:
            pos += 1
        elif raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        else:
            break
    return pos


def decode_ppm(raw: bytes, path: Optional[str] = None) -> ImageBuffer:
    """
    Parse P6 bytes.

    Raises:
        PPMError: bad magic, malformed header, maxval other than 255 or a
            truncated payload; the error names the offending byte offset
    """
    if raw[:2] != PPM_MAGIC:
        raise PPMError(f"expected magic {PPM_MAGIC!r}, got {raw[:2]!r}", 0, path)
    if len(raw) < 3 or raw[2] not in WHITESPACE:
        raise PPMError("magic must be followed by whitespace", 2, path)

    pos = 2
    header: list[tuple[int, int]] = []
    while len(header) < 3:
        pos = _skip_separators(raw, pos)
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PPMError("expected a decimal header field", start, path)
        header.append((int(raw[start:pos]), start))

    (width, _), (height, height_at), (maxval, maxval_at) = header
    if width < 1 or height < 1:
        raise PPMError(f"image extents must be positive, got {width}×{height}", height_at, path)
    if maxval != PPM_MAXVAL:
        raise PPMError(f"maxval must be {PPM_MAXVAL}, got {maxval}", maxval_at, path)
    if pos >= len(raw) or raw[pos] not in WHITESPACE:
        raise PPMError("header must end with a single whitespace byte", pos, path)
    pos += 1

    expected = width * height * 3
    payload = raw[pos:pos + expected]
    if len(payload) < expected:
        raise PPMError(f"truncated payload: {len(payload)} of {expected} bytes", pos + len(payload), path)

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageBuffer(pixels.astype(DEFAULT_DTYPE) / PPM_MAXVAL, source=path)


def encode_ppm(buffer: ImageBuffer) -> bytes:
    samples = np.round(np.clip(buffer.pixels, 0.0, 1.0) * PPM_MAXVAL).astype(np.uint8)
    header = f"P6\n{buffer.width} {buffer.height}\n{PPM_MAXVAL}\n".encode("ascii")
    return header + samples.tobytes()


def read_ppm(path: Union[str, Path]) -> ImageBuffer:
    """Read a binary PPM file; OSError propagates with the path."""
    raw = Path(path).read_bytes()
    return decode_ppm(raw, str(path))


def write_ppm(path: Union[str, Path], buffer: ImageBuffer) -> Path:
    """Write a binary PPM file atomically."""
    return atomic_write_bytes(path, encode_ppm(buffer))


@dataclass(frozen=True)
class AffineMap:
    """value = offset + scale·pixel; maps a signed array onto [0, 1] for display."""

    offset: float
    scale: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "AffineMap":
        lo, hi = float(np.min(values)), float(np.max(values))
        return cls(lo, hi - lo if hi > lo else 1.0)

    def to_unit(self, values: np.ndarray) -> np.ndarray:
        return np.clip((np.asarray(values, dtype=np.float64) - self.offset) / self.scale, 0.0, 1.0)

    def from_unit(self, pixels: np.ndarray) -> np.ndarray:
        return self.offset + self.scale * np.asarray(pixels, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"offset": self.offset, "scale": self.scale}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineMap":
        return cls(float(data["offset"]), float(data["scale"]))


def encode_signed(values: np.ndarray) -> tuple[ImageBuffer, AffineMap]:
    """Min-max map an H×W×3 signed array to a displayable buffer plus its inverse map."""
    mapping = AffineMap.fit(values)
    return ImageBuffer(mapping.to_unit(values)), mapping

"""
Metrics Service - Full-reference and no-reference image quality scores.

SSIM, PSNR and MSE×10³ compare an enhanced image with its reference; UIQM
and UCIQE score an underwater image on its own. Every function takes H×W×3
arrays in [0, 1] and computes in float64.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from statistics import fmean
from typing import Optional, Union

import numpy as np
from skimage import color, filters

from src.core.errors import InputError, ShapeError
from src.core.tensor import Tensor
from src.services.images import ImageBuffer
from src.services.losses import SsimConfig, ssim
from src.utils.files import atomic_write_text
from src.utils.reports import format_value, render_metrics_table

logger = logging.getLogger("ssdnet.metrics")

# UIQM = c1·UICM + c2·UISM + c3·UIConM
UIQM_WEIGHTS = (0.0282, 0.2953, 3.5753)
# UCIQE = c1·σ_chroma + c2·con_l + c3·σ_saturation
UCIQE_WEIGHTS = (0.4680, 0.2745, 0.2576)
# Neutral sRGB pixels come out of rgb2lab with chroma up to about 5e-3.
CHROMA_TOLERANCE = 0.05

TRIM_FRACTION = 0.1
EME_BLOCK = 8
AMEE_BLOCK = 16
PLIP_GAMMA = 1026.0
SOBEL_CHANNEL_WEIGHTS = (0.299, 0.587, 0.114)

ImageLike = Union[np.ndarray, ImageBuffer]


def as_rgb(image) -> np.ndarray:
    """H×W×3 float64 view of an array or ImageBuffer."""
    pixels = getattr(image, "pixels", image)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected an H×W×3 image, got {pixels.shape}")
    return pixels


def _pair(e, r) -> tuple[np.ndarray, np.ndarray]:
    e, r = as_rgb(e), as_rgb(r)
    if e.shape != r.shape:
        raise ShapeError(f"image shapes differ: {e.shape} vs {r.shape}")
    return e, r


# --- full reference ---------------------------------------------------------

def mse(e: ImageLike, r: ImageLike) -> float:
    e, r = _pair(e, r)
    return float(np.mean((e - r) ** 2))


def mse_scaled(e: ImageLike, r: ImageLike) -> float:
    """Mean squared error × 10³, the unit reported in result tables."""
    return mse(e, r) * 1e3


def psnr(e: ImageLike, r: ImageLike) -> float:
    """Peak signal-to-noise ratio in dB for peak 1; identical images give +inf."""
    error = mse(e, r)
    if error == 0.0:
        return math.inf
    return -10.0 * math.log10(error)


def ssim_index(e: ImageLike, r: ImageLike, cfg: SsimConfig = SsimConfig()) -> float:
    """SSIM of two H×W×3 images, evaluated in float64."""
    e, r = _pair(e, r)
    to_tensor = lambda a: Tensor(np.transpose(a, (2, 0, 1))[None], dtype=np.float64)
    return ssim(to_tensor(e), to_tensor(r), cfg).item()


# --- UIQM -------------------------------------------------------------------

def _trimmed_moments(values: np.ndarray) -> tuple[float, float]:
    ordered = np.sort(values, axis=None)
    cut = int(TRIM_FRACTION * ordered.size)
    kept = ordered[cut: ordered.size - cut]
    mean = float(np.mean(kept))
    return mean, float(np.mean((kept - mean) ** 2))


def uicm(rgb: np.ndarray) -> float:
    """Colorfulness from α-trimmed statistics of the RG and YB opponent planes."""
    rgb = as_rgb(rgb) * 255.0
    rg = rgb[..., 0] - rgb[..., 1]
    yb = (rgb[..., 0] + rgb[..., 1]) / 2 - rgb[..., 2]
    mean_rg, var_rg = _trimmed_moments(rg)
    mean_yb, var_yb = _trimmed_moments(yb)
    return -0.0268 * math.sqrt(mean_rg ** 2 + mean_yb ** 2) + 0.1586 * math.sqrt(var_rg + var_yb)


def _blocks(plane: np.ndarray, size: int):
    """Tile a plane into size×size blocks; the last row/column absorbs the remainder."""
    rows = math.ceil(plane.shape[0] / size)
    cols = math.ceil(plane.shape[1] / size)
    for i in range(rows):
        bottom = (i + 1) * size if i < rows - 1 else plane.shape[0]
        for j in range(cols):
            right = (j + 1) * size if j < cols - 1 else plane.shape[1]
            yield plane[i * size: bottom, j * size: right]


def _block_count(plane: np.ndarray, size: int) -> int:
    return math.ceil(plane.shape[0] / size) * math.ceil(plane.shape[1] / size)


def eme(plane: np.ndarray, size: int = EME_BLOCK) -> float:
    """Block measure of enhancement: 2/(k1·k2) Σ log(max/min), zero extremes read as 1."""
    weight = 2.0 / _block_count(plane, size)
    total = 0.0
    for block in _blocks(plane, size):
        low = float(block.min()) or 1.0
        high = float(block.max()) or 1.0
        total += weight * math.log(high / low)
    return total


def uism(rgb: np.ndarray) -> float:
    """Sharpness: EME of each Sobel-weighted channel, luminance-weighted."""
    rgb = as_rgb(rgb)
    score = 0.0
    for channel, weight in enumerate(SOBEL_CHANNEL_WEIGHTS):
        plane = rgb[..., channel]
        edges = np.clip(np.round(255.0 * plane * filters.sobel(plane)), 0, 255)
        score += weight * eme(edges)
    return score


def _plip_sub(a: float, b: float) -> float:
    return PLIP_GAMMA * (a - b) / (PLIP_GAMMA - b)


def _plip_add(a: float, b: float) -> float:
    return a + b - a * b / PLIP_GAMMA


def _plip_scale(c: float, a: float) -> float:
    return PLIP_GAMMA - PLIP_GAMMA * (1 - a / PLIP_GAMMA) ** c


def log_amee(plane: np.ndarray, size: int = AMEE_BLOCK) -> float:
    """PLIP logarithmic AMEE contrast measure over size×size blocks."""
    weight = 1.0 / _block_count(plane, size)
    total = 0.0
    for block in _blocks(plane, size):
        low, high = float(block.min()), float(block.max())
        bottom = _plip_add(high, low)
        ratio = _plip_sub(high, low) / bottom if bottom else 0.0
        if ratio:
            total += ratio * math.log(ratio)
    return _plip_scale(weight, total)


def uiconm(rgb: np.ndarray) -> float:
    """Contrast: log-AMEE of the 0..255 gray image."""
    return log_amee(color.rgb2gray(as_rgb(rgb)) * 255.0)


def uiqm(image: ImageLike) -> float:
    """
    Underwater image quality measure.

    Raises:
        InputError: an extent is smaller than the contrast block size
    """
    rgb = as_rgb(image)
    if min(rgb.shape[:2]) < AMEE_BLOCK:
        raise InputError(f"UIQM needs extents >= {AMEE_BLOCK}, got {rgb.shape[:2]}")
    c1, c2, c3 = UIQM_WEIGHTS
    return c1 * uicm(rgb) + c2 * uism(rgb) + c3 * uiconm(rgb)


# --- UCIQE ------------------------------------------------------------------

def uciqe(image: ImageLike) -> float:
    """
    Underwater color image quality evaluation in CIELab.

    Chroma standard deviation, the spread between the top and bottom 1% of
    lightness, and the standard deviation of saturation chroma/L (zero where
    chroma or L is zero). Any constant image scores 0.
    """
    lab = color.rgb2lab(as_rgb(image))
    lightness = lab[..., 0]
    chroma = np.hypot(lab[..., 1], lab[..., 2])
    chroma[chroma < CHROMA_TOLERANCE] = 0.0
    sigma_chroma = float(np.std(chroma))

    top = max(1, int(round(0.01 * lightness.size)))
    ordered = np.sort(lightness, axis=None)
    contrast = float(ordered[-top:].mean() - ordered[:top].mean())

    valid = (chroma != 0) & (lightness != 0)
    saturation = np.divide(chroma, lightness, out=np.zeros_like(chroma), where=valid)
    c1, c2, c3 = UCIQE_WEIGHTS
    return c1 * sigma_chroma + c2 * contrast + c3 * float(np.std(saturation))


# --- reports ----------------------------------------------------------------

@dataclass
class ImageScores:
    """All metrics for one image. Full-reference fields are None for unpaired images."""

    path: str
    ssim: Optional[float]
    psnr: Optional[float]
    mse_x1000: Optional[float]
    uiqm: float
    uciqe: float


METRIC_FIELDS = ("ssim", "psnr", "mse_x1000", "uiqm", "uciqe")


def score_pair(prediction: ImageLike, reference: ImageLike, path: str = "",
               cfg: SsimConfig = SsimConfig()) -> ImageScores:
    """Score a [0,1] prediction against its reference (no-reference terms on the prediction)."""
    prediction, reference = _pair(prediction, reference)
    return ImageScores(
        path=path,
        ssim=ssim_index(prediction, reference, cfg),
        psnr=psnr(prediction, reference),
        mse_x1000=mse_scaled(prediction, reference),
        uiqm=uiqm(prediction),
        uciqe=uciqe(prediction),
    )


def score_no_reference(image: ImageLike) -> tuple[float, float]:
    rgb = as_rgb(image)
    return uiqm(rgb), uciqe(rgb)


@dataclass
class MetricsReport:
    """Per-image scores and their arithmetic means."""

    title: str = "metrics"
    records: list[ImageScores] = field(default_factory=list)

    def add(self, scores: ImageScores) -> None:
        self.records.append(scores)

    def __len__(self) -> int:
        return len(self.records)

    def aggregate(self) -> dict[str, Optional[float]]:
        """Mean of every metric over records that carry it (None when none do)."""
        means: dict[str, Optional[float]] = {}
        for name in METRIC_FIELDS:
            values = [getattr(r, name) for r in self.records if getattr(r, name) is not None]
            means[name] = fmean(values) if values else None
        return means

    def to_table(self) -> str:
        return render_metrics_table(self)

    def write_tsv(self, path: Union[str, Path]) -> Path:
        """One tab-separated record per image, header first, then a mean row."""
        lines = ["\t".join(("path",) + METRIC_FIELDS)]
        for record in self.records:
            row = asdict(record)
            lines.append("\t".join([record.path] + [format_value(row[name]) for name in METRIC_FIELDS]))
        means = self.aggregate()
        lines.append("\t".join(["mean"] + [format_value(means[name]) for name in METRIC_FIELDS]))
        path = Path(path)
        atomic_write_text(path, "\n".join(lines) + "\n")
        logger.info(f"Wrote {len(self.records)} metric records to {path}")
        return path

    @classmethod
    def read_tsv(cls, path: Union[str, Path], title: str = "metrics") -> "MetricsReport":
        report = cls(title=title)
        with open(path, newline="") as handle:
            for row in csv.DictReader(handle, delimiter="\t"):
                if row["path"] == "mean":
                    continue
                values = {
                    f.name: (None if row[f.name] == "-" else float(row[f.name]))
                    for f in fields(ImageScores) if f.name != "path"
                }
                report.add(ImageScores(path=row["path"], **values))
        return report

"""
Synthesis Service - Procedural clean scenes, underwater degradation and
paired dataset assembly.

Degradation follows the single-scatter model
    I_c = J_c·t_c + B_c·(1 - t_c),   t_c = exp(-β_c·d)
with per-channel attenuation β, backscatter colour B and a depth field d,
plus optional Gaussian sensor noise, clamped to [0, 1].
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from src.core.errors import ConfigError, InputError
from src.services.images import ImageBuffer, write_ppm
from src.utils.files import atomic_write_text
from src.utils.runtime import worker_count

logger = logging.getLogger("ssdnet.synth")

MANIFEST_NAME = "manifest.tsv"
PARAMS_NAME = "manifest.params.json"
MANIFEST_HEADER = "# split\tdegraded\tclean"
SPLITS = ("train", "test")
MIN_EXTENT = 16

Range = tuple[float, float]
Triple = tuple[float, float, float]


@dataclass(frozen=True)
class DegradationParams:
    """Parameters of one degradation: β (1/m), backscatter B, depth d (m), noise σ."""

    beta: Triple
    backscatter: Triple
    depth: Union[float, np.ndarray]
    noise_std: float = 0.0

    def __post_init__(self):
        if len(self.beta) != 3 or len(self.backscatter) != 3:
            raise InputError("beta and backscatter need one value per channel")
        if min(self.beta) <= 0:
            raise InputError(f"attenuation coefficients must be > 0, got {self.beta}")
        if min(self.backscatter) < 0 or max(self.backscatter) > 1:
            raise InputError(f"backscatter must lie in [0, 1], got {self.backscatter}")
        if np.min(self.depth) < 0:
            raise InputError("depths must be >= 0")
        if self.noise_std < 0:
            raise InputError(f"noise_std must be >= 0, got {self.noise_std}")

    def to_record(self) -> dict:
        depth = np.asarray(self.depth, dtype=np.float64)
        return {
            "beta": list(self.beta),
            "backscatter": list(self.backscatter),
            "depth_min": float(depth.min()),
            "depth_max": float(depth.max()),
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class DegradationPolicy:
    """
    Sampling ranges for per-image degradation parameters.

    Red attenuation covers 0.6-0.8/m; green and blue ranges extrapolate from
    it. Backscatter is biased towards blue-green.
    """

    beta_red: Range = (0.6, 0.8)
    beta_green: Range = (0.2, 0.4)
    beta_blue: Range = (0.05, 0.15)
    backscatter_red: Range = (0.0, 0.15)
    backscatter_green: Range = (0.35, 0.6)
    backscatter_blue: Range = (0.45, 0.75)
    depth: Range = (0.5, 3.0)
    noise_std: Range = (0.0, 0.01)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ConfigError(f"policy range {f.name} is inverted: ({lo}, {hi})")
        if min(self.beta_red[0], self.beta_green[0], self.beta_blue[0]) <= 0:
            raise ConfigError("attenuation ranges must be > 0")
        for name in ("backscatter_red", "backscatter_green", "backscatter_blue"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise ConfigError(f"{name} must lie within [0, 1]")
        if self.depth[0] < 0 or self.noise_std[0] < 0:
            raise ConfigError("depth and noise ranges must be >= 0")

    def sample(self, rng: np.random.Generator, height: int, width: int) -> DegradationParams:
        draw = lambda bounds: float(rng.uniform(*bounds))
        beta = (draw(self.beta_red), draw(self.beta_green), draw(self.beta_blue))
        backscatter = (draw(self.backscatter_red), draw(self.backscatter_green), draw(self.backscatter_blue))
        depth = depth_field(rng, height, width, self.depth)
        return DegradationParams(beta, backscatter, depth, draw(self.noise_std))

    def to_dict(self) -> dict:
        return {name: list(value) for name, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationPolicy":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown degradation policy keys: {sorted(unknown)}")
        try:
            return cls(**{name: (float(value[0]), float(value[1])) for name, value in data.items()})
        except (TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"policy ranges must be pairs of numbers: {e}") from None


def _check_extents(width: int, height: int) -> None:
    if width < MIN_EXTENT or height < MIN_EXTENT or width % 2 or height % 2:
        raise InputError(f"image extents must be even and >= {MIN_EXTENT}, got {width}×{height}")


def _coordinates(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij")


def depth_field(rng: np.random.Generator, height: int, width: int, bounds: Range, waves: int = 4) -> np.ndarray:
    """Smooth random surface of low-frequency cosines rescaled to [lo, hi]."""
    yy, xx = _coordinates(height, width)
    surface = np.zeros((height, width))
    for _ in range(waves):
        angle = rng.uniform(0, 2 * np.pi)
        frequency = rng.uniform(0.3, 1.5)
        phase = rng.uniform(0, 2 * np.pi)
        surface += rng.uniform(0.5, 1.0) * np.cos(
            2 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)) + phase
        )
    span = surface.max() - surface.min()
    unit = (surface - surface.min()) / span if span > 0 else np.zeros_like(surface)
    lo, hi = bounds
    return lo + (hi - lo) * unit


def gen_clean(seed: int, width: int, height: int) -> ImageBuffer:
    """
    Deterministic synthetic scene.

    A two-colour linear gradient, a handful of soft-edged ellipses and
    rectangles, and band-limited sinusoidal texture per channel.

    Args:
        seed: Generator seed
        width: Even extent >= 16
        height: Even extent >= 16

    Returns:
        Buffer in [0, 1]
    """
    _check_extents(width, height)
    rng = np.random.default_rng(seed)
    yy, xx = _coordinates(height, width)

    start, end = rng.uniform(0.15, 0.95, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = xx * np.cos(angle) + yy * np.sin(angle)
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
    image = start * (1 - ramp[..., None]) + end * ramp[..., None]

    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        softness = rng.uniform(0.02, 0.1)
        if rng.random() < 0.5:
            distance = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        else:
            distance = np.maximum(np.abs(yy - cy) / ry, np.abs(xx - cx) / rx)
        mask = 1.0 / (1.0 + np.exp(np.clip((distance - 1.0) / softness, -60.0, 60.0)))
        shade = rng.uniform(0.0, 1.0, size=3)
        opacity = rng.uniform(0.5, 0.9)
        image = image * (1 - opacity * mask[..., None]) + shade * (opacity * mask[..., None])

    for _ in range(3):
        fy, fx = rng.uniform(2.0, 8.0, size=2)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        image += 0.05 * np.sin(2 * np.pi * (fy * yy + fx * xx)[..., None] + phases)

    return ImageBuffer(np.clip(image, 0.0, 1.0))


def degrade(clean: ImageBuffer, params: DegradationParams, seed: int = 0) -> ImageBuffer:
    """
    Apply attenuation, backscatter and noise to a clean buffer.

    Args:
        clean: Scene radiance J
        params: β, B, depth and noise
        seed: Noise seed (unused when noise_std is 0)

    Returns:
        Degraded buffer I in [0, 1]
    """
    depth = np.asarray(params.depth, dtype=np.float64)
    if depth.ndim == 2 and depth.shape != (clean.height, clean.width):
        raise InputError(f"depth field {depth.shape} does not match image {clean.height}×{clean.width}")
    if depth.ndim == 2:
        depth = depth[..., None]

    radiance = clean.pixels.astype(np.float64)
    transmission = np.exp(-np.asarray(params.beta) * depth)
    observed = radiance * transmission + np.asarray(params.backscatter) * (1.0 - transmission)
    if params.noise_std > 0:
        observed = observed + np.random.default_rng(seed).normal(0.0, params.noise_std, size=observed.shape)
    return ImageBuffer(np.clip(observed, 0.0, 1.0), source=clean.source)


# --- dataset ----------------------------------------------------------------

@dataclass(frozen=True)
class ImagePair:
    split: str
    degraded: Path
    clean: Path


@dataclass
class DatasetManifest:
    """Paired degraded/clean images under a root, with the record that reproduces them."""

    root: Path
    pairs: list[ImagePair]
    seed: int
    params: dict

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    def split(self, tag: str) -> list[ImagePair]:
        if tag not in SPLITS:
            raise InputError(f"unknown split {tag!r}, expected one of {SPLITS}")
        return [pair for pair in self.pairs if pair.split == tag]

    @property
    def train(self) -> list[ImagePair]:
        return self.split("train")

    @property
    def test(self) -> list[ImagePair]:
        return self.split("test")

    def write(self) -> Path:
        lines = [MANIFEST_HEADER]
        for pair in self.pairs:
            degraded = pair.degraded.relative_to(self.root).as_posix()
            clean = pair.clean.relative_to(self.root).as_posix()
            lines.append(f"{pair.split}\t{degraded}\t{clean}")
        atomic_write_text(self.path, "\n".join(lines) + "\n")
        atomic_write_text(self.root / PARAMS_NAME, json.dumps(self.params, indent=2, sort_keys=True) + "\n")
        return self.path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DatasetManifest":
        """
        Read a manifest file (or the directory holding one).

        Raises:
            FileNotFoundError: the manifest or a referenced image is missing
            InputError: a malformed manifest line
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        root = path.parent
        pairs = []
        for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in SPLITS:
                raise InputError(f"{path}:{number}: expected 'split<TAB>degraded<TAB>clean'")
            pair = ImagePair(parts[0], root / parts[1], root / parts[2])
            for image in (pair.degraded, pair.clean):
                if not image.is_file():
                    raise FileNotFoundError(f"{path}:{number}: missing image {image}")
            pairs.append(pair)

        params_path = root / PARAMS_NAME
        params = json.loads(params_path.read_text(encoding="utf-8")) if params_path.is_file() else {}
        return cls(root, pairs, int(params.get("seed", 0)), params)


def _synthesize_one(task: tuple, seed: int, policy: DegradationPolicy, root: Path,
                    width: int, height: int) -> tuple[ImagePair, dict]:
    split, index, local = task
    image_seed = seed ^ index
    clean = gen_clean(image_seed, width, height)
    params = policy.sample(np.random.default_rng([image_seed, 1]), height, width)
    degraded = degrade(clean, params, seed=image_seed)

    name = f"{local:04d}.ppm"
    pair = ImagePair(split, root / split / "degraded" / name, root / split / "clean" / name)
    write_ppm(pair.clean, clean)
    write_ppm(pair.degraded, degraded)
    record = {"split": split, "index": index, "seed": image_seed, **params.to_record()}
    return pair, record


def make_dataset(
    n_train: int,
    n_test: int,
    seed: int,
    policy: DegradationPolicy,
    out_dir: Union[str, Path],
    size: Sequence[int] = (64, 64),
    workers: Optional[int] = None,
) -> DatasetManifest:
    """
    Generate paired clean/degraded PPMs and their manifest.

    Image i (train first, then test) uses seed ⊕ i, so the output bytes are
    independent of worker count and scheduling.

    Args:
        n_train: Training pairs
        n_test: Test pairs
        seed: Dataset seed
        policy: Degradation sampling ranges
        out_dir: Output directory (created if needed)
        size: (width, height)
        workers: Parallel generation threads (None reads SSDNET_THREADS)

    Returns:
        The written manifest
    """
    if n_train < 0 or n_test < 0 or n_train + n_test == 0:
        raise InputError(f"need a nonempty dataset, got n_train={n_train}, n_test={n_test}")
    if seed < 0:
        raise InputError(f"seed must be >= 0, got {seed}")
    width, height = size
    _check_extents(width, height)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    tasks = [("train", i, i) for i in range(n_train)]
    tasks += [("test", n_train + i, i) for i in range(n_test)]
    workers = workers or worker_count()
    logger.info(f"Synthesizing {n_train} train / {n_test} test pairs at {width}×{height} "
                f"(seed {seed}, {workers} worker(s)) into {root}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda t: _synthesize_one(t, seed, policy, root, width, height), tasks))

    params = {
        "seed": seed,
        "sizes": {"n_train": n_train, "n_test": n_test, "width": width, "height": height},
        "policy": policy.to_dict(),
        "images": [record for _, record in results],
    }
    manifest = DatasetManifest(root, [pair for pair, _ in results], seed, params)
    manifest.write()
    logger.info(f"Wrote manifest {manifest.path}")
    return manifest

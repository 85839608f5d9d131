"""
Trainer Service - Training loop, evaluation and inference over paired data.

Batches are decoded by a background thread into a bounded queue while the
main thread runs forward, backward and the Adam update. Batch order is a
seeded permutation per epoch, so a (seed, config, manifest) triple always
reproduces the same loss sequence.
"""

import logging
import math
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from src.core.errors import ConfigError, InputError, NumericError, ShapeError
from src.core.gradcheck import check_parameters
from src.core.tensor import Tape, Tensor
from src.model.config import ModelConfig
from src.model.network import SSDNet, SSDOutput, build_parameters, ssdnet_forward
from src.model.params import parameter_group
from src.services.checkpoint import Checkpoint, save_checkpoint
from src.services.images import ImageBuffer, read_ppm
from src.services.losses import LossWeights, SsimConfig, total_loss
from src.services.metrics import ImageScores, MetricsReport, score_no_reference, score_pair
from src.services.optim import AdamConfig, OptimState, adam_step, clip_grad_norm, lr_schedule
from src.services.synth import DatasetManifest, ImagePair
from src.utils.files import atomic_write_text
from src.utils.runtime import worker_count

logger = logging.getLogger("ssdnet.trainer")

LOSS_LOG_NAME = "loss_log.tsv"
LOSS_LOG_HEADER = "epoch\tloss\tlr"
FINAL_CHECKPOINT = "final.ssdn"
PREFETCH_BATCHES = 2


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters. eval_every=0 checkpoints only at the end; grad_clip=0 disables clipping."""

    batch_size: int = 4
    epochs: int = 50
    lr_start: float = 3e-4
    lr_end: float = 3e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.2
    beta: float = 0.2
    seed: int = 0
    eval_every: int = 0
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}")
        if self.eval_every < 0 or self.grad_clip < 0:
            raise ConfigError("eval_every and grad_clip must be >= 0")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        # Component configs validate their own ranges.
        AdamConfig(self.adam_beta1, self.adam_beta2, self.adam_eps)
        LossWeights(self.alpha, self.beta)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.adam_beta1, self.adam_beta2, self.adam_eps)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [record.loss for record in self.epochs]


# --- batching ---------------------------------------------------------------

def _load_pair(pair: ImagePair) -> tuple[np.ndarray, np.ndarray]:
    degraded = read_ppm(pair.degraded).pixels
    clean = read_ppm(pair.clean).pixels
    if degraded.shape != clean.shape:
        raise ShapeError(f"{pair.degraded}: shape {degraded.shape} differs from its reference {clean.shape}")
    return np.transpose(degraded, (2, 0, 1)), np.transpose(clean, (2, 0, 1))


class BatchLoader:
    """
    Decodes batches on a worker thread, at most PREFETCH_BATCHES ahead.

    Decoded pairs are cached, so later epochs only reshuffle. Errors raised
    by the worker are re-raised on the consuming thread.
    """

    _DONE = object()

    def __init__(self, pairs: Sequence[ImagePair], batch_size: int, dtype=np.float32):
        self.pairs = list(pairs)
        self.batch_size = batch_size
        self.dtype = dtype
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _assemble(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        for i in indices:
            if i not in self._cache:
                self._cache[i] = _load_pair(self.pairs[i])
        shapes = {self._cache[i][0].shape for i in indices}
        if len(shapes) != 1:
            raise ShapeError(f"batch mixes image shapes {sorted(shapes)}")
        x = np.stack([self._cache[i][0] for i in indices]).astype(self.dtype)
        y = np.stack([self._cache[i][1] for i in indices]).astype(self.dtype)
        return x, y

    def epoch(self, order: Sequence[int]) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        batches = [order[i:i + self.batch_size] for i in range(0, len(order), self.batch_size)]
        slots: queue.Queue = queue.Queue(maxsize=PREFETCH_BATCHES)
        stop = threading.Event()

        def produce():
            try:
                for index, indices in enumerate(batches):
                    if stop.is_set():
                        return
                    slots.put((index, *self._assemble(indices)))
                slots.put(self._DONE)
            except BaseException as e:
                slots.put(e)

        worker = threading.Thread(target=produce, name="ssdnet-loader", daemon=True)
        worker.start()
        try:
            while True:
                item = slots.get()
                if item is self._DONE:
                    return
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            while worker.is_alive():
                try:
                    slots.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.05)


def epoch_order(seed: int, epoch: int, count: int) -> list[int]:
    """Deterministic shuffled index order for one epoch."""
    return np.random.default_rng([seed, epoch]).permutation(count).tolist()


# --- training ---------------------------------------------------------------

def training_step(model: SSDNet, x: Tensor, y: Tensor, weights: LossWeights) -> float:
    """Forward, loss and backward for one batch; leaves gradients on the parameters."""
    model.params.zero_grad()
    degraded = x if (weights.alpha or weights.beta) else None
    with Tape() as tape:
        out = model(x)
        loss = total_loss(out.clean, y, out.recomposed, degraded, weights)
    tape.backward(loss)
    return loss.item()


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    initial: Optional[Checkpoint] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    on_evaluation: Optional[Callable[[int, MetricsReport], None]] = None,
) -> TrainResult:
    """
    Train on the manifest's train split.

    Args:
        model_cfg: Architecture
        train_cfg: Optimization settings
        manifest: Paired data
        out_dir: Receives loss_log.tsv and checkpoints
        initial: Resume from these parameters and optimizer state
        on_epoch: Called after every epoch
        on_evaluation: Called with (epoch, report) at each periodic evaluation

    Returns:
        Final checkpoint, its path and the per-epoch records

    Raises:
        InputError: empty train split
        NumericError: non-finite values, naming the epoch and batch
    """
    pairs = manifest.train
    if not pairs:
        raise InputError(f"manifest {manifest.path} has no training pairs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if initial is not None:
        initial.match_model(model_cfg)
        model = SSDNet(model_cfg, initial.to_params())
        state = initial.optim or OptimState.for_params(model.params)
        step = initial.step
    else:
        model = SSDNet(model_cfg, seed=train_cfg.seed)
        state = OptimState.for_params(model.params)
        step = 0

    logger.info(f"Training {model.param_count} parameters on {len(pairs)} pairs "
                f"for {train_cfg.epochs} epochs (batch {train_cfg.batch_size})")
    loader = BatchLoader(pairs, train_cfg.batch_size)
    weights = train_cfg.loss_weights
    log_path = out_dir / LOSS_LOG_NAME
    atomic_write_text(log_path, LOSS_LOG_HEADER + "\n")
    result_epochs: list[EpochRecord] = []

    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        lr = lr_schedule(epoch, train_cfg.epochs, train_cfg.lr_start, train_cfg.lr_end)
        batch_losses = []
        for batch, x, y in loader.epoch(epoch_order(train_cfg.seed, epoch, len(pairs))):
            try:
                loss = training_step(model, Tensor(x), Tensor(y), weights)
                if not math.isfinite(loss):
                    raise NumericError(f"loss is {loss}")
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {batch}: {e}") from e
            if train_cfg.grad_clip:
                clip_grad_norm(model.params, train_cfg.grad_clip)
            adam_step(model.params, state, lr, train_cfg.adam)
            step += 1
            batch_losses.append(loss)

        record = EpochRecord(epoch, float(np.mean(batch_losses)), lr, time.perf_counter() - started)
        result_epochs.append(record)
        with open(log_path, "a", encoding="utf-8") as handle:
            handle.write(f"{record.epoch}\t{record.loss!r}\t{record.lr!r}\n")
        logger.info(f"Epoch {epoch + 1}/{train_cfg.epochs} | loss {record.loss:.6f} | "
                    f"lr {lr:.3e} | {record.seconds:.1f}s")
        if on_epoch:
            on_epoch(record)

        periodic = train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0
        if periodic and epoch + 1 < train_cfg.epochs:
            ckpt = Checkpoint.from_model(model, step, state)
            save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.ssdn", ckpt)
            if manifest.test:
                report = evaluate(ckpt, manifest)
                logger.info(f"Epoch {epoch + 1} test means: {report.aggregate()}")
                if on_evaluation:
                    on_evaluation(epoch + 1, report)

    final = Checkpoint.from_model(model, step, state)
    final_path = save_checkpoint(out_dir / FINAL_CHECKPOINT, final)
    return TrainResult(final, final_path, result_epochs)


# --- evaluation and inference -----------------------------------------------

def infer(model: SSDNet, image: ImageBuffer) -> SSDOutput:
    """Forward one image without recording a tape."""
    return model(image.to_tensor(model.params.dtype))


def _relative(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return str(path)


def _fan_out(fn, items: Sequence) -> list:
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(fn, items))


def evaluate(checkpoint: Checkpoint, manifest: DatasetManifest, split: str = "test") -> MetricsReport:
    """
    Score the model's clamped clean output against each reference.

    Raises:
        CheckpointMismatchError: stored tensors do not fit the stored config
    """
    model = checkpoint.to_model()
    pairs = manifest.split(split)

    def score(pair: ImagePair) -> ImageScores:
        out = infer(model, read_ppm(pair.degraded))
        enhanced = ImageBuffer.from_array(out.clean.data[0], clamp=True)
        return score_pair(enhanced, read_ppm(pair.clean), _relative(pair.degraded, manifest.root))

    report = MetricsReport(title=f"enhanced ({split})", records=_fan_out(score, pairs))
    logger.info(f"Evaluated {len(report)} {split} pairs")
    return report


def score_inputs(manifest: DatasetManifest, split: str = "test", source: str = "degraded") -> MetricsReport:
    """
    Score unenhanced images against the references.

    source="degraded" is the no-enhancement baseline; source="clean"
    compares each reference with itself.
    """
    if source not in ("degraded", "clean"):
        raise InputError(f"source must be 'degraded' or 'clean', got {source!r}")

    def score(pair: ImagePair) -> ImageScores:
        image = read_ppm(getattr(pair, source))
        return score_pair(image, read_ppm(pair.clean), _relative(getattr(pair, source), manifest.root))

    return MetricsReport(title=f"{source} inputs ({split})", records=_fan_out(score, manifest.split(split)))


def evaluate_unpaired(checkpoint: Checkpoint, paths: Sequence[Union[str, Path]]) -> MetricsReport:
    """UIQM and UCIQE of the enhanced output for images without references."""
    if not paths:
        raise InputError("no images to evaluate")
    model = checkpoint.to_model()

    def score(path) -> ImageScores:
        out = infer(model, read_ppm(path))
        quality, colour = score_no_reference(ImageBuffer.from_array(out.clean.data[0], clamp=True))
        return ImageScores(str(path), None, None, None, quality, colour)

    return MetricsReport(title="enhanced (unpaired)", records=_fan_out(score, list(paths)))


# --- gradient check ---------------------------------------------------------

MAX_CHECK_PIXELS = 256
MAX_CHECK_WIDTH = 8


def check_model_gradients(
    config: ModelConfig,
    height: int = 8,
    width: int = 8,
    seed: int = 0,
    step: float = 1e-5,
    coords_per_tensor: Optional[int] = 4,
) -> dict[str, float]:
    """
    Finite-difference check of the total loss through a whole model in float64.

    Returns:
        Max relative error per parameter group (embed, pfdb.n, bfcb.n, recon)

    Raises:
        ConfigError: the model or image is larger than a check allows
    """
    if height * width > MAX_CHECK_PIXELS or config.width > MAX_CHECK_WIDTH:
        raise ConfigError(f"gradient check needs H·W <= {MAX_CHECK_PIXELS} and width <= {MAX_CHECK_WIDTH}")
    params = build_parameters(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, height, width)), dtype=np.float64)
    reference = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, height, width)), dtype=np.float64)
    # Images smaller than the SSIM window use the largest odd window that fits.
    window = min(SsimConfig.window, height, width)
    cfg = SsimConfig(window=window if window % 2 else window - 1)

    def loss_fn() -> Tensor:
        out = ssdnet_forward(x, config, params)
        return total_loss(out.clean, reference, out.recomposed, x, LossWeights(), cfg)

    errors = check_parameters(loss_fn, dict(params.items()), step=step,
                              coords_per_tensor=coords_per_tensor, seed=seed, group_of=parameter_group)
    for group, error in errors.items():
        logger.info(f"{group}: max relative error {error:.3e}")
    return errors

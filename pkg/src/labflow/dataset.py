"""Demonstration storage, normalisation statistics and training-item sampling.

Episode directory layout::

    meta.json     EpisodeMeta
    actions.f32   T x 14 little-endian float32, row-major
    cam0.rgb8     T x H x W x 3 bytes (front camera)
    cam1.rgb8     left wrist
    cam2.rgb8     right wrist

A dataset root holds one such directory per episode plus ``dataset.json``.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .encoders import ObservationWindow, tokenize_prompt
from .errors import (
    CorruptManifestError,
    InvalidEpisodeError,
    NoDataError,
    ShapeMismatchError,
    StepOutOfRangeError,
    TruncatedArrayError,
    UnnormalizedInputError,
)
from .models.common import ACTION_DIM, NUM_CAMERAS, TaskId
from .models.dataset import DatasetManifest, EpisodeMeta, NormalizationStats
from .models.vocabulary import PromptVocab

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
ACTIONS_FILE = "actions.f32"
STATS_FILE = "norm_stats.json"
MANIFEST_FILE = "dataset.json"

# Slack for float rounding in ensembled commands before a value counts as unnormalized.
DENORMALIZE_SLACK = 1e-6


def camera_file(k: int) -> str:
    return f"cam{k}.rgb8"


@dataclass
class EpisodeRecord:
    """One demonstration.

    ``frames`` is camera-major: ``frames[k]`` is the (T, H, W, 3) uint8 stream of camera k,
    which lets loaded episodes stay memory-mapped.
    """

    task_id: TaskId
    prompt_text: str
    rate_hz: float
    actions: np.ndarray
    frames: tuple[np.ndarray, ...]
    seed: int | None = None
    goal: str | None = None

    def __post_init__(self) -> None:
        if self.actions.ndim != 2 or self.actions.shape[1] != ACTION_DIM or self.actions.shape[0] < 1:
            raise InvalidEpisodeError(f"actions must be T x {ACTION_DIM} with T >= 1, got {self.actions.shape}")
        if not np.isfinite(self.actions).all():
            raise InvalidEpisodeError("actions contain non-finite values")
        if self.rate_hz <= 0:
            raise InvalidEpisodeError(f"rate_hz must be positive, got {self.rate_hz}")
        if len(self.frames) != NUM_CAMERAS:
            raise InvalidEpisodeError(f"expected {NUM_CAMERAS} camera streams, got {len(self.frames)}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise InvalidEpisodeError(f"camera streams disagree in shape: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 4 or shape[0] != self.num_steps or shape[3] != 3:
            raise InvalidEpisodeError(f"camera stream must be ({self.num_steps}, H, W, 3), got {shape}")
        if any(f.dtype != np.uint8 for f in self.frames):
            raise InvalidEpisodeError("frames must be 8-bit")

    @property
    def num_steps(self) -> int:
        return int(self.actions.shape[0])

    @property
    def image_shape(self) -> tuple[int, int]:
        return int(self.frames[0].shape[1]), int(self.frames[0].shape[2])

    def frame(self, t: int) -> np.ndarray:
        """(cameras, H, W, 3) images at step t."""
        return np.stack([f[t] for f in self.frames])

    def meta(self) -> EpisodeMeta:
        h, w = self.image_shape
        return EpisodeMeta(
            task_id=self.task_id,
            prompt_text=self.prompt_text,
            rate_hz=self.rate_hz,
            num_steps=self.num_steps,
            image_height=h,
            image_width=w,
            num_cameras=len(self.frames),
            seed=self.seed,
            goal=self.goal,
        )


@dataclass
class TrainingItem:
    """An observation window and the normalized action chunk that follows it."""

    window: ObservationWindow
    chunk: np.ndarray  # (H, 14) float64 in [-1, 1]
    anchor_step: int


def compute_norm_stats(episodes: Sequence[EpisodeRecord], q_lo: float = 0.01, q_hi: float = 0.99) -> NormalizationStats:
    """Per-dimension linear-interpolation quantiles pooled over every step of every episode."""
    if not episodes:
        raise NoDataError("no data: cannot compute normalization statistics without episodes")
    for i, ep in enumerate(episodes):
        if not np.isfinite(ep.actions).all():
            raise InvalidEpisodeError(f"invalid episode {i}: actions contain non-finite values")
    pooled = np.concatenate([ep.actions for ep in episodes], axis=0).astype(np.float64)
    lo = np.quantile(pooled, q_lo, axis=0, method="linear")
    hi = np.quantile(pooled, q_hi, axis=0, method="linear")
    stats = NormalizationStats(lo=lo.tolist(), hi=hi.tolist(), q_lo=q_lo, q_hi=q_hi)
    if stats.degenerate_dims:
        logger.info("degenerate normalization dims (constant data): %s", stats.degenerate_dims)
    return stats


def _anchors(stats: NormalizationStats) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = np.asarray(stats.lo, dtype=np.float64)
    hi = np.asarray(stats.hi, dtype=np.float64)
    return lo, hi, hi - lo


def normalize_action(a: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Map raw actions (..., 14) into [-1, 1]; degenerate dimensions map to 0."""
    lo, _, span = _anchors(stats)
    live = span > 0
    y = 2.0 * (np.asarray(a, dtype=np.float64) - lo) / np.where(live, span, 1.0) - 1.0
    return np.clip(np.where(live, y, 0.0), -1.0, 1.0)


def denormalize_action(y: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of ``normalize_action`` on [-1, 1]; degenerate dimensions return lo."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.abs(y) > 1.0 + DENORMALIZE_SLACK) or not np.isfinite(y).all():
        raise UnnormalizedInputError(f"unnormalized input: values must lie in [-1, 1], got range [{y.min()}, {y.max()}]")
    lo, _, span = _anchors(stats)
    return lo + (np.clip(y, -1.0, 1.0) + 1.0) / 2.0 * span


def window_indices(t: int, window: int) -> np.ndarray:
    """Steps t-W..t, clamped at 0 so early windows repeat the first frame."""
    return np.clip(np.arange(t - window, t + 1), 0, None)


def chunk_indices(t: int, horizon: int, num_steps: int) -> np.ndarray:
    """Steps t..t+H-1, clamped at the last step so late chunks repeat the final action."""
    return np.minimum(np.arange(t, t + horizon), num_steps - 1)


def make_training_item(
    ep: EpisodeRecord,
    t: int,
    stats: NormalizationStats,
    vocab: PromptVocab | None = None,
    window: int = 2,
    horizon: int = 32,
) -> TrainingItem:
    if not 0 <= t < ep.num_steps:
        raise StepOutOfRangeError(f"step {t} outside episode of length {ep.num_steps}")
    steps = window_indices(t, window)
    frames = np.stack([np.stack([cam[s] for cam in ep.frames]) for s in steps])
    ids = tokenize_prompt(ep.prompt_text, vocab) if vocab is not None else [0]
    chunk = normalize_action(ep.actions[chunk_indices(t, horizon, ep.num_steps)], stats)
    return TrainingItem(window=ObservationWindow(frames=frames, prompt_ids=ids, step=t), chunk=chunk, anchor_step=t)


def sample_training_items(
    episodes: Sequence[EpisodeRecord],
    rng: np.random.Generator,
    batch_size: int,
    stats: NormalizationStats,
    vocab: PromptVocab,
    window: int = 2,
    horizon: int = 32,
) -> list[TrainingItem]:
    """Draw with replacement: a uniform episode, then a uniform step within it."""
    if not episodes:
        raise NoDataError("no data: cannot sample from an empty dataset")
    items = []
    for _ in range(batch_size):
        ep = episodes[int(rng.integers(len(episodes)))]
        t = int(rng.integers(ep.num_steps))
        items.append(make_training_item(ep, t, stats, vocab, window, horizon))
    return items


def save_episode(ep: EpisodeRecord, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / META_FILE).write_text(ep.meta().model_dump_json(indent=2))
    np.ascontiguousarray(ep.actions, dtype="<f4").tofile(path / ACTIONS_FILE)
    for k, cam in enumerate(ep.frames):
        np.ascontiguousarray(cam, dtype=np.uint8).tofile(path / camera_file(k))
    return path


def _read_rows(file: Path, dtype: str, row_shape: tuple[int, ...], expected: int, mmap: bool) -> np.ndarray:
    if not file.exists():
        raise TruncatedArrayError(f"{file.name} is missing")
    itemsize = np.dtype(dtype).itemsize
    row_bytes = itemsize * int(np.prod(row_shape))
    size = file.stat().st_size
    if size % row_bytes:
        raise TruncatedArrayError(f"{file.name}: {size} bytes is not a whole number of {row_bytes}-byte rows")
    rows = size // row_bytes
    if rows != expected:
        raise ShapeMismatchError(f"{file.name}: {rows} rows but the manifest declares {expected} steps")
    if mmap:
        return np.memmap(file, dtype=dtype, mode="r", shape=(rows, *row_shape))
    return np.fromfile(file, dtype=dtype).reshape(rows, *row_shape)


def load_episode(path: str | Path, mmap: bool = False) -> EpisodeRecord:
    """Load an episode directory; ``mmap=True`` keeps camera streams on disk."""
    path = Path(path)
    try:
        meta = EpisodeMeta.model_validate_json((path / META_FILE).read_text())
    except (OSError, ValidationError) as e:
        raise CorruptManifestError(f"corrupt manifest in {path}: {e}") from e
    actions = _read_rows(path / ACTIONS_FILE, "<f4", (ACTION_DIM,), meta.num_steps, mmap=False).astype(np.float32)
    frames = tuple(
        _read_rows(path / camera_file(k), "u1", (meta.image_height, meta.image_width, 3), meta.num_steps, mmap)
        for k in range(meta.num_cameras)
    )
    return EpisodeRecord(
        task_id=meta.task_id,
        prompt_text=meta.prompt_text,
        rate_hz=meta.rate_hz,
        actions=actions,
        frames=frames,
        seed=meta.seed,
        goal=meta.goal,
    )


def save_norm_stats(stats: NormalizationStats, path: str | Path) -> None:
    Path(path).write_text(stats.model_dump_json(indent=2))


def load_norm_stats(path: str | Path) -> NormalizationStats:
    try:
        return NormalizationStats.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError) as e:
        raise CorruptManifestError(f"cannot read normalization stats {path}: {e}") from e


def write_manifest(manifest: DatasetManifest, root: str | Path) -> None:
    Path(root, MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))


def read_manifest(root: str | Path) -> DatasetManifest:
    try:
        return DatasetManifest.model_validate_json(Path(root, MANIFEST_FILE).read_text())
    except (OSError, ValidationError, json.JSONDecodeError) as e:
        raise CorruptManifestError(f"cannot read dataset manifest in {root}: {e}") from e


def load_dataset(root: str | Path, task: TaskId | None = None, mmap: bool = True) -> tuple[DatasetManifest, list[EpisodeRecord]]:
    """Load every episode listed in a dataset manifest, optionally filtered to one task."""
    manifest = read_manifest(root)
    entries = [e for e in manifest.episodes if task is None or e.task_id == task]
    if not entries:
        raise NoDataError(f"no data: dataset {root} has no episodes" + (f" for task {task.value}" if task else ""))
    episodes = [load_episode(Path(root, e.name), mmap=mmap) for e in entries]
    logger.info("loaded %d episodes from %s", len(episodes), root)
    return manifest, episodes

"""
Optional consistency checks for datasets, statistics and checkpoints.

Loading already enforces the per-record format (``EpisodeRecord`` and the pydantic
records raise on malformed data). The checks here look across records: joint
ranges, dead action channels, prompt coverage, manifest bookkeeping and whether a
checkpoint can run under a given run configuration.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .dataset import EpisodeRecord
from .encoders import split_words
from .errors import CheckpointMismatchError
from .models.common import LEFT_GRIPPER_DIM, LEFT_JOINT_DIMS, RESERVED_ACTION_DIMS, RIGHT_GRIPPER_DIM, RIGHT_JOINT_DIMS
from .models.config import RunConfig
from .models.dataset import DatasetManifest, NormalizationStats
from .models.vocabulary import PromptVocab

JOINT_DIMS = list(LEFT_JOINT_DIMS + RIGHT_JOINT_DIMS)
GRIPPER_DIMS = [LEFT_GRIPPER_DIM, RIGHT_GRIPPER_DIM]

# Config sections that fix parameter shapes or the meaning of the inputs.
ARCHITECTURE_SECTIONS = ("observation", "model")
INIT_ONLY_KEYS = {("model", "seed"), ("model", "init_std")}


@dataclass
class ValidationIssue:
    """One finding of a consistency check."""

    field_path: str
    message: str
    severity: str = "error"  # "error", "warning", "info"


class DatasetValidator:
    """
    Cross-record checks on a loaded dataset.

    Usage:
        manifest, episodes = load_dataset(root)
        issues = DatasetValidator().validate(episodes, manifest=manifest)
        errors = [i for i in issues if i.severity == "error"]
    """

    def __init__(self, strict: bool = False, horizon: int | None = None):
        """
        Args:
            strict: If True, raise on any error-severity issue instead of returning it.
            horizon: Chunk length; shorter episodes are reported as info.
        """
        self.strict = strict
        self.horizon = horizon

    def validate(
        self,
        episodes: Sequence[EpisodeRecord],
        manifest: DatasetManifest | None = None,
        stats: NormalizationStats | None = None,
        vocab: PromptVocab | None = None,
    ) -> list[ValidationIssue]:
        issues: list[ValidationIssue] = []
        if not episodes:
            issues.append(ValidationIssue("episodes", "dataset holds no episodes"))
        else:
            issues.extend(self._validate_uniformity(episodes))
            for i, ep in enumerate(episodes):
                issues.extend(self._validate_episode(ep, f"episodes.{i}"))
        if manifest is not None:
            issues.extend(self._validate_manifest(episodes, manifest))
        if stats is not None:
            issues.extend(self._validate_stats(stats))
        if vocab is not None:
            issues.extend(self._validate_prompt_coverage(episodes, vocab))

        errors = [i for i in issues if i.severity == "error"]
        if self.strict and errors:
            raise ValueError(f"Dataset validation failed: {'; '.join(f'{i.field_path}: {i.message}' for i in errors)}")
        return issues

    def _validate_uniformity(self, episodes: Sequence[EpisodeRecord]) -> list[ValidationIssue]:
        issues = []
        shapes = {ep.image_shape for ep in episodes}
        if len(shapes) > 1:
            issues.append(ValidationIssue("episodes.frames", f"episodes mix image sizes {sorted(shapes)}"))
        rates = {ep.rate_hz for ep in episodes}
        if len(rates) > 1:
            issues.append(ValidationIssue("episodes.rate_hz", f"episodes mix control rates {sorted(rates)}"))
        return issues

    def _validate_episode(self, ep: EpisodeRecord, path: str) -> list[ValidationIssue]:
        issues = []
        if not ep.prompt_text.strip():
            issues.append(ValidationIssue(f"{path}.prompt_text", "empty prompt"))
        joints = ep.actions[:, JOINT_DIMS]
        if np.abs(joints).max() > np.pi:
            issues.append(ValidationIssue(f"{path}.actions", "joint targets exceed [-pi, pi]", "warning"))
        grippers = ep.actions[:, GRIPPER_DIMS]
        if grippers.min() < 0.0 or grippers.max() > 1.0:
            issues.append(ValidationIssue(f"{path}.actions", "gripper targets outside [0, 1]", "warning"))
        if np.any(ep.actions[:, list(RESERVED_ACTION_DIMS)] != 0):
            issues.append(ValidationIssue(f"{path}.actions", f"reserved channels {list(RESERVED_ACTION_DIMS)} carry data", "warning"))
        if self.horizon is not None and ep.num_steps < self.horizon:
            issues.append(ValidationIssue(f"{path}.actions", f"{ep.num_steps} steps is shorter than the chunk horizon {self.horizon}", "info"))
        return issues

    def _validate_manifest(self, episodes: Sequence[EpisodeRecord], manifest: DatasetManifest) -> list[ValidationIssue]:
        issues = []
        if len(manifest.episodes) != len(episodes):
            issues.append(ValidationIssue("manifest.episodes", f"manifest lists {len(manifest.episodes)} episodes, found {len(episodes)}"))
            return issues
        for i, (entry, ep) in enumerate(zip(manifest.episodes, episodes, strict=True)):
            if entry.task_id != ep.task_id or entry.num_steps != ep.num_steps or entry.seed != ep.seed:
                issues.append(ValidationIssue(f"manifest.episodes.{i}", f"entry {entry.name} disagrees with the stored episode"))
        seeds = [(e.task_id, e.seed) for e in manifest.episodes]
        if len(set(seeds)) != len(seeds):
            issues.append(ValidationIssue("manifest.episodes", "a layout seed is used twice for the same task", "warning"))
        return issues

    def _validate_stats(self, stats: NormalizationStats) -> list[ValidationIssue]:
        live = [d for d in stats.degenerate_dims if d not in RESERVED_ACTION_DIMS]
        if live:
            return [ValidationIssue("stats", f"live action dims {live} are constant; they normalize to 0", "warning")]
        return []

    def _validate_prompt_coverage(self, episodes: Sequence[EpisodeRecord], vocab: PromptVocab) -> list[ValidationIssue]:
        missing = sorted({w for ep in episodes for w in split_words(ep.prompt_text)} - set(vocab.token_to_id))
        if missing:
            return [ValidationIssue("vocab", f"prompt words map to <unk>: {missing}", "warning")]
        return []


def validate_with_warnings(
    episodes: Sequence[EpisodeRecord],
    manifest: DatasetManifest | None = None,
    stats: NormalizationStats | None = None,
) -> list[ValidationIssue]:
    """Run every check and return the findings without raising."""
    return DatasetValidator(strict=False).validate(episodes, manifest=manifest, stats=stats)


def validate_strict(
    episodes: Sequence[EpisodeRecord],
    manifest: DatasetManifest | None = None,
    stats: NormalizationStats | None = None,
) -> list[ValidationIssue]:
    """Run every check, raising on errors; warnings are returned."""
    return DatasetValidator(strict=True).validate(episodes, manifest=manifest, stats=stats)


def check_checkpoint_compatible(checkpoint_config: RunConfig, run_config: RunConfig) -> None:
    """Raise when the run config would build a different network than the checkpoint holds."""
    mismatches = []
    for section in ARCHITECTURE_SECTIONS:
        saved = getattr(checkpoint_config, section).model_dump(mode="json")
        wanted = getattr(run_config, section).model_dump(mode="json")
        for key in sorted(saved):
            if (section, key) in INIT_ONLY_KEYS:
                continue
            if saved[key] != wanted.get(key):
                mismatches.append(f"{section}.{key}: checkpoint {saved[key]!r}, config {wanted.get(key)!r}")
    if mismatches:
        raise CheckpointMismatchError("checkpoint/config mismatch: " + "; ".join(mismatches))

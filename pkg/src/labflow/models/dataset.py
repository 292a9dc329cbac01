"""On-disk metadata of episodes, datasets and normalisation statistics."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .common import ACTION_DIM, NUM_CAMERAS, PromptVariant, TaskId

EPISODE_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1


class EpisodeMeta(BaseModel):
    """Contents of an episode directory's ``meta.json``."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = Field(EPISODE_FORMAT_VERSION, description="Episode directory format version")
    task_id: TaskId = Field(..., description="Task the episode demonstrates")
    prompt_text: str = Field(..., description="Instruction attached to the episode")
    rate_hz: float = Field(..., gt=0, description="Control rate the actions were recorded at")
    num_steps: int = Field(..., ge=1, description="Number of steps T")
    image_height: int = Field(..., ge=1)
    image_width: int = Field(..., ge=1)
    num_cameras: int = Field(NUM_CAMERAS, ge=1)
    seed: int | None = Field(None, description="Layout seed the episode was reset from")
    goal: str | None = Field(None, description="Target colour for the multi-goal Arrange variant")

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, v: int) -> int:
        if v != EPISODE_FORMAT_VERSION:
            raise ValueError(f"unsupported episode format version {v}")
        return v


class NormalizationStats(BaseModel):
    """Per-dimension quantile anchors for soft min-max normalisation."""

    model_config = ConfigDict(extra="forbid")

    lo: list[float] = Field(..., description="Lower anchor per action dimension")
    hi: list[float] = Field(..., description="Upper anchor per action dimension")
    q_lo: float = Field(0.01, ge=0, le=1, description="Quantile fraction of the lower anchor")
    q_hi: float = Field(0.99, ge=0, le=1, description="Quantile fraction of the upper anchor")

    @model_validator(mode="after")
    def _check_anchors(self) -> NormalizationStats:
        if len(self.lo) != ACTION_DIM or len(self.hi) != ACTION_DIM:
            raise ValueError(f"lo and hi must have {ACTION_DIM} entries")
        if any(lo > hi for lo, hi in zip(self.lo, self.hi, strict=True)):
            raise ValueError("lo must not exceed hi in any dimension")
        if not self.q_lo < self.q_hi:
            raise ValueError("q_lo must be smaller than q_hi")
        return self

    @property
    def degenerate_dims(self) -> list[int]:
        return [d for d in range(ACTION_DIM) if self.lo[d] == self.hi[d]]


class ManifestEntry(BaseModel):
    """One episode listed in a dataset manifest."""

    name: str = Field(..., description="Episode directory name relative to the dataset root")
    task_id: TaskId
    seed: int
    num_steps: int = Field(..., ge=1)


class DatasetManifest(BaseModel):
    """Contents of ``dataset.json``: what was collected and from which seeds."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = Field(DATASET_FORMAT_VERSION)
    master_seed: int
    prompt_variant: PromptVariant
    multi_goal: bool = False
    episodes: list[ManifestEntry] = Field(default_factory=list)
    discarded_seeds: dict[str, list[int]] = Field(default_factory=dict, description="Seeds whose expert rollout failed, per task")

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.episodes:
            out[e.task_id.value] = out.get(e.task_id.value, 0) + 1
        return out

"""Run configuration models.

Every section of a run config file maps onto one of the models below. Unknown keys
are rejected so a misspelled ablation switch fails loudly instead of silently
falling back to its default.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError
from .common import EncoderStreams, PromptVariant, RuntimeMode, TaskId


class StrictModel(BaseModel):
    """Base for config sections: unknown keys are errors."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class FrozenEncoderConfig(StrictModel):
    """A frozen, seeded random-feature patch encoder."""

    seed: int = Field(..., description="Seed the frozen weights are generated from")
    patch_size: int = Field(8, ge=1, description="Patch side in pixels")
    out_dim: int = Field(..., ge=1, description="Output channels per patch token")
    hidden_dim: int = Field(..., ge=1, description="Hidden channels of the random-feature map")


class ObservationConfig(StrictModel):
    """Camera resolution, history window and the frozen encoders."""

    image_size: int = Field(64, ge=1, description="Square image side in pixels")
    window: int = Field(2, ge=0, description="Number of past frames W; windows hold W+1 frames")
    geometric: FrozenEncoderConfig = Field(
        default_factory=lambda: FrozenEncoderConfig(seed=1101, patch_size=8, out_dim=32, hidden_dim=64),
        description="Geometric-style ('small') encoder",
    )
    vision_language: FrozenEncoderConfig = Field(
        default_factory=lambda: FrozenEncoderConfig(seed=2203, patch_size=8, out_dim=64, hidden_dim=128),
        description="Vision-language-style ('base') encoder",
    )
    text_dim: int = Field(64, ge=2, description="Width of frozen prompt embeddings")
    text_seed: int = Field(3307, description="Seed of the frozen prompt embedding table")
    embedding_seed: int = Field(4409, description="Seed of the frozen camera-id and frame-offset embeddings")
    streams: EncoderStreams = Field(EncoderStreams.FUSED, description="Which vision streams feed the adapter")

    @model_validator(mode="after")
    def _check_geometry(self) -> ObservationConfig:
        if self.geometric.patch_size != self.vision_language.patch_size:
            raise ValueError("both encoders must share one patch size (identical token grids)")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.image_dim % 4:
            raise ValueError(f"image token width {self.image_dim} must be divisible by 4 for 2D position encodings")
        if self.text_dim % 2:
            raise ValueError("text_dim must be even")
        return self

    @property
    def patch_size(self) -> int:
        return self.geometric.patch_size

    @property
    def grid_side(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_side**2

    @property
    def num_frames(self) -> int:
        return self.window + 1

    @property
    def image_dim(self) -> int:
        if self.streams == EncoderStreams.GEOMETRIC:
            return self.geometric.out_dim
        if self.streams == EncoderStreams.VISION_LANGUAGE:
            return self.vision_language.out_dim
        return self.geometric.out_dim + self.vision_language.out_dim


class ModelConfig(StrictModel):
    """Adapter and action-expert dimensions."""

    embed_dim: int = Field(128, ge=1, description="Shared embedding width E of adapter and action expert")
    ff_dim: int = Field(512, ge=1, description="Hidden width of every feed-forward layer")
    num_heads: int = Field(8, ge=1, description="Attention heads per attention layer")
    adapter_blocks: int = Field(8, ge=1, description="Transformer decoder blocks in the adapter")
    expert_blocks: int = Field(8, ge=1, description="Transformer blocks in the action expert")
    horizon: int = Field(32, ge=1, description="Action chunk length H")
    tau_embed_dim: int = Field(128, ge=2, description="Width of the sinusoidal flow-time features")
    condition_includes_image_tokens: bool = Field(
        True, description="Append projected image tokens to the adapter's text outputs as DiT conditioning"
    )
    init_std: float = Field(0.02, gt=0, description="Std of the truncated-normal initialisation")
    seed: int = Field(0, description="Seed for parameter initialisation")

    @model_validator(mode="after")
    def _check_heads(self) -> ModelConfig:
        if self.embed_dim % self.num_heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.tau_embed_dim % 2:
            raise ValueError("tau_embed_dim must be even")
        return self


class FlowConfig(StrictModel):
    """Flow-time sampling and Euler integration."""

    beta_alpha: float = Field(1.5, gt=0, description="Alpha of the Beta distribution for B")
    beta_beta: float = Field(1.0, gt=0, description="Beta of the Beta distribution for B")
    tau_scale: float = Field(0.999, gt=0, le=1, description="Scale s in tau = s * (1 - B)")
    denoise_steps: int = Field(10, ge=1, description="Euler steps from noise to action chunk")
    clip_output: bool = Field(True, description="Clip the generated chunk to [-1, 1]")


class TrainConfig(StrictModel):
    """Offline imitation-learning recipe."""

    batch_size: int = Field(16, ge=1, description="Training items per micro-batch")
    accumulation: int = Field(8, ge=1, description="Micro-batches per optimizer step")
    lr: float = Field(1e-4, gt=0, description="AdamW learning rate")
    weight_decay: float = Field(1e-8, ge=0, description="Decoupled weight decay")
    adam_betas: tuple[float, float] = Field((0.9, 0.999), description="AdamW moment decay rates")
    adam_eps: float = Field(1e-8, gt=0, description="AdamW denominator epsilon")
    ema_decay: float = Field(0.999, ge=0, le=1, description="Decay of the EMA shadow parameters")
    clip_norm: float = Field(1.0, gt=0, description="Global gradient-norm threshold")
    total_iterations: int = Field(20_000, ge=0, description="Micro-batch iterations to run")
    seed: int = Field(0, description="Seed of the data and noise stream")
    checkpoint_every: int = Field(2_000, ge=1, description="Iterations between checkpoints")
    dtype: Literal["float32", "float64"] = Field("float32", description="Parameter and activation dtype")

    @model_validator(mode="after")
    def _check_schedule(self) -> TrainConfig:
        if self.checkpoint_every % self.accumulation:
            raise ValueError("checkpoint_every must be a multiple of accumulation so checkpoints land on optimizer steps")
        return self


class TaskSpec(StrictModel):
    """Simulator task: layout randomisation, success predicate and prompt choice."""

    task: TaskId = Field(TaskId.ARRANGE, description="Which laboratory task analog to run")
    prompt_variant: PromptVariant = Field(PromptVariant.DETAILED, description="Prompt granularity attached to episodes")
    multi_goal: bool = Field(False, description="Arrange only: two tube colours, the prompt names the target")
    episode_cap: int | None = Field(None, ge=1, description="Tick cap per episode; None uses the task preset")
    layout_jitter: float = Field(0.02, ge=0, description="Half-range (m) of object position randomisation")
    angle_jitter: float = Field(0.2, ge=0, description="Half-range (rad) of object angle randomisation")
    grasp_radius: float = Field(0.02, gt=0, description="Max EE-to-object distance (m) for a grasp")
    slot_tolerance: float = Field(0.01, gt=0, description="Arrange: max tube-to-slot distance (m) for success")
    required_scrub_cycles: int = Field(3, ge=1, description="Clean: scrub cycles needed for success")
    required_transfer_fraction: float = Field(0.6, gt=0, description="Pour: tube amount needed, as a fraction of spoon capacity")
    max_spill_fraction: float = Field(0.1, gt=0, description="Pour: allowed spill, as a fraction of the initial total")
    spoon_capacity: float = Field(10.0, gt=0, description="Pour: grains a spoon can hold")
    powder_total: float = Field(40.0, gt=0, description="Pour: grains in the bin at reset")
    pour_angle: float = Field(0.6, gt=0, description="Pour: spoon tilt (rad) beyond which grains leave the spoon")
    rate_hz: float = Field(50.0, gt=0, description="Control rate")
    joint_rate_limit: float = Field(0.05, gt=0, description="Max joint motion per tick (rad)")
    gripper_rate: float = Field(0.2, gt=0, description="Max gripper motion per tick")
    expert_noise: float = Field(0.01, ge=0, description="Std (rad) of expert action noise in transit phases")
    perturb_magnitude: float = Field(0.3, ge=0, description="Disturbance jolt (rad) of the held object")
    perturb_step: int = Field(150, ge=0, description="Earliest tick at which the disturbance is applied")

    @property
    def cap(self) -> int:
        if self.episode_cap is not None:
            return self.episode_cap
        return {TaskId.CLEAN: 700, TaskId.ARRANGE: 500, TaskId.POUR: 800}[self.task]


class EnsembleConfig(StrictModel):
    """Temporal ensembling of overlapping chunks."""

    decay: float = Field(0.1, ge=0, description="Weight decay m in w = exp(-m * age)")
    horizon: int = Field(32, ge=1, description="Chunk length H")
    capacity: int = Field(4, ge=1, description="Chunks kept in the buffer")
    prefer_oldest: bool = Field(False, description="Weight older chunks heavier instead of newer ones")


class RuntimeConfig(StrictModel):
    """Inference runtime and evaluation loop."""

    mode: RuntimeMode = Field(RuntimeMode.SIMULATED, description="Simulated ticks or wall-clock threads")
    latency_ticks: int = Field(8, ge=0, description="Simulated predictor latency per prediction")
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig, description="Chunk ensembling")
    eval_episodes: int = Field(50, ge=1, description="Episodes per evaluation")
    eval_seed_offset: int = Field(100_000, ge=0, description="Evaluation seeds start here (disjoint from collection)")
    perturb: bool = Field(False, description="Apply the mid-episode disturbance")


class CollectConfig(StrictModel):
    """Demonstration collection."""

    count: int = Field(200, ge=1, description="Episodes per task")
    max_failure_rate: float = Field(0.2, ge=0, le=1, description="Abort when expert failures exceed this fraction of count")


class PathsConfig(StrictModel):
    """Filesystem locations."""

    data_dir: str = Field("data", description="Dataset directory")
    out_dir: str = Field("runs", description="Directory for checkpoints, logs and reports")


class RunConfig(StrictModel):
    """A complete, reproducible run description."""

    profile: Literal["desk", "paper-dims"] = Field("desk", description="Named size profile the defaults came from")
    master_seed: int = Field(0, description="Root seed every other seed is derived from")
    observation: ObservationConfig = Field(default_factory=ObservationConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    flow: FlowConfig = Field(default_factory=FlowConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    collect: CollectConfig = Field(default_factory=CollectConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_horizon(self) -> RunConfig:
        if self.runtime.ensemble.horizon != self.model.horizon:
            raise ValueError(f"runtime.ensemble.horizon {self.runtime.ensemble.horizon} != model.horizon {self.model.horizon}")
        return self

    @classmethod
    def paper_dims(cls) -> RunConfig:
        """Full-size model: E=512, FF 2048, 8 heads, 224px images with patch 16."""
        return cls(
            profile="paper-dims",
            observation=ObservationConfig(
                image_size=224,
                geometric=FrozenEncoderConfig(seed=1101, patch_size=16, out_dim=384, hidden_dim=384),
                vision_language=FrozenEncoderConfig(seed=2203, patch_size=16, out_dim=768, hidden_dim=768),
                text_dim=768,
            ),
            model=ModelConfig(embed_dim=512, ff_dim=2048, num_heads=8),
            train=TrainConfig(total_iterations=400_000, checkpoint_every=20_000),
        )


PROFILES = {"desk": RunConfig, "paper-dims": RunConfig.paper_dims}


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Validate a parsed config mapping, converting pydantic errors to ConfigError."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        summary = "; ".join(f"{'.'.join(str(x) for x in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid run config: {summary}") from e


def load_config(path: str | Path) -> RunConfig:
    """Load a YAML run config. Missing sections take their defaults."""
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    return config_from_dict(data)


def config_to_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def dump_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_yaml(config))

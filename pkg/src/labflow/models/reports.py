"""Machine-readable records emitted by training, evaluation and inspection."""

from __future__ import annotations

from pydantic import BaseModel, Field

from .common import PromptVariant, TaskId


class StepRecord(BaseModel):
    """One line of the training log, written per optimizer step."""

    iteration: int = Field(..., description="Micro-batch iterations completed")
    optimizer_step: int = Field(..., description="Optimizer steps completed")
    loss: float = Field(..., description="Mean loss over the accumulated micro-batches")
    grad_norm: float = Field(..., description="Global gradient norm before clipping")
    clip_scale: float = Field(..., description="Factor the gradients were scaled by")


class EpisodeResult(BaseModel):
    """One line of an evaluation report."""

    seed: int
    success: bool
    metrics: dict[str, float] = Field(default_factory=dict)
    ticks: int = Field(..., description="Executor ticks run")
    stalled_ticks: int = Field(0, description="Ticks with no valid chunk, including the warm-up before the first chunk")
    stalled_after_first_chunk: int = Field(0, description="Stalled ticks after the first chunk arrived")
    max_stall_run: int = Field(0, description="Longest run of consecutive stalled ticks after the first chunk")
    runtime_stall: bool = Field(False, description="A stall after the first chunk lasted longer than the chunk horizon")
    predictions: int = Field(0, description="Chunks submitted to the buffer")
    mean_latency: float = Field(0.0, description="Mean prediction latency (ticks in simulated mode, seconds in wall-clock mode)")
    perturbed: bool = Field(False, description="The disturbance was applied during the episode")


class EvalSummary(BaseModel):
    """Aggregate over an evaluation run."""

    task: TaskId
    prompt_variant: PromptVariant
    episodes: int
    success_rate: float
    latency_ticks: int
    perturb: bool
    stalled_ticks_total: int
    stalled_after_first_chunk_total: int
    runtime_stalls: int
    metric_means: dict[str, float] = Field(default_factory=dict)


class AblationRow(BaseModel):
    """One arm of an ablation table."""

    label: str
    success_rate: float
    episodes: int
    final_loss: float | None = None


class ModuleStructure(BaseModel):
    """Parameter accounting for one part of the model."""

    name: str
    trainable_params: int
    reference_params: int | None = Field(None, description="Reference size the count is compared against")
    within_tolerance: bool | None = Field(None, description="Count lies within 20% of the reference")
    dims: dict[str, int] = Field(default_factory=dict)


class EvalReport(BaseModel):
    """Summary plus one row per evaluated episode."""

    summary: EvalSummary
    episodes: list[EpisodeResult] = Field(default_factory=list)

"""
labflow

Desk-scale flow-matching imitation learning for a planar bimanual laboratory
simulator: frozen dual vision encoders, a prompt-conditioned adapter, a
diffusion-transformer action expert and an asynchronous chunked runtime.

Basic Usage (Python):
    from labflow import RunConfig, cmd_collect, cmd_train, cmd_eval

    config = RunConfig()
    data = cmd_collect(config, out="data/arrange", count=20)
    ckpt = cmd_train(config, data_dir=data, out_dir="runs/arrange", iterations=800)
    report = cmd_eval(config, ckpt, episodes=10, latency=8)
    print(report.summary.success_rate)

Command Line:
    labflow collect --task arrange --count 200 --out data/arrange
    labflow train --data data/arrange --out runs/arrange
    labflow eval --ckpt runs/arrange/checkpoints/last.safetensors --episodes 50 --latency 8
    labflow inspect --profile paper-dims
"""

from .dataset import (
    EpisodeRecord,
    TrainingItem,
    compute_norm_stats,
    denormalize_action,
    load_dataset,
    load_episode,
    make_training_item,
    normalize_action,
    sample_training_items,
    save_episode,
)
from .encoders import ObservationEncoder, ObservationWindow, build_vocab, tokenize_prompt
from .errors import LabflowError
from .experiments import cmd_ablate, cmd_collect, cmd_eval, cmd_inspect, cmd_train
from .flow import cfm_loss, corrupt, generate_chunk, sample_tau
from .models import (
    EvalReport,
    NormalizationStats,
    PromptVariant,
    RunConfig,
    TaskId,
    TaskSpec,
    load_config,
)
from .policy import FlowMatchingPolicy, PolicyRunner, build_policy
from .runtime import ChunkBuffer, PlaybackPredictor, control_tick, run_episode, submit_chunk
from .trainer import Checkpoint, Trainer

# Optional consistency checks
from .validation import DatasetValidator, ValidationIssue, check_checkpoint_compatible, validate_strict, validate_with_warnings

__all__ = [
    # Config and records
    "RunConfig",
    "TaskSpec",
    "TaskId",
    "PromptVariant",
    "NormalizationStats",
    "EvalReport",
    "load_config",
    "LabflowError",
    # Data
    "EpisodeRecord",
    "TrainingItem",
    "compute_norm_stats",
    "normalize_action",
    "denormalize_action",
    "make_training_item",
    "sample_training_items",
    "save_episode",
    "load_episode",
    "load_dataset",
    # Model
    "ObservationWindow",
    "ObservationEncoder",
    "build_vocab",
    "tokenize_prompt",
    "FlowMatchingPolicy",
    "PolicyRunner",
    "build_policy",
    "sample_tau",
    "corrupt",
    "cfm_loss",
    "generate_chunk",
    # Training
    "Trainer",
    "Checkpoint",
    # Runtime
    "ChunkBuffer",
    "submit_chunk",
    "control_tick",
    "run_episode",
    "PlaybackPredictor",
    # Experiments
    "cmd_collect",
    "cmd_train",
    "cmd_eval",
    "cmd_ablate",
    "cmd_inspect",
    # Validation
    "DatasetValidator",
    "ValidationIssue",
    "validate_with_warnings",
    "validate_strict",
    "check_checkpoint_compatible",
]

__version__ = "0.1.0"

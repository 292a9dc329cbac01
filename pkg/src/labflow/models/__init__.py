"""Pydantic models for labflow configs, on-disk metadata and reports."""

from .common import (
    ACTION_DIM,
    LIVE_ACTION_DIMS,
    NUM_CAMERAS,
    RESERVED_ACTION_DIMS,
    EncoderStreams,
    PromptVariant,
    RuntimeMode,
    TaskId,
)
from .config import (
    CollectConfig,
    EnsembleConfig,
    FlowConfig,
    FrozenEncoderConfig,
    ModelConfig,
    ObservationConfig,
    PathsConfig,
    RunConfig,
    RuntimeConfig,
    TaskSpec,
    TrainConfig,
    config_from_dict,
    config_to_yaml,
    dump_config,
    load_config,
)
from .dataset import DatasetManifest, EpisodeMeta, ManifestEntry, NormalizationStats
from .reports import AblationRow, EpisodeResult, EvalReport, EvalSummary, ModuleStructure, StepRecord
from .vocabulary import PAD_ID, UNK_ID, PromptVocab

__all__ = [
    # Constants and enums
    "ACTION_DIM",
    "LIVE_ACTION_DIMS",
    "NUM_CAMERAS",
    "RESERVED_ACTION_DIMS",
    "EncoderStreams",
    "PromptVariant",
    "RuntimeMode",
    "TaskId",
    # Config
    "CollectConfig",
    "EnsembleConfig",
    "FlowConfig",
    "FrozenEncoderConfig",
    "ModelConfig",
    "ObservationConfig",
    "PathsConfig",
    "RunConfig",
    "RuntimeConfig",
    "TaskSpec",
    "TrainConfig",
    "config_from_dict",
    "config_to_yaml",
    "dump_config",
    "load_config",
    # Metadata
    "DatasetManifest",
    "EpisodeMeta",
    "ManifestEntry",
    "NormalizationStats",
    "PAD_ID",
    "UNK_ID",
    "PromptVocab",
    # Reports
    "AblationRow",
    "EpisodeResult",
    "EvalSummary",
    "EvalReport",
    "ModuleStructure",
    "StepRecord",
]

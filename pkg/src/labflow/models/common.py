"""Common types and constants shared across labflow."""

from __future__ import annotations

from enum import Enum

ACTION_DIM = 14
NUM_CAMERAS = 3
NUM_ARMS = 2

# Live action channels: left joints 0-2, left gripper 3, right joints 7-9, right gripper 10.
LEFT_JOINT_DIMS = (0, 1, 2)
LEFT_GRIPPER_DIM = 3
RIGHT_JOINT_DIMS = (7, 8, 9)
RIGHT_GRIPPER_DIM = 10
RESERVED_ACTION_DIMS = (4, 5, 6, 11, 12, 13)
LIVE_ACTION_DIMS = (0, 1, 2, 3, 7, 8, 9, 10)

# Camera ids in token order.
FRONT_CAMERA = 0
LEFT_WRIST_CAMERA = 1
RIGHT_WRIST_CAMERA = 2


class TaskId(str, Enum):
    """The three laboratory task analogs."""

    CLEAN = "clean"
    ARRANGE = "arrange"
    POUR = "pour"


class PromptVariant(str, Enum):
    """Prompt granularity used for training and evaluation."""

    IRRELEVANT = "irrelevant"
    CONCISE = "concise"
    DETAILED = "detailed"


class EncoderStreams(str, Enum):
    """Which frozen vision streams feed the adapter."""

    FUSED = "fused"
    GEOMETRIC = "geometric"
    VISION_LANGUAGE = "vision_language"


class RuntimeMode(str, Enum):
    """How predictor latency is produced during a rollout."""

    SIMULATED = "simulated"
    WALL_CLOCK = "wall_clock"

"""Simulator state values."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..models.common import TaskId


class ObjectKind(str, Enum):
    TUBE = "tube"
    RACK = "rack"
    BRUSH = "brush"
    SPOON = "spoon"
    BIN = "bin"
    TRAY = "tray"


GRABBABLE = frozenset({ObjectKind.TUBE, ObjectKind.BRUSH, ObjectKind.SPOON})

LEFT = 0
RIGHT = 1


@dataclass
class SimObject:
    kind: ObjectKind
    pose: np.ndarray  # (x, y, angle)
    color: str = ""

    @property
    def grabbable(self) -> bool:
        return self.kind in GRABBABLE


@dataclass
class Attachment:
    arm: int
    rel: np.ndarray  # object pose in the end-effector frame


@dataclass
class PowderState:
    """Scalar grain buckets; their sum stays equal to ``total``."""

    bin: float = 0.0
    spoon: float = 0.0
    tube: float = 0.0
    spilled: float = 0.0
    total: float = 0.0

    @property
    def accounted(self) -> float:
        return self.bin + self.spoon + self.tube + self.spilled


@dataclass
class ScrubTracker:
    """Direction reversals of the brush tip along the tube bore, with hysteresis."""

    reversals: int = 0
    direction: int = 0
    reference: float | None = None

    @property
    def cycles(self) -> int:
        return self.reversals // 2


@dataclass
class SimState:
    task: TaskId
    joints: np.ndarray  # (2, 3), left then right
    grippers: np.ndarray  # (2,), 0 closed, 1 open
    objects: list[SimObject]
    seed: int
    powder: PowderState = field(default_factory=PowderState)
    attachments: dict[int, Attachment] = field(default_factory=dict)
    scrub: ScrubTracker = field(default_factory=ScrubTracker)
    step_count: int = 0
    goal: str | None = None
    perturbed: bool = False

    def copy(self) -> SimState:
        return copy.deepcopy(self)

    def index_of(self, kind: ObjectKind, color: str | None = None) -> int:
        for i, obj in enumerate(self.objects):
            if obj.kind == kind and (color is None or obj.color == color):
                return i
        raise KeyError(f"no {kind.value} object" + (f" of color {color}" if color else ""))

    def indices_of(self, kind: ObjectKind) -> list[int]:
        return [i for i, obj in enumerate(self.objects) if obj.kind == kind]

    def held_by(self, arm: int) -> int | None:
        for idx, att in self.attachments.items():
            if att.arm == arm:
                return idx
        return None

    def equals(self, other: SimState) -> bool:
        """Bitwise equality of every field."""
        if (self.task, self.seed, self.step_count, self.goal, self.perturbed) != (
            other.task,
            other.seed,
            other.step_count,
            other.goal,
            other.perturbed,
        ):
            return False
        if not (np.array_equal(self.joints, other.joints) and np.array_equal(self.grippers, other.grippers)):
            return False
        if len(self.objects) != len(other.objects):
            return False
        for a, b in zip(self.objects, other.objects, strict=True):
            if a.kind != b.kind or a.color != b.color or not np.array_equal(a.pose, b.pose):
                return False
        if self.attachments.keys() != other.attachments.keys():
            return False
        for k, att in self.attachments.items():
            if att.arm != other.attachments[k].arm or not np.array_equal(att.rel, other.attachments[k].rel):
                return False
        return self.powder == other.powder and self.scrub == other.scrub

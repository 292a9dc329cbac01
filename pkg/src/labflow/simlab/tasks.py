"""Task layouts, prompts, object geometry and success predicates."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..models.common import PromptVariant, TaskId
from ..models.config import TaskSpec
from .kinematics import wrap_angle
from .state import LEFT, ObjectKind, PowderState, SimObject, SimState

# Object geometry (metres).
TUBE_HALF_LENGTH = 0.05
TUBE_WIDTH = 0.016
BORE_MIN = -0.04
BORE_MAX = 0.05
BORE_HALF_WIDTH = 0.012
BRUSH_TIP = 0.12
SPOON_TIP = 0.10
BIN_RADIUS = 0.05
MOUTH_RADIUS = 0.02
SLOT_SPACING = 0.04
SCRUB_HYSTERESIS = 0.005
SCOOP_GAIN = 2.0
LEVEL_HEADING = np.pi / 2

# Layout anchors.
CLEAN_RACK = (-0.30, 0.52)
CLEAN_BRUSH = (0.33, 0.32, 2.6)
PRESENT_POSE = np.array([-0.05, 0.45, 0.0])
ARRANGE_TRAY = (0.275, 0.425, 0.32, 0.22)  # center x, center y, width, height
ARRANGE_TUBE_X = (0.15, 0.40)
ARRANGE_TUBE_Y = (0.35, 0.50)
ARRANGE_MIN_SEPARATION = 0.05
ARRANGE_RACK = (-0.05, 0.50)
POUR_SPOON = (0.35, 0.25)
POUR_BIN = (0.15, 0.50)
POUR_TUBE = (-0.10, 0.45)

TUBE_COLORS = ("cyan", "white")

_PROMPTS = {
    TaskId.CLEAN: {
        PromptVariant.DETAILED: "take the tube with left hand, brush the tube with right hand, then pull the brush out.",
        PromptVariant.CONCISE: "brush the tube.",
    },
    TaskId.ARRANGE: {
        PromptVariant.DETAILED: "pick up the {color} tube from the tray with the right hand and put it in the middle slot of the rack.",
        PromptVariant.CONCISE: "put the {color} tube in the rack.",
    },
    TaskId.POUR: {
        PromptVariant.DETAILED: "scoop the powder from the bin with the spoon and pour it into the tube.",
        PromptVariant.CONCISE: "pour the powder.",
    },
}
IRRELEVANT_PROMPT = "this is a test sentence that is not related to the task."


def prompt_for(task: TaskId, variant: PromptVariant, goal: str | None = None) -> str:
    if variant == PromptVariant.IRRELEVANT:
        return IRRELEVANT_PROMPT
    return _PROMPTS[task][variant].format(color=goal or TUBE_COLORS[0])


def unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def tube_axis(tube: SimObject) -> tuple[np.ndarray, np.ndarray]:
    return tube.pose[:2], unit(tube.pose[2])


def tube_mouth(tube: SimObject) -> np.ndarray:
    center, u = tube_axis(tube)
    return center + TUBE_HALF_LENGTH * u


def brush_tip(brush: SimObject) -> np.ndarray:
    return brush.pose[:2] + BRUSH_TIP * unit(brush.pose[2])


def spoon_tip(spoon: SimObject) -> np.ndarray:
    return spoon.pose[:2] + SPOON_TIP * unit(spoon.pose[2])


def bore_coordinates(tube: SimObject, point: np.ndarray) -> tuple[float, float]:
    """(axial s, lateral distance) of a point in the tube frame."""
    center, u = tube_axis(tube)
    d = point - center
    return float(d @ u), float(abs(d[0] * u[1] - d[1] * u[0]))


def in_bore(tube: SimObject, point: np.ndarray) -> bool:
    s, lateral = bore_coordinates(tube, point)
    return BORE_MIN <= s <= BORE_MAX and lateral <= BORE_HALF_WIDTH


def slot_positions(rack: SimObject) -> np.ndarray:
    """(3, 2) slot centres; index 1 is the middle slot."""
    offsets = np.array([-SLOT_SPACING, 0.0, SLOT_SPACING])
    return rack.pose[:2] + offsets[:, None] * unit(rack.pose[2])


def spoon_tilt(spoon: SimObject) -> float:
    return float(wrap_angle(spoon.pose[2] - LEVEL_HEADING))


def _jitter(rng: np.random.Generator, half: float) -> float:
    return float(rng.uniform(-half, half)) if half > 0 else 0.0


def layout(spec: TaskSpec, seed: int, joints: np.ndarray, grippers: np.ndarray) -> SimState:
    """Seeded initial layout for the task, arms at the given pose."""
    rng = np.random.default_rng([seed, 0x5EED])
    j, a = spec.layout_jitter, spec.angle_jitter
    goal: str | None = None
    powder = PowderState()
    if spec.task == TaskId.CLEAN:
        rack = np.array([CLEAN_RACK[0] + _jitter(rng, j), CLEAN_RACK[1] + _jitter(rng, j), 0.0])
        objects = [
            SimObject(ObjectKind.RACK, rack.copy()),
            SimObject(ObjectKind.TUBE, np.array([rack[0], rack[1], LEVEL_HEADING]), TUBE_COLORS[0]),
            SimObject(
                ObjectKind.BRUSH,
                np.array([CLEAN_BRUSH[0] + _jitter(rng, j), CLEAN_BRUSH[1] + _jitter(rng, j), CLEAN_BRUSH[2] + _jitter(rng, a)]),
            ),
        ]
    elif spec.task == TaskId.ARRANGE:
        cx, cy, _, _ = ARRANGE_TRAY
        objects = [
            SimObject(ObjectKind.TRAY, np.array([cx, cy, 0.0])),
            SimObject(ObjectKind.RACK, np.array([ARRANGE_RACK[0] + _jitter(rng, j), ARRANGE_RACK[1] + _jitter(rng, j), 0.0])),
        ]
        colors = list(TUBE_COLORS) if spec.multi_goal else [TUBE_COLORS[0]] * 2
        if spec.multi_goal:
            rng.shuffle(colors)
            goal = str(rng.choice(TUBE_COLORS))
        placed: list[np.ndarray] = []
        while len(placed) < 2:
            p = np.array([rng.uniform(*ARRANGE_TUBE_X), rng.uniform(*ARRANGE_TUBE_Y)])
            if all(np.hypot(*(p - q)) >= ARRANGE_MIN_SEPARATION for q in placed):
                placed.append(p)
        for p, color in zip(placed, colors, strict=True):
            objects.append(SimObject(ObjectKind.TUBE, np.array([p[0], p[1], float(rng.uniform(0.0, np.pi))]), color))
    else:
        objects = [
            SimObject(ObjectKind.BIN, np.array([POUR_BIN[0] + _jitter(rng, j), POUR_BIN[1] + _jitter(rng, j), 0.0])),
            SimObject(ObjectKind.RACK, np.array([POUR_TUBE[0], POUR_TUBE[1], 0.0])),
            SimObject(ObjectKind.TUBE, np.array([POUR_TUBE[0], POUR_TUBE[1], LEVEL_HEADING]), TUBE_COLORS[0]),
            SimObject(
                ObjectKind.SPOON,
                np.array([POUR_SPOON[0] + _jitter(rng, j), POUR_SPOON[1] + _jitter(rng, j), LEVEL_HEADING + _jitter(rng, a / 2)]),
            ),
        ]
        powder = PowderState(bin=spec.powder_total, total=spec.powder_total)
    return SimState(
        task=spec.task,
        joints=np.array(joints, dtype=np.float64),
        grippers=np.array(grippers, dtype=np.float64),
        objects=objects,
        seed=seed,
        powder=powder,
        goal=goal,
    )


def arrange_target_tube(state: SimState) -> int:
    """The tube the prompt asks for; without a goal colour the first tube."""
    tubes = state.indices_of(ObjectKind.TUBE)
    if state.goal is not None:
        return next(i for i in tubes if state.objects[i].color == state.goal)
    return tubes[0]


def evaluate_state(state: SimState, spec: TaskSpec) -> tuple[bool, dict[str, float]]:
    """Success predicate and metrics of a single state."""
    if spec.task == TaskId.CLEAN:
        tube_idx = state.index_of(ObjectKind.TUBE)
        brush = state.objects[state.index_of(ObjectKind.BRUSH)]
        grasped = tube_idx in state.attachments and state.attachments[tube_idx].arm == LEFT
        withdrawn = not in_bore(state.objects[tube_idx], brush_tip(brush))
        cycles = state.scrub.cycles
        metrics = {"scrub_cycles": float(cycles), "tube_grasped": float(grasped), "brush_withdrawn": float(withdrawn)}
        return grasped and cycles >= spec.required_scrub_cycles and withdrawn, metrics
    if spec.task == TaskId.ARRANGE:
        middle = slot_positions(state.objects[state.index_of(ObjectKind.RACK)])[1]
        tubes = state.indices_of(ObjectKind.TUBE)
        candidates = [i for i in tubes if state.goal is None or state.objects[i].color == state.goal]
        dist = {i: float(np.hypot(*(state.objects[i].pose[:2] - middle))) for i in candidates}
        best = min(candidates, key=lambda i: dist[i])
        released = best not in state.attachments
        wrong = [i for i in tubes if i not in candidates and np.hypot(*(state.objects[i].pose[:2] - middle)) <= spec.slot_tolerance]
        metrics = {"slot_distance": dist[best], "released": float(released), "wrong_tube_in_slot": float(bool(wrong))}
        return dist[best] <= spec.slot_tolerance and released, metrics
    p = state.powder
    transfer = p.tube / spec.spoon_capacity
    spill = p.spilled / p.total if p.total > 0 else 0.0
    metrics = {"transfer_fraction": transfer, "spill_fraction": spill, "tube_amount": p.tube, "spilled_amount": p.spilled}
    return transfer >= spec.required_transfer_fraction and spill <= spec.max_spill_fraction, metrics


def evaluate_success(trajectory: Sequence[SimState], spec: TaskSpec) -> tuple[bool, dict[str, float]]:
    """Judge a rollout by its final state; an empty rollout fails."""
    if not trajectory:
        return False, {}
    return evaluate_state(trajectory[-1], spec)

"""Kinematic world transitions: reset, step and the held-object disturbance.

Every transition returns a new ``SimState``; inputs are never mutated.
"""

from __future__ import annotations

import logging

import numpy as np

from ..models.common import LEFT_GRIPPER_DIM, LEFT_JOINT_DIMS, RIGHT_GRIPPER_DIM, RIGHT_JOINT_DIMS, TaskId
from ..models.config import TaskSpec
from .kinematics import ARMS, HOME_JOINTS, JOINT_LIMIT, compose, forward_kinematics, inverse, wrap_angle
from .state import Attachment, ObjectKind, ScrubTracker, SimState
from .tasks import (
    BIN_RADIUS,
    MOUTH_RADIUS,
    SCOOP_GAIN,
    SCRUB_HYSTERESIS,
    bore_coordinates,
    brush_tip,
    in_bore,
    layout,
    spoon_tilt,
    spoon_tip,
    tube_mouth,
)

logger = logging.getLogger(__name__)

GRIP_THRESHOLD = 0.5
HOME_GRIPPERS = np.ones(2)

_JOINT_DIMS = (LEFT_JOINT_DIMS, RIGHT_JOINT_DIMS)
_GRIPPER_DIMS = (LEFT_GRIPPER_DIM, RIGHT_GRIPPER_DIM)


def reset(spec: TaskSpec, seed: int) -> SimState:
    """Arms at home, grippers open, objects laid out from ``seed``."""
    return layout(spec, seed, HOME_JOINTS, HOME_GRIPPERS)


def end_effector_poses(state: SimState) -> list[np.ndarray]:
    return [forward_kinematics(arm, state.joints[i]) for i, arm in enumerate(ARMS)]


def _nearest_free_object(state: SimState, xy: np.ndarray, radius: float) -> int | None:
    best, best_dist = None, radius
    for idx, obj in enumerate(state.objects):
        if not obj.grabbable or idx in state.attachments:
            continue
        dist = float(np.hypot(*(obj.pose[:2] - xy)))
        if dist <= best_dist:
            best, best_dist = idx, dist
    return best


def _track_scrub(tracker: ScrubTracker, s: float, inside: bool) -> None:
    if not inside:
        tracker.reference, tracker.direction = None, 0
        return
    if tracker.reference is None:
        tracker.reference, tracker.direction = s, 0
        return
    delta = s - tracker.reference
    if tracker.direction == 0:
        if abs(delta) > SCRUB_HYSTERESIS:
            tracker.direction, tracker.reference = int(np.sign(delta)), s
    elif tracker.direction * delta > 0:
        tracker.reference = s
    elif -tracker.direction * delta > SCRUB_HYSTERESIS:
        tracker.reversals += 1
        tracker.direction, tracker.reference = -tracker.direction, s


def _powder_physics(state: SimState, spec: TaskSpec, spoon_angle_before: float) -> None:
    spoon = state.objects[state.index_of(ObjectKind.SPOON)]
    tip = spoon_tip(spoon)
    powder = state.powder
    turn = float(wrap_angle(spoon.pose[2] - spoon_angle_before))
    bin_center = state.objects[state.index_of(ObjectKind.BIN)].pose[:2]
    if turn > 0 and np.hypot(*(tip - bin_center)) <= BIN_RADIUS:
        amount = min(SCOOP_GAIN * spec.spoon_capacity * turn, spec.spoon_capacity - powder.spoon, powder.bin)
        if amount > 0:
            powder.bin -= amount
            powder.spoon += amount
    if abs(spoon_tilt(spoon)) > spec.pour_angle and powder.spoon > 0:
        amount = min(powder.spoon, spec.spoon_capacity / 4)
        mouth = tube_mouth(state.objects[state.index_of(ObjectKind.TUBE)])
        powder.spoon -= amount
        if np.hypot(*(tip - mouth)) <= MOUTH_RADIUS:
            powder.tube += amount
        else:
            powder.spilled += amount


def step(state: SimState, action: np.ndarray, spec: TaskSpec) -> SimState:
    """One control tick towards the raw 14-dim action; reserved channels are ignored."""
    action = np.asarray(action, dtype=np.float64)
    nxt = state.copy()
    before = nxt.grippers.copy()
    spoon_angle = nxt.objects[nxt.index_of(ObjectKind.SPOON)].pose[2] if spec.task == TaskId.POUR else 0.0

    for arm in range(2):
        target = np.clip(action[list(_JOINT_DIMS[arm])], -JOINT_LIMIT, JOINT_LIMIT)
        move = np.clip(target - nxt.joints[arm], -spec.joint_rate_limit, spec.joint_rate_limit)
        nxt.joints[arm] = np.clip(nxt.joints[arm] + move, -JOINT_LIMIT, JOINT_LIMIT)
        grip = float(np.clip(action[_GRIPPER_DIMS[arm]], 0.0, 1.0))
        nxt.grippers[arm] = before[arm] + float(np.clip(grip - before[arm], -spec.gripper_rate, spec.gripper_rate))

    poses = end_effector_poses(nxt)
    for arm in range(2):
        if before[arm] < GRIP_THRESHOLD <= nxt.grippers[arm]:
            held = nxt.held_by(arm)
            if held is not None:
                del nxt.attachments[held]
        elif before[arm] >= GRIP_THRESHOLD > nxt.grippers[arm] and nxt.held_by(arm) is None:
            idx = _nearest_free_object(nxt, poses[arm][:2], spec.grasp_radius)
            if idx is not None:
                nxt.attachments[idx] = Attachment(arm, compose(inverse(poses[arm]), nxt.objects[idx].pose))
                logger.debug("arm %d grasped %s at tick %d", arm, nxt.objects[idx].kind.value, nxt.step_count)
    for idx, att in nxt.attachments.items():
        nxt.objects[idx].pose = compose(poses[att.arm], att.rel)

    if spec.task == TaskId.CLEAN:
        tube = nxt.objects[nxt.index_of(ObjectKind.TUBE)]
        tip = brush_tip(nxt.objects[nxt.index_of(ObjectKind.BRUSH)])
        _track_scrub(nxt.scrub, bore_coordinates(tube, tip)[0], in_bore(tube, tip))
    elif spec.task == TaskId.POUR:
        _powder_physics(nxt, spec, spoon_angle)

    nxt.step_count += 1
    return nxt


def perturb(state: SimState, magnitude: float) -> tuple[SimState, bool]:
    """Jolt the relative angle of the first held object by a seeded +-magnitude.

    Returns the new state and whether anything was held.
    """
    nxt = state.copy()
    if not nxt.attachments:
        return nxt, False
    if magnitude == 0:
        return nxt, True
    idx = min(nxt.attachments)
    att = nxt.attachments[idx]
    sign = 1.0 if np.random.default_rng([state.seed, state.step_count]).random() < 0.5 else -1.0
    att.rel = np.array([att.rel[0], att.rel[1], float(wrap_angle(att.rel[2] + sign * magnitude))])
    nxt.objects[idx].pose = compose(forward_kinematics(ARMS[att.arm], nxt.joints[att.arm]), att.rel)
    nxt.perturbed = True
    logger.debug("perturbed %s by %+.3f rad at tick %d", nxt.objects[idx].kind.value, sign * magnitude, nxt.step_count)
    return nxt, True

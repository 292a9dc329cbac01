"""Scripted demonstration experts.

Each task is a list of ``Phase`` waypoints. A phase names an end-effector pose
target per arm (``None`` holds the arm still), gripper commands, how tightly the
target must be reached and an optional completion predicate. The expert chases
targets with a synchronised position/heading carrot solved by pose IK, so the
command it emits is always a reachable joint configuration.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ..dataset import EpisodeRecord
from ..models.common import ACTION_DIM, LEFT_GRIPPER_DIM, LEFT_JOINT_DIMS, RIGHT_GRIPPER_DIM, RIGHT_JOINT_DIMS, PromptVariant, TaskId
from ..models.config import TaskSpec
from .kinematics import ARMS, JOINT_LIMIT, compose, forward_kinematics, inverse, rotation, solve_pose_ik, wrap_angle
from .render import render_views
from .state import LEFT, RIGHT, ObjectKind, SimState
from .tasks import (
    BRUSH_TIP,
    LEVEL_HEADING,
    PRESENT_POSE,
    SPOON_TIP,
    arrange_target_tube,
    evaluate_state,
    prompt_for,
    slot_positions,
    tube_mouth,
    unit,
)
from .world import perturb, reset, step

logger = logging.getLogger(__name__)

PoseTarget = Callable[[SimState], np.ndarray]
Predicate = Callable[[SimState], bool]

PRECISE_TOLERANCE = (0.002, 0.02)  # metres, radians
TRANSIT_TOLERANCE = (0.01, 0.05)
GRIPPER_TOLERANCE = 0.05
CARROT_STEP = 0.01
CARROT_TURN = 0.04
STUCK_TICKS = 100
PROGRESS_EPS = 1e-4
OPEN, CLOSED = 1.0, 0.0

_JOINT_DIMS = (LEFT_JOINT_DIMS, RIGHT_JOINT_DIMS)
_GRIPPER_DIMS = (LEFT_GRIPPER_DIM, RIGHT_GRIPPER_DIM)


@dataclass(frozen=True)
class Phase:
    name: str
    targets: tuple[PoseTarget | None, PoseTarget | None] = (None, None)
    grips: tuple[float | None, float | None] = (None, None)
    precise: bool = True
    noisy: bool = False
    until: Predicate | None = None
    settle: int = 0


def carrot(ee: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Intermediate pose at most one carrot step away, position and heading in lockstep."""
    d = target[:2] - ee[:2]
    turn = float(wrap_angle(target[2] - ee[2]))
    dist = float(np.hypot(*d))
    frac = 1.0
    if dist > 0:
        frac = min(frac, CARROT_STEP / dist)
    if turn != 0:
        frac = min(frac, CARROT_TURN / abs(turn))
    return np.array([ee[0] + frac * d[0], ee[1] + frac * d[1], ee[2] + frac * turn])


def ee_for_object(state: SimState, idx: int, goal: np.ndarray) -> np.ndarray:
    """End-effector pose that puts object ``idx`` at ``goal`` given its current grip."""
    att = state.attachments.get(idx)
    return goal if att is None else compose(goal, inverse(att.rel))


def _held(arm: int, idx: int) -> Predicate:
    return lambda s: s.held_by(arm) == idx


def _released(idx: int) -> Predicate:
    return lambda s: idx not in s.attachments


def _grasp_pose(idx: int, heading: float | None = None) -> PoseTarget:
    def target(s: SimState) -> np.ndarray:
        p = s.objects[idx].pose
        return np.array([p[0], p[1], p[2] if heading is None else heading])

    return target


def _clean_phases(state: SimState) -> list[Phase]:
    tube = state.index_of(ObjectKind.TUBE)
    brush = state.index_of(ObjectKind.BRUSH)
    rack = state.objects[state.index_of(ObjectKind.RACK)].pose.copy()
    left_grasp = _grasp_pose(tube, LEVEL_HEADING)
    right_grasp = _grasp_pose(brush)
    brush_grasp = state.objects[brush].pose.copy()

    def lift(s: SimState) -> np.ndarray:
        return ee_for_object(s, tube, np.array([rack[0], rack[1] + 0.08, LEVEL_HEADING]))

    def present(s: SimState) -> np.ndarray:
        return ee_for_object(s, tube, PRESENT_POSE)

    def along_bore(axial: float) -> PoseTarget:
        def target(s: SimState) -> np.ndarray:
            tube_pose = s.objects[tube].pose
            pos = tube_pose[:2] + (axial + BRUSH_TIP) * unit(tube_pose[2])
            return ee_for_object(s, brush, np.array([pos[0], pos[1], float(wrap_angle(tube_pose[2] + np.pi))]))

        return target

    def brush_clear(s: SimState) -> np.ndarray:
        return ee_for_object(s, brush, np.array([brush_grasp[0], brush_grasp[1] + 0.06, brush_grasp[2]]))

    phases = [
        Phase("reach", (left_grasp, right_grasp), (OPEN, OPEN)),
        Phase("grasp", (left_grasp, right_grasp), (CLOSED, CLOSED), until=lambda s: _held(LEFT, tube)(s) and _held(RIGHT, brush)(s), settle=2),
        Phase("lift", (lift, brush_clear), precise=False, noisy=True),
        Phase("present", (present, None)),
        Phase("align", (None, along_bore(0.09))),
        Phase("insert", (None, along_bore(-0.02))),
    ]
    phases += [Phase(f"scrub_{k}", (None, along_bore(0.02 if k % 2 == 0 else -0.03)), precise=False) for k in range(8)]
    phases.append(Phase("withdraw", (None, along_bore(0.10)), precise=False))
    return phases


def _arrange_phases(state: SimState) -> list[Phase]:
    tube = arrange_target_tube(state)
    rack = state.index_of(ObjectKind.RACK)
    grasp = _grasp_pose(tube, LEVEL_HEADING)

    def at_slot(lift: float) -> PoseTarget:
        def target(s: SimState) -> np.ndarray:
            goal = slot_positions(s.objects[rack])[1] + np.array([0.0, lift])
            att = s.attachments.get(tube)
            offset = rotation(LEVEL_HEADING) @ att.rel[:2] if att is not None else np.zeros(2)
            ee = goal - offset
            return np.array([ee[0], ee[1], LEVEL_HEADING])

        return target

    return [
        Phase("reach", (None, grasp), (None, OPEN)),
        Phase("grasp", (None, grasp), (None, CLOSED), until=_held(RIGHT, tube), settle=2),
        Phase("carry", (None, at_slot(-0.06)), precise=False, noisy=True),
        Phase("place", (None, at_slot(0.0))),
        Phase("release", (None, at_slot(0.0)), (None, OPEN), until=_released(tube), settle=2),
        Phase("retreat", (None, at_slot(-0.08)), precise=False, noisy=True),
    ]


def _pour_phases(state: SimState) -> list[Phase]:
    spoon = state.index_of(ObjectKind.SPOON)
    bin_idx = state.index_of(ObjectKind.BIN)
    tube = state.index_of(ObjectKind.TUBE)
    grasp = _grasp_pose(spoon, LEVEL_HEADING)

    def tip_at(point: Callable[[SimState], np.ndarray], angle: float) -> PoseTarget:
        def target(s: SimState) -> np.ndarray:
            pos = point(s) - SPOON_TIP * unit(angle)
            return ee_for_object(s, spoon, np.array([pos[0], pos[1], angle]))

        return target

    def bin_center(s: SimState) -> np.ndarray:
        return s.objects[bin_idx].pose[:2]

    def mouth(s: SimState) -> np.ndarray:
        return tube_mouth(s.objects[tube])

    def below_mouth(s: SimState) -> np.ndarray:
        return mouth(s) - np.array([0.0, 0.05])

    start = LEVEL_HEADING - 0.25
    phases = [
        Phase("reach", (None, grasp), (None, OPEN)),
        Phase("grasp", (None, grasp), (None, CLOSED), until=_held(RIGHT, spoon), settle=2),
        Phase("to_bin", (None, tip_at(bin_center, start)), precise=False, noisy=True),
        Phase("dip", (None, tip_at(bin_center, start))),
    ]
    phases += [Phase(f"sweep_{k}", (None, tip_at(bin_center, start + 0.1 * k))) for k in range(1, 6)]
    phases += [
        Phase("carry", (None, tip_at(below_mouth, LEVEL_HEADING)), precise=False, noisy=True),
        Phase("align", (None, tip_at(mouth, LEVEL_HEADING))),
    ]
    phases += [Phase(f"pour_{k}", (None, tip_at(mouth, LEVEL_HEADING + 0.1 * k))) for k in range(1, 10)]
    phases += [
        Phase("empty", (None, tip_at(mouth, LEVEL_HEADING + 0.9)), until=lambda s: s.powder.spoon <= 1e-9),
        Phase("level", (None, tip_at(below_mouth, LEVEL_HEADING)), precise=False),
    ]
    return phases


PHASE_BUILDERS: dict[TaskId, Callable[[SimState], list[Phase]]] = {
    TaskId.CLEAN: _clean_phases,
    TaskId.ARRANGE: _arrange_phases,
    TaskId.POUR: _pour_phases,
}


@dataclass
class ScriptedExpert:
    """Stateful waypoint controller; ``act`` maps a state to a raw 14-dim action."""

    spec: TaskSpec
    seed: int
    noise: float | None = None
    aborted: bool = False
    _phases: list[Phase] | None = field(default=None, repr=False)
    _index: int = 0
    _settled: int = 0
    _grips: list[float] = field(default_factory=lambda: [OPEN, OPEN])
    _best: float = float("inf")
    _idle: int = 0

    def __post_init__(self) -> None:
        if self.noise is None:
            self.noise = self.spec.expert_noise
        self._rng = np.random.default_rng([self.seed, 0xE7])

    @property
    def done(self) -> bool:
        return self._phases is not None and self._index >= len(self._phases)

    @property
    def phase(self) -> str | None:
        if self._phases is None or self.done:
            return None
        return self._phases[self._index].name

    def _progress(self, phase: Phase, state: SimState) -> tuple[float, bool]:
        tol_pos, tol_turn = PRECISE_TOLERANCE if phase.precise else TRANSIT_TOLERANCE
        remaining, reached = 0.0, True
        for arm, target_fn in enumerate(phase.targets):
            if target_fn is None:
                continue
            target = target_fn(state)
            ee = forward_kinematics(ARMS[arm], state.joints[arm])
            dist = float(np.hypot(*(target[:2] - ee[:2])))
            turn = float(abs(wrap_angle(target[2] - ee[2])))
            remaining += dist + 0.1 * turn
            reached = reached and dist <= tol_pos and turn <= tol_turn
        for arm in range(2):
            gap = abs(float(state.grippers[arm]) - self._grips[arm])
            remaining += gap
            reached = reached and gap <= GRIPPER_TOLERANCE
        if phase.until is not None:
            reached = reached and phase.until(state)
        return remaining, reached

    def _hold(self, state: SimState) -> np.ndarray:
        action = np.zeros(ACTION_DIM)
        for arm in range(2):
            action[list(_JOINT_DIMS[arm])] = state.joints[arm]
            action[_GRIPPER_DIMS[arm]] = self._grips[arm]
        return action

    def act(self, state: SimState) -> np.ndarray:
        if self._phases is None:
            self._phases = PHASE_BUILDERS[state.task](state)
        if self.aborted:
            return self._hold(state)
        while not self.done:
            phase = self._phases[self._index]
            for arm, grip in enumerate(phase.grips):
                if grip is not None:
                    self._grips[arm] = grip
            remaining, reached = self._progress(phase, state)
            if reached and self._settled >= phase.settle:
                self._index += 1
                self._settled, self._best, self._idle = 0, float("inf"), 0
                continue
            self._settled = self._settled + 1 if reached else 0
            if remaining < self._best - PROGRESS_EPS:
                self._best, self._idle = remaining, 0
            else:
                self._idle += 1
                if self._idle >= STUCK_TICKS:
                    self.aborted = True
                    logger.debug("expert stuck in phase %s at tick %d (seed %d)", phase.name, state.step_count, self.seed)
                    return self._hold(state)
            return self._command(phase, state)
        return self._hold(state)

    def _command(self, phase: Phase, state: SimState) -> np.ndarray:
        action = self._hold(state)
        for arm, target_fn in enumerate(phase.targets):
            if target_fn is None:
                continue
            ee = forward_kinematics(ARMS[arm], state.joints[arm])
            q = solve_pose_ik(ARMS[arm], state.joints[arm], carrot(ee, target_fn(state)))
            if phase.noisy and self.noise:
                q = q + self._rng.normal(0.0, self.noise, size=3)
            action[list(_JOINT_DIMS[arm])] = np.clip(q, -JOINT_LIMIT, JOINT_LIMIT)
        return action


def expert_action(expert: ScriptedExpert, state: SimState) -> np.ndarray:
    return expert.act(state)


@dataclass
class ExpertRollout:
    seed: int
    success: bool
    aborted: bool
    metrics: dict[str, float]
    final_state: SimState
    record: EpisodeRecord | None = None


def collect_episode(
    spec: TaskSpec,
    seed: int,
    resolution: int = 64,
    noise: float | None = None,
    variant: PromptVariant | None = None,
    render: bool = True,
    apply_perturbation: bool = False,
) -> ExpertRollout:
    """Run the scripted expert from reset until it finishes, aborts or hits the cap.

    With ``render`` the rollout also yields an ``EpisodeRecord`` (when it succeeded).
    """
    state = reset(spec, seed)
    expert = ScriptedExpert(spec, seed, noise)
    streams: list[list[np.ndarray]] = [[], [], []]
    actions: list[np.ndarray] = []
    for t in range(spec.cap):
        if apply_perturbation and not state.perturbed and t >= spec.perturb_step:
            state, _ = perturb(state, spec.perturb_magnitude)
        action = expert.act(state)
        if expert.aborted or expert.done:
            break
        if render:
            for stream, view in zip(streams, render_views(state, resolution), strict=True):
                stream.append(view)
        actions.append(action)
        state = step(state, action, spec)
    success, metrics = evaluate_state(state, spec)
    success = success and not expert.aborted and bool(actions)
    record = None
    if render and success:
        record = EpisodeRecord(
            task_id=spec.task,
            prompt_text=prompt_for(spec.task, variant or spec.prompt_variant, state.goal),
            rate_hz=spec.rate_hz,
            actions=np.stack(actions),
            frames=tuple(np.stack(stream) for stream in streams),
            seed=seed,
            goal=state.goal,
        )
    return ExpertRollout(seed, success, expert.aborted, metrics, state, record)

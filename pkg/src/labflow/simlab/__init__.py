"""Planar bimanual laboratory simulator.

Usage:
    from labflow.models import TaskSpec
    from labflow.simlab import collect_episode, render_views, reset, step

    spec = TaskSpec(task="pour")
    state = reset(spec, seed=0)
    views = render_views(state, resolution=64)
    rollout = collect_episode(spec, seed=0)
"""

from .experts import ExpertRollout, Phase, ScriptedExpert, collect_episode, expert_action
from .kinematics import ARMS, HOME_JOINTS, LEFT_ARM, RIGHT_ARM, ArmModel, forward_kinematics, ik_step, solve_ik, solve_pose_ik
from .render import render_views
from .state import LEFT, RIGHT, Attachment, ObjectKind, PowderState, ScrubTracker, SimObject, SimState
from .tasks import evaluate_state, evaluate_success, prompt_for
from .world import end_effector_poses, perturb, reset, step

__all__ = [
    # Kinematics
    "ArmModel",
    "ARMS",
    "LEFT_ARM",
    "RIGHT_ARM",
    "HOME_JOINTS",
    "forward_kinematics",
    "ik_step",
    "solve_ik",
    "solve_pose_ik",
    # State
    "SimState",
    "SimObject",
    "ObjectKind",
    "Attachment",
    "PowderState",
    "ScrubTracker",
    "LEFT",
    "RIGHT",
    # World
    "reset",
    "step",
    "perturb",
    "end_effector_poses",
    "render_views",
    # Tasks
    "prompt_for",
    "evaluate_state",
    "evaluate_success",
    # Experts
    "Phase",
    "ScriptedExpert",
    "expert_action",
    "ExpertRollout",
    "collect_episode",
]

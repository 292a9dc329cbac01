"""Planar 3-link arms: forward kinematics, Jacobians and damped-least-squares IK.

Poses are (x, y, heading) arrays. Joint 1 is absolute, joints 2 and 3 are relative
to the previous link, so the end-effector heading is the sum of the joints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

JOINT_LIMIT = np.pi
IK_DAMPING = 0.01
IK_MAX_STEP = 0.25  # rad, per joint per iteration
REACH_MARGIN = 5e-4


@dataclass(frozen=True)
class ArmModel:
    base: tuple[float, float]
    links: tuple[float, float, float] = (0.30, 0.25, 0.20)
    rate_limit: float = 0.05  # rad per tick

    def __post_init__(self) -> None:
        if any(length <= 0 for length in self.links):
            raise ValueError("link lengths must be positive")

    @property
    def max_reach(self) -> float:
        return float(sum(self.links))

    @property
    def min_reach(self) -> float:
        l1, l2, l3 = self.links
        return max(0.0, l1 - l2 - l3)


LEFT_ARM = ArmModel(base=(-0.25, 0.0))
RIGHT_ARM = ArmModel(base=(0.25, 0.0))
ARMS = (LEFT_ARM, RIGHT_ARM)

# Right home mirrors the left: (pi - q1, -q2, -q3).
HOME_JOINTS = np.array([[2.3, -0.9, -0.9], [np.pi - 2.3, 0.9, 0.9]])


def wrap_angle(a: float | np.ndarray) -> np.ndarray:
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pose a followed by pose b expressed in a's frame."""
    xy = a[:2] + rotation(a[2]) @ b[:2]
    return np.array([xy[0], xy[1], float(wrap_angle(a[2] + b[2]))])


def inverse(a: np.ndarray) -> np.ndarray:
    xy = -(rotation(-a[2]) @ a[:2])
    return np.array([xy[0], xy[1], float(wrap_angle(-a[2]))])


def link_points(arm: ArmModel, joints: np.ndarray) -> np.ndarray:
    """(4, 2) array: base, elbow, wrist, end effector."""
    angles = np.cumsum(joints)
    steps = np.asarray(arm.links)[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return np.vstack([np.asarray(arm.base), np.asarray(arm.base) + np.cumsum(steps, axis=0)])


def forward_kinematics(arm: ArmModel, joints: np.ndarray) -> np.ndarray:
    angles = np.cumsum(joints)
    x = arm.base[0] + sum(length * np.cos(a) for length, a in zip(arm.links, angles, strict=True))
    y = arm.base[1] + sum(length * np.sin(a) for length, a in zip(arm.links, angles, strict=True))
    return np.array([x, y, angles[-1]])


def position_jacobian(arm: ArmModel, joints: np.ndarray) -> np.ndarray:
    """(2, 3) derivative of the end-effector position."""
    angles = np.cumsum(joints)
    dx = -np.asarray(arm.links) * np.sin(angles)
    dy = np.asarray(arm.links) * np.cos(angles)
    # joint i moves every link from i onwards
    return np.stack([np.cumsum(dx[::-1])[::-1], np.cumsum(dy[::-1])[::-1]])


def _dls(jac: np.ndarray, err: np.ndarray, damping: float) -> np.ndarray:
    rows = jac.shape[0]
    dq = jac.T @ np.linalg.solve(jac @ jac.T + damping**2 * np.eye(rows), err)
    peak = np.max(np.abs(dq))
    return dq * (IK_MAX_STEP / peak) if peak > IK_MAX_STEP else dq


def clamp_to_reach(arm: ArmModel, target_xy: np.ndarray) -> tuple[np.ndarray, bool]:
    """Project a target into the reachable annulus; the flag is False when it had to move."""
    offset = np.asarray(target_xy, dtype=np.float64) - np.asarray(arm.base)
    r = float(np.hypot(*offset))
    lo, hi = arm.min_reach + REACH_MARGIN, arm.max_reach - REACH_MARGIN
    if lo <= r <= hi:
        return np.asarray(target_xy, dtype=np.float64), True
    direction = offset / r if r > 0 else np.array([1.0, 0.0])
    return np.asarray(arm.base) + direction * float(np.clip(r, lo, hi)), arm.min_reach <= r <= arm.max_reach


class IKStep(NamedTuple):
    joints: np.ndarray
    reachable: bool


def ik_step(arm: ArmModel, joints: np.ndarray, target_xy: np.ndarray, damping: float = IK_DAMPING) -> IKStep:
    """One damped-least-squares step of the end-effector position towards ``target_xy``."""
    goal, reachable = clamp_to_reach(arm, target_xy)
    err = goal - forward_kinematics(arm, joints)[:2]
    if not np.any(err):
        return IKStep(np.array(joints, dtype=np.float64), reachable)
    q = np.asarray(joints, dtype=np.float64) + _dls(position_jacobian(arm, joints), err, damping)
    return IKStep(np.clip(q, -JOINT_LIMIT, JOINT_LIMIT), reachable)


class IKResult(NamedTuple):
    joints: np.ndarray
    reachable: bool
    error: float
    iterations: int


def solve_ik(arm: ArmModel, joints: np.ndarray, target_xy: np.ndarray, iterations: int = 200, tol: float = 1e-4) -> IKResult:
    """Iterate ``ik_step``; ``error`` is the final distance to the (unclamped) target."""
    q = np.asarray(joints, dtype=np.float64)
    reachable = True
    for i in range(iterations):
        q, reachable = ik_step(arm, q, target_xy)
        if np.hypot(*(forward_kinematics(arm, q)[:2] - target_xy)) < tol:
            return IKResult(q, reachable, float(np.hypot(*(forward_kinematics(arm, q)[:2] - target_xy))), i + 1)
    return IKResult(q, reachable, float(np.hypot(*(forward_kinematics(arm, q)[:2] - target_xy))), iterations)


def solve_pose_ik(
    arm: ArmModel,
    joints: np.ndarray,
    pose: np.ndarray,
    iterations: int = 30,
    heading_weight: float = 0.2,
    tol: float = 1e-7,
) -> np.ndarray:
    """DLS on position and (wrapped) heading, warm-started from ``joints``."""
    q = np.asarray(joints, dtype=np.float64).copy()
    w = np.array([1.0, 1.0, heading_weight])
    for _ in range(iterations):
        current = forward_kinematics(arm, q)
        err = np.array([pose[0] - current[0], pose[1] - current[1], float(wrap_angle(pose[2] - current[2]))]) * w
        if np.max(np.abs(err)) < tol:
            break
        jac = np.vstack([position_jacobian(arm, q), np.ones((1, 3))]) * w[:, None]
        q = np.clip(q + _dls(jac, err, IK_DAMPING), -JOINT_LIMIT, JOINT_LIMIT)
    return q

"""Orthographic rasteriser for the front camera and the two wrist cameras."""

from __future__ import annotations

import numpy as np

from ..models.common import NUM_CAMERAS
from .kinematics import ARMS, link_points
from .state import ObjectKind, SimState
from .tasks import ARRANGE_TRAY, BIN_RADIUS, BRUSH_TIP, SLOT_SPACING, SPOON_TIP, TUBE_HALF_LENGTH, TUBE_WIDTH, slot_positions, unit
from .world import end_effector_poses

FRONT_CENTER = (0.0, 0.4)
FRONT_SPAN = 1.2
WRIST_SPAN = 0.30
LINK_RADIUS = 0.012

COLORS: dict[str, tuple[int, int, int]] = {
    "background": (0, 0, 0),
    "tray": (60, 60, 60),
    "rack": (128, 128, 128),
    "slot": (90, 90, 90),
    "cyan": (0, 255, 255),
    "white": (255, 255, 255),
    "brush": (255, 0, 255),
    "spoon": (255, 255, 0),
    "powder": (255, 140, 0),
    "bin": (120, 72, 30),
    "left_arm": (0, 200, 0),
    "right_arm": (0, 80, 255),
}
ARM_COLORS = ("left_arm", "right_arm")


class Canvas:
    """One square view: pixel-centre coordinates plus an RGB buffer."""

    def __init__(self, center: tuple[float, float], span: float, resolution: int):
        self.pixel = span / resolution
        offsets = (np.arange(resolution) + 0.5) * self.pixel - span / 2
        self.x, self.y = np.meshgrid(center[0] + offsets, center[1] - offsets)
        self.image = np.zeros((resolution, resolution, 3), dtype=np.uint8)

    def fill(self, mask: np.ndarray, color: str) -> None:
        self.image[mask] = COLORS[color]

    def capsule(self, a: np.ndarray, b: np.ndarray, radius: float, color: str) -> None:
        d = b - a
        length2 = float(d @ d)
        t = np.clip(((self.x - a[0]) * d[0] + (self.y - a[1]) * d[1]) / length2, 0.0, 1.0) if length2 > 0 else 0.0
        dist = np.hypot(self.x - (a[0] + t * d[0]), self.y - (a[1] + t * d[1]))
        self.fill(dist <= max(radius, 0.6 * self.pixel), color)

    def disk(self, center: np.ndarray, radius: float, color: str) -> None:
        self.fill(np.hypot(self.x - center[0], self.y - center[1]) <= max(radius, 0.6 * self.pixel), color)

    def box(self, center: np.ndarray, angle: float, length: float, width: float, color: str) -> None:
        u, n = unit(angle), unit(angle + np.pi / 2)
        dx, dy = self.x - center[0], self.y - center[1]
        half_l, half_w = max(length, self.pixel) / 2, max(width, self.pixel) / 2
        self.fill((np.abs(dx * u[0] + dy * u[1]) <= half_l) & (np.abs(dx * n[0] + dy * n[1]) <= half_w), color)


def _draw(canvas: Canvas, state: SimState) -> None:
    """Fixed painter's order: furniture, containers, tools, tubes, arms."""
    powder = state.powder
    for obj in state.objects:
        if obj.kind == ObjectKind.TRAY:
            canvas.box(obj.pose[:2], obj.pose[2], ARRANGE_TRAY[2], ARRANGE_TRAY[3], "tray")
    for obj in state.objects:
        if obj.kind == ObjectKind.BIN:
            canvas.disk(obj.pose[:2], BIN_RADIUS, "bin")
            if powder.total > 0 and powder.bin > 0:
                canvas.disk(obj.pose[:2], 0.9 * BIN_RADIUS * np.sqrt(powder.bin / powder.total), "powder")
    for obj in state.objects:
        if obj.kind == ObjectKind.RACK:
            canvas.box(obj.pose[:2] - np.array([0.0, 0.02]), obj.pose[2], 3 * SLOT_SPACING + 0.02, 0.02, "rack")
            for slot in slot_positions(obj):
                canvas.disk(slot - np.array([0.0, 0.02]), 0.006, "slot")
    for obj in state.objects:
        if obj.kind == ObjectKind.BRUSH:
            canvas.capsule(obj.pose[:2], obj.pose[:2] + BRUSH_TIP * unit(obj.pose[2]), 0.005, "brush")
        elif obj.kind == ObjectKind.SPOON:
            tip = obj.pose[:2] + SPOON_TIP * unit(obj.pose[2])
            canvas.capsule(obj.pose[:2], tip, 0.005, "spoon")
            canvas.disk(tip, 0.012, "powder" if powder.spoon > 0 else "spoon")
    for obj in state.objects:
        if obj.kind == ObjectKind.TUBE:
            u = unit(obj.pose[2])
            bottom, top = obj.pose[:2] - TUBE_HALF_LENGTH * u, obj.pose[:2] + TUBE_HALF_LENGTH * u
            canvas.capsule(bottom, top, TUBE_WIDTH / 2, obj.color or "cyan")
            if powder.tube > 0 and powder.total > 0:
                level = min(1.0, powder.tube / powder.total * 4)
                canvas.capsule(bottom, bottom + level * (top - bottom), TUBE_WIDTH / 4, "powder")
    ee_poses = end_effector_poses(state)
    for arm_idx, arm in enumerate(ARMS):
        color = ARM_COLORS[arm_idx]
        points = link_points(arm, state.joints[arm_idx])
        for a, b in zip(points[:-1], points[1:], strict=True):
            canvas.capsule(a, b, LINK_RADIUS, color)
        ee = ee_poses[arm_idx]
        u, n = unit(ee[2]), unit(ee[2] + np.pi / 2)
        spread = 0.008 + 0.012 * float(state.grippers[arm_idx])
        for side in (-1.0, 1.0):
            base = ee[:2] + side * spread * n
            canvas.capsule(base, base + 0.02 * u, 0.003, color)


def render_views(state: SimState, resolution: int = 64) -> np.ndarray:
    """(3, res, res, 3) uint8: front, left wrist, right wrist."""
    ee_poses = end_effector_poses(state)
    canvases = [Canvas(FRONT_CENTER, FRONT_SPAN, resolution)]
    canvases += [Canvas((float(ee[0]), float(ee[1])), WRIST_SPAN, resolution) for ee in ee_poses]
    for canvas in canvases:
        _draw(canvas, state)
    views = np.stack([canvas.image for canvas in canvases])
    assert views.shape[0] == NUM_CAMERAS
    return views

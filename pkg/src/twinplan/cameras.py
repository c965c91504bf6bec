"""Pinhole cameras and the four-view rig (front, left, right, top-down)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Pose

VIEW_NAMES = ("front", "left", "right", "top_down")

# Viewing (optical-axis) direction of each canonical camera in world frame.
VIEW_DIRECTIONS = {
    "front": np.array([0.0, 1.0, 0.0]),
    "left": np.array([1.0, 0.0, 0.0]),
    "right": np.array([-1.0, 0.0, 0.0]),
    "top_down": np.array([0.0, 0.0, -1.0]),
}


class DegenerateWorkspaceError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """World-from-camera pose plus pinhole intrinsics. Camera looks along its +z."""

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("require 0 < near < far")
        if self.width < 16 or self.height < 16:
            raise ValueError("image dimensions must be >= 16")


@dataclass(frozen=True)
class CameraRig:
    front: Camera
    left: Camera
    right: Camera
    top_down: Camera

    def __getitem__(self, name: str) -> Camera:
        if name not in VIEW_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def items(self):
        return [(name, getattr(self, name)) for name in VIEW_NAMES]


def project(point: np.ndarray, camera: Camera) -> Optional[Tuple[np.ndarray, float]]:
    """Project a world point; returns (pixel, depth) or None when behind the camera."""
    p = camera.pose.matrix().T @ (np.asarray(point, dtype=float) - camera.pose.position)
    z = p[2]
    if z <= camera.near:
        return None
    px = camera.fx * p[0] / z + camera.cx
    py = camera.fy * p[1] / z + camera.cy
    return np.array([px, py]), float(z)


def world_to_camera(points: np.ndarray, camera: Camera) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return (pts - camera.pose.position) @ camera.pose.matrix()


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray) -> Pose:
    """World-from-camera pose with +z toward target and image-up along `up`."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("look_at: eye coincides with target")
    forward = forward / n
    right = np.cross(forward, np.asarray(up, dtype=float))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("look_at: up vector parallel to view direction")
    right = right / rn
    down = np.cross(forward, right)
    r = np.column_stack([right, down, forward])
    return Pose(eye, Rotation.from_matrix(r).as_quat())


def default_rig(ws_min: np.ndarray, ws_max: np.ndarray,
                width: int = 256, height: int = 256) -> CameraRig:
    """Place the four canonical cameras at 1.5x the workspace diagonal from its center."""
    ws_min = np.asarray(ws_min, dtype=float)
    ws_max = np.asarray(ws_max, dtype=float)
    diag = float(np.linalg.norm(ws_max - ws_min))
    if diag < 1e-12:
        raise DegenerateWorkspaceError("degenerate workspace: zero diagonal")
    center = 0.5 * (ws_min + ws_max)
    dist = 1.5 * diag
    placements = {
        "front": (center + dist * np.array([0.0, -1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
        "left": (center + dist * np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
        "right": (center + dist * np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
        "top_down": (center + dist * np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])),
    }
    cams = {}
    for name, (eye, up) in placements.items():
        cams[name] = Camera(
            pose=look_at(eye, center, up),
            fx=float(width), fy=float(width),
            cx=width / 2.0, cy=height / 2.0,
            width=width, height=height,
            near=0.01, far=dist + 2.0 * diag,
        )
    return CameraRig(**cams)

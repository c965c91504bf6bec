"""Rigid-transform primitives: unit quaternions (scalar-last) and 3D poses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

QUAT_NORM_TOL = 1e-6


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if n < QUAT_NORM_TOL:
        raise ValueError("quaternion norm too small to normalize")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for scalar-last quaternions."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (unit quaternion, scalar-last x,y,z,w) + translation."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        q = normalize_quat(self.orientation)
        pos.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.orientation)

    def matrix(self) -> np.ndarray:
        return self.rotation().as_matrix()

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.matrix() @ np.asarray(p, dtype=float) + self.position

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.matrix().T + self.position

    def compose(self, other: "Pose") -> "Pose":
        """Frame composition: (self o other), i.e. other expressed through self."""
        return Pose(
            self.position + self.matrix() @ other.position,
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        ri = Rotation.from_quat(qi)
        return Pose(-(ri.apply(self.position)), qi)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        if np.max(np.abs(self.position - other.position)) > tol:
            return False
        # q and -q are the same rotation
        d = min(
            float(np.max(np.abs(self.orientation - other.orientation))),
            float(np.max(np.abs(self.orientation + other.orientation))),
        )
        return d <= max(tol, 1e-8)


def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(v, dtype=float)).as_quat()


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(q).as_rotvec()


def canonical_rotvec(v: np.ndarray) -> np.ndarray:
    """Canonicalize an axis-angle vector to magnitude <= pi.

    At exactly pi the two antipodal representations are equivalent; we pick the
    one whose first nonzero component is positive.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    m = float(np.linalg.norm(v))
    if m < 1e-15:
        return np.zeros(3)
    if m > np.pi + 1e-12:
        v = Rotation.from_rotvec(v).as_rotvec()
        m = float(np.linalg.norm(v))
    if abs(m - np.pi) < 1e-9:
        for c in v:
            if abs(c) > 1e-12:
                if c < 0:
                    v = -v
                break
    return v


def interp_pose(a: Pose, b: Pose, f: float) -> Pose:
    """Linear position interpolation + shortest-arc orientation interpolation."""
    pos = (1.0 - f) * a.position + f * b.position
    ra = a.rotation()
    rb = b.rotation()
    delta = canonical_rotvec((ra.inv() * rb).as_rotvec())
    q = (ra * Rotation.from_rotvec(f * delta)).as_quat()
    return Pose(pos, q)


def delta_between(old: Pose, new: Pose) -> Pose:
    """World-frame rigid delta taking `old` to `new`, expressed about old's origin.

    Applying: position' = position + delta.position;
    orientation' = delta.orientation * orientation;
    an attached point p maps to old.position + R_delta (p - old.position) + delta.position.
    """
    rot = quat_mul(new.orientation, quat_conj(old.orientation))
    return Pose(new.position - old.position, rot)


def apply_delta(pose: Pose, delta: Pose) -> Pose:
    return Pose(pose.position + delta.position,
                quat_mul(delta.orientation, pose.orientation))


def delta_inverse(delta: Pose) -> Pose:
    return Pose(-delta.position, quat_conj(delta.orientation))


def delta_apply_points(delta: Pose, pivot: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a body delta (rotation about `pivot`, then translation) to points."""
    pts = np.asarray(pts, dtype=float)
    r = Rotation.from_quat(delta.orientation).as_matrix()
    return (pts - pivot) @ r.T + pivot + delta.position


def quat_chordal_mean(quats: np.ndarray) -> np.ndarray:
    """Chordal L2 mean of unit quaternions: principal eigenvector of sum(q q^T)."""
    quats = np.asarray(quats, dtype=float).reshape(-1, 4)
    m = quats.T @ quats
    w, v = np.linalg.eigh(m)
    q = v[:, -1]
    # fix sign deterministically: scalar part non-negative, then first nonzero positive
    if q[3] < 0:
        q = -q
    elif q[3] == 0:
        for c in q:
            if c != 0:
                if c < 0:
                    q = -q
                break
    return normalize_quat(q)

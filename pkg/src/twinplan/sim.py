"""Quasi-static rigid-body simulator for the free-flying two-finger gripper.

Action-conditioned state transitions: the gripper interpolates to its target
over substeps; grasping attaches nearby graspable bodies, penetration either
pushes movable obstacles along the minimum-translation normal or blocks the
motion, and unsupported movable bodies settle straight down.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (Pose, canonical_rotvec, delta_between, interp_pose,
                       rotvec_to_quat)
from .scene import (Box, Cylinder, Mesh, RigidBody, SceneTwin, Sphere,
                    apply_transforms, surface_distance)

# Fixed two-finger gripper geometry (full extents 0.01 x 0.04 x 0.08 m per finger).
FINGER_HALF_EXTENTS = np.array([0.005, 0.02, 0.04])
FINGER_OFFSET_OPEN = 0.045
FINGER_OFFSET_CLOSED = 0.012
FINGER_CENTER_Z = 0.04  # tool point sits midway between the fingertips

SUPPORT_CONTACT_TOL = 1e-3


@dataclass(frozen=True)
class Action:
    """7-dim action: target position, target orientation (axis-angle), finger scalar."""

    position: np.ndarray
    rotvec: np.ndarray
    finger: float

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotvec",
                           np.asarray(self.rotvec, dtype=float).reshape(3))
        object.__setattr__(self, "finger", float(self.finger))

    @property
    def fingers_closed(self) -> bool:
        return self.finger >= 0.5


def canonicalize_action(action: Action, ws_min: np.ndarray,
                        ws_max: np.ndarray) -> Action:
    pos = np.clip(action.position, ws_min, ws_max)
    return Action(pos, canonical_rotvec(action.rotvec),
                  min(max(action.finger, 0.0), 1.0))


@dataclass(frozen=True)
class GripperState:
    pose: Pose
    fingers: str = "open"  # "open" | "closed"
    held: Optional[str] = None

    def __post_init__(self):
        if self.fingers not in ("open", "closed"):
            raise ValueError(f"bad finger state {self.fingers!r}")
        if self.held is not None and self.fingers != "closed":
            raise ValueError("held body requires closed fingers")

    @property
    def tool_point(self) -> np.ndarray:
        return self.pose.position


@dataclass(frozen=True)
class SimConfig:
    grasp_radius: float = 0.03
    push_enabled: bool = True
    max_penetration: float = 1e-4
    settle_enabled: bool = True
    substeps: int = 20

    def __post_init__(self):
        if self.grasp_radius <= 0:
            raise ValueError("grasp_radius must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class ContactEvent:
    kind: str  # grasp | release | push | blocked | drop
    body: str
    step_fraction: float


def finger_obbs(pose: Pose, closed: bool) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """World-frame (center, rotation, half_extents) for the two finger boxes."""
    sep = FINGER_OFFSET_CLOSED if closed else FINGER_OFFSET_OPEN
    r = pose.matrix()
    out = []
    for sign in (-1.0, 1.0):
        local = np.array([sign * sep, 0.0, FINGER_CENTER_Z])
        out.append((pose.position + r @ local, r, FINGER_HALF_EXTENTS.copy()))
    return out


# ---------------------------------------------------------------------------
# collision primitives


def _body_collider(body: RigidBody, pose: Pose):
    s = body.shape
    if isinstance(s, Sphere):
        return ("sphere", pose.position, s.radius)
    if isinstance(s, Box):
        return ("obb", pose.position, pose.matrix(), s.half_extents)
    if isinstance(s, Cylinder):
        return ("obb", pose.position, pose.matrix(),
                np.array([s.radius, s.radius, s.half_height]))
    if isinstance(s, Mesh):
        verts = pose.transform_points(s.vertices)
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        return ("obb", 0.5 * (lo + hi), np.eye(3),
                np.maximum(0.5 * (hi - lo), 1e-6))
    raise TypeError(type(s))


def _obb_obb_penetration(ca, ra, ha, cb, rb, hb):
    """SAT minimum-translation test; returns (depth, normal a->b) or None."""
    d = cb - ca
    axes = []
    for i in range(3):
        axes.append(ra[:, i])
    for i in range(3):
        axes.append(rb[:, i])
    for i in range(3):
        for j in range(3):
            c = np.cross(ra[:, i], rb[:, j])
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    best = np.inf
    best_axis = None
    for axis in axes:
        proj_a = float(np.abs(axis @ ra) @ ha)
        proj_b = float(np.abs(axis @ rb) @ hb)
        dist = float(axis @ d)
        overlap = proj_a + proj_b - abs(dist)
        if overlap <= 0:
            return None
        if overlap < best:
            best = overlap
            best_axis = axis if dist >= 0 else -axis
    return best, best_axis


def _sphere_obb_penetration(cs, r, cb, rb, hb):
    local = rb.T @ (cs - cb)
    clamped = np.clip(local, -hb, hb)
    if np.all(np.abs(local) < hb):
        # sphere center inside the box: exit through the nearest face
        gaps = hb - np.abs(local)
        j = int(np.argmin(gaps))
        depth = r + float(gaps[j])
        # direction from box toward the sphere, through the nearest face
        return depth, rb[:, j] * (1.0 if local[j] >= 0 else -1.0)
    diff = local - clamped
    dist = float(np.linalg.norm(diff))
    if dist >= r:
        return None
    if dist < 1e-12:
        return r, np.array([0.0, 0.0, 1.0])
    return r - dist, rb @ (diff / dist)


def _pair_penetration(col_a, col_b):
    """Penetration between colliders; returns (depth, normal pushing b away from a)."""
    ka, kb = col_a[0], col_b[0]
    if ka == "sphere" and kb == "sphere":
        _, ca, ra = col_a
        _, cb, rb = col_b
        d = cb - ca
        dist = float(np.linalg.norm(d))
        depth = ra + rb - dist
        if depth <= 0:
            return None
        n = d / dist if dist > 1e-12 else np.array([0.0, 0.0, 1.0])
        return depth, n
    if ka == "sphere" and kb == "obb":
        res = _sphere_obb_penetration(col_a[1], col_a[2], col_b[1], col_b[2], col_b[3])
        if res is None:
            return None
        depth, n_box_to_sphere = res
        return depth, -n_box_to_sphere  # push the box away from the sphere
    if ka == "obb" and kb == "sphere":
        res = _sphere_obb_penetration(col_b[1], col_b[2], col_a[1], col_a[2], col_a[3])
        if res is None:
            return None
        depth, n_box_to_sphere = res
        return depth, n_box_to_sphere
    if ka == "obb" and kb == "obb":
        return _obb_obb_penetration(col_a[1], col_a[2], col_a[3],
                                    col_b[1], col_b[2], col_b[3])
    raise TypeError((ka, kb))


def _collider_aabb(col):
    if col[0] == "sphere":
        _, c, r = col
        return c - r, c + r
    _, c, rot, h = col
    ext = np.abs(rot) @ h
    return c - ext, c + ext


def _aabb_overlap(a, b, margin=0.0) -> bool:
    return bool(np.all(a[0] - margin <= b[1]) and np.all(b[0] - margin <= a[1]))


def world_aabb(body: RigidBody, pose: Pose) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(body.shape, Mesh):
        verts = pose.transform_points(body.shape.vertices)
        return verts.min(axis=0), verts.max(axis=0)
    return _collider_aabb(_body_collider(body, pose))


# ---------------------------------------------------------------------------
# simulate_step


def _resolve_collisions(poses: Dict[str, Pose], scene: SceneTwin,
                        gripper_pose: Pose, fingers_closed: bool,
                        held: Optional[str], config: SimConfig):
    """Project movable obstacles out of penetration; report first unresolvable hit.

    Returns (ok, pushed_ids, blocker_id). Modifies `poses` in place when pushing.
    """
    bodies = sorted(scene.bodies, key=lambda b: b.id)
    pushed: List[str] = []

    def colliders_of(bid: str):
        body = scene.body(bid)
        return [(_body_collider(body, poses[bid]), bid)]

    hit = None
    for _ in range(12):
        # refresh moved colliders each pass
        mover_cols = [(("obb",) + obb, None)
                      for obb in finger_obbs(gripper_pose, fingers_closed)]
        if held is not None:
            mover_cols += colliders_of(held)
        for bid in pushed:
            mover_cols += colliders_of(bid)

        hit = None
        for col, src in mover_cols:
            a_lo_hi = _collider_aabb(col)
            for body in bodies:
                if body.id == held or body.id == src:
                    continue
                if src is not None and body.id in pushed:
                    continue  # pushed-vs-pushed handled via mover list symmetry
                other = _body_collider(body, poses[body.id])
                if not _aabb_overlap(a_lo_hi, _collider_aabb(other),
                                     margin=config.max_penetration):
                    continue
                res = _pair_penetration(col, other)
                if res is not None and res[0] > config.max_penetration:
                    hit = (body, res)
                    break
            if hit:
                break
        if hit is None:
            return True, pushed, None
        body, (depth, normal) = hit
        if body.movable and config.push_enabled:
            poses[body.id] = Pose(poses[body.id].position + depth * normal,
                                  poses[body.id].orientation)
            if body.id not in pushed:
                pushed.append(body.id)
        else:
            return False, pushed, body.id
    # could not converge: treat as blocked on the last offender
    return False, pushed, hit[0].id


def _settle(poses: Dict[str, Pose], scene: SceneTwin, held: Optional[str],
            events: List[ContactEvent]) -> None:
    movable = [b for b in scene.bodies if b.movable and b.id != held]
    movable.sort(key=lambda b: (world_aabb(b, poses[b.id])[0][2], b.id))
    for body in movable:
        lo, hi = world_aabb(body, poses[body.id])
        bottom = float(lo[2])
        if bottom <= scene.support_plane_z + SUPPORT_CONTACT_TOL:
            continue
        target = scene.support_plane_z
        for other in scene.bodies:
            if other.id == body.id:
                continue
            olo, ohi = world_aabb(other, poses[other.id])
            xy_overlap = (lo[0] < ohi[0] and olo[0] < hi[0]
                          and lo[1] < ohi[1] and olo[1] < hi[1])
            if xy_overlap and ohi[2] <= bottom + 1e-9:
                target = max(target, float(ohi[2]))
        gap = bottom - target
        if gap > SUPPORT_CONTACT_TOL:
            p = poses[body.id]
            poses[body.id] = Pose(p.position - np.array([0.0, 0.0, gap]),
                                  p.orientation)
            events.append(ContactEvent("drop", body.id, 1.0))


def simulate_step(scene: SceneTwin, gripper: GripperState, action: Action,
                  config: SimConfig) -> Tuple[Dict[str, Pose], GripperState,
                                              List[ContactEvent]]:
    """One action-conditioned transition; pure with respect to all inputs."""
    action = canonicalize_action(action, scene.workspace_min, scene.workspace_max)
    poses: Dict[str, Pose] = {b.id: b.pose for b in scene.bodies}
    start_poses = dict(poses)
    events: List[ContactEvent] = []

    g_pose = gripper.pose
    fingers_closed = gripper.fingers == "closed"
    held = gripper.held

    want_closed = action.fingers_closed
    if want_closed and not fingers_closed:
        fingers_closed = True
        best = None
        for body in sorted(scene.bodies, key=lambda b: b.id):
            if not body.graspable:
                continue
            d = surface_distance(g_pose.position, body, poses[body.id])
            if d <= config.grasp_radius and (best is None or d < best[0] - 1e-15):
                best = (d, body.id)
        if best is not None:
            held = best[1]
            events.append(ContactEvent("grasp", held, 0.0))
    elif not want_closed and fingers_closed:
        fingers_closed = False
        if held is not None:
            events.append(ContactEvent("release", held, 0.0))
            held = None

    rel = None
    if held is not None:
        rel = g_pose.inverse().compose(poses[held])

    target = Pose(action.position, rotvec_to_quat(action.rotvec))
    start = g_pose
    pushed_seen = set()
    for i in range(1, config.substeps + 1):
        f = i / config.substeps
        cand = interp_pose(start, target, f)
        snapshot = dict(poses)
        prev_g = g_pose
        g_pose = cand
        if held is not None:
            poses[held] = g_pose.compose(rel)
        ok, pushed, blocker = _resolve_collisions(
            poses, scene, g_pose, fingers_closed, held, config)
        if not ok:
            poses = snapshot
            g_pose = prev_g
            events.append(ContactEvent(
                "blocked", blocker, (i - 1) / config.substeps))
            break
        for pid in pushed:
            if pid not in pushed_seen:
                pushed_seen.add(pid)
                events.append(ContactEvent("push", pid, f))

    if config.settle_enabled:
        _settle(poses, scene, held, events)

    deltas: Dict[str, Pose] = {}
    for body in scene.bodies:
        if not body.movable:
            continue
        old, new = start_poses[body.id], poses[body.id]
        if not (np.array_equal(old.position, new.position)
                and np.array_equal(old.orientation, new.orientation)):
            deltas[body.id] = delta_between(old, new)

    new_gripper = GripperState(g_pose, "closed" if fingers_closed else "open", held)
    return deltas, new_gripper, events


def rollout(scene: SceneTwin, gripper: GripperState, actions: Sequence[Action],
            config: SimConfig) -> Tuple[SceneTwin, GripperState, List[ContactEvent]]:
    """Fold simulate_step + apply_transforms over an action sequence."""
    trace: List[ContactEvent] = []
    for action in actions:
        deltas, gripper, events = simulate_step(scene, gripper, action, config)
        scene = apply_transforms(scene, deltas)
        trace.extend(events)
    return scene, gripper, trace


# ---------------------------------------------------------------------------
# success predicates


def _in_region(p: np.ndarray, region: dict) -> bool:
    lo = np.asarray(region["min"], dtype=float)
    hi = np.asarray(region["max"], dtype=float)
    return bool(np.all(p >= lo) and np.all(p <= hi))


def eval_predicate(pred: dict, poses: Dict[str, Pose],
                   gripper: GripperState) -> bool:
    t = pred["type"]
    if t == "body_in_region":
        return _in_region(poses[pred["body"]].position, pred["region"])
    if t == "body_near_body":
        d = np.linalg.norm(poses[pred["a"]].position - poses[pred["b"]].position)
        return bool(d <= pred["threshold"])
    if t == "gripper_in_region":
        return _in_region(gripper.tool_point, pred["region"])
    if t == "body_displaced":
        ref = np.asarray(pred["reference"], dtype=float)
        d = np.linalg.norm(poses[pred["body"]].position - ref)
        return bool(d >= pred["min_displacement"])
    if t == "gripper_near_body":
        d = np.linalg.norm(poses[pred["body"]].position - gripper.tool_point)
        return bool(d <= pred["threshold"])
    if t == "gripper_holding":
        return gripper.held == pred["body"]
    raise ValueError(f"unknown predicate type '{t}'")


def check_success(scene: SceneTwin, gripper: GripperState) -> bool:
    poses = {b.id: b.pose for b in scene.bodies}
    return eval_predicate(scene.task.success, poses, gripper)


def initial_gripper_state(scene: SceneTwin) -> GripperState:
    """Deterministic episode start: centered over the workspace, fingers open."""
    c = 0.5 * (scene.workspace_min + scene.workspace_max)
    z = scene.workspace_min[2] + 0.6 * (scene.workspace_max[2] - scene.workspace_min[2])
    return GripperState(Pose(np.array([c[0], c[1], z]),
                             np.array([0.0, 0.0, 0.0, 1.0])))

"""Digital-twin scene model: rigid bodies, anchored splat points, scene file IO."""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .cameras import Camera, CameraRig, VIEW_NAMES
from .geometry import Pose, delta_apply_points, apply_delta

STATIC = "STATIC"

DEFAULT_ANCHOR_THRESHOLD = 0.05

PREDICATE_TYPES = (
    "body_in_region",
    "body_near_body",
    "gripper_in_region",
    "body_displaced",
    "gripper_near_body",
    "gripper_holding",
)


class SceneError(Exception):
    pass


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Box:
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(h <= 0):
            raise SceneValidationError("box half-extents must be positive")
        h.flags.writeable = False
        object.__setattr__(self, "half_extents", h)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise SceneValidationError("sphere radius must be positive")


@dataclass(frozen=True)
class Cylinder:
    radius: float
    half_height: float

    def __post_init__(self):
        if self.radius <= 0 or self.half_height <= 0:
            raise SceneValidationError("cylinder dimensions must be positive")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        if len(v) < 4 or len(f) < 4:
            raise SceneValidationError("mesh needs >= 4 vertices and >= 4 faces")
        if f.min() < 0 or f.max() >= len(v):
            raise SceneValidationError("mesh face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


Shape = Union[Box, Sphere, Cylinder, Mesh]


@dataclass(frozen=True)
class RigidBody:
    id: str
    shape: Shape
    pose: Pose
    movable: bool = False
    graspable: bool = False

    def __post_init__(self):
        if self.graspable and not self.movable:
            raise SceneValidationError(
                f"body '{self.id}': graspable implies movable")


def surface_distance(point: np.ndarray, body: RigidBody,
                     pose: Optional[Pose] = None) -> float:
    """Distance from a world point to the body's surface (0 when inside).

    Exact for primitives; nearest-vertex distance for triangle meshes.
    """
    return float(surface_distances(np.asarray(point, dtype=float)[None, :],
                                   body, pose)[0])


def surface_distances(points: np.ndarray, body: RigidBody,
                      pose: Optional[Pose] = None) -> np.ndarray:
    pose = pose if pose is not None else body.pose
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    local = (pts - pose.position) @ pose.matrix()
    s = body.shape
    if isinstance(s, Sphere):
        d = np.linalg.norm(local, axis=1) - s.radius
    elif isinstance(s, Box):
        q = np.abs(local) - s.half_extents
        d = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    elif isinstance(s, Cylinder):
        dr = np.linalg.norm(local[:, :2], axis=1) - s.radius
        dz = np.abs(local[:, 2]) - s.half_height
        q = np.stack([dr, dz], axis=1)
        d = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    elif isinstance(s, Mesh):
        # nearest-vertex distance, chunked to bound memory
        d = np.full(len(local), np.inf)
        verts = s.vertices
        for i in range(0, len(local), 4096):
            blk = local[i:i + 4096]
            diff = blk[:, None, :] - verts[None, :, :]
            d[i:i + 4096] = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    else:
        raise TypeError(f"unknown shape {type(s)}")
    return np.maximum(d, 0.0)


# ---------------------------------------------------------------------------
# splats


@dataclass(frozen=True)
class SplatPoint:
    position: np.ndarray
    color: np.ndarray  # RGB, 0-255
    radius: float
    opacity: float
    anchor: Optional[str] = None  # body id, STATIC, or None (not yet anchored)


@dataclass
class SplatCloud:
    """Struct-of-arrays splat storage; treated as immutable after load."""

    positions: np.ndarray  # (N, 3) float
    colors: np.ndarray  # (N, 3) uint8
    radii: np.ndarray  # (N,) float
    opacities: np.ndarray  # (N,) float
    anchors: List[Optional[str]]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(n, 3)
        self.radii = np.asarray(self.radii, dtype=float).reshape(n)
        self.opacities = np.asarray(self.opacities, dtype=float).reshape(n)
        if len(self.anchors) != n:
            raise SceneValidationError("splat anchor list length mismatch")
        if n and (np.any(self.radii <= 0) or np.any(self.opacities <= 0)
                  or np.any(self.opacities > 1)):
            raise SceneValidationError(
                "splat radius must be > 0 and opacity in (0, 1]")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "SplatCloud":
        return SplatCloud(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8),
                          np.zeros(0), np.zeros(0), [])

    @staticmethod
    def from_points(points: Sequence[SplatPoint]) -> "SplatCloud":
        if not points:
            return SplatCloud.empty()
        return SplatCloud(
            np.array([p.position for p in points], dtype=float),
            np.array([p.color for p in points], dtype=np.uint8),
            np.array([p.radius for p in points], dtype=float),
            np.array([p.opacity for p in points], dtype=float),
            [p.anchor for p in points],
        )

    def point(self, i: int) -> SplatPoint:
        return SplatPoint(self.positions[i].copy(), self.colors[i].copy(),
                          float(self.radii[i]), float(self.opacities[i]),
                          self.anchors[i])


def anchor_splats(splats: SplatCloud, bodies: Sequence[RigidBody],
                  threshold: float) -> SplatCloud:
    """Assign each splat to the nearest movable body surface within `threshold`.

    Splats farther than the threshold from every movable body become STATIC
    background. Ties break toward the lexicographically smallest body id.
    """
    if threshold <= 0:
        raise ValueError("anchor threshold must be positive")
    n = len(splats)
    if n == 0:
        return dataclasses.replace(splats, anchors=[])
    movable = sorted((b for b in bodies if b.movable), key=lambda b: b.id)
    anchors: List[Optional[str]] = [STATIC] * n
    if movable:
        best = np.full(n, np.inf)
        best_id = np.full(n, -1, dtype=int)
        for k, body in enumerate(movable):
            d = surface_distances(splats.positions, body)
            better = d < best - 1e-15
            # exact ties keep the earlier (lexicographically smaller) id
            best_id[better] = k
            best[better] = d[better]
        for i in range(n):
            if best[i] <= threshold:
                anchors[i] = movable[best_id[i]].id
    return dataclasses.replace(splats, anchors=anchors)


# ---------------------------------------------------------------------------
# task


@dataclass(frozen=True)
class Subtask:
    text: str
    goal: Optional[dict] = None  # [x,y,z] or {"body": id, "offset": [dx,dy,dz]}
    goal_body: str = "gripper"
    done: Optional[dict] = None  # success-predicate record


@dataclass(frozen=True)
class TaskSpec:
    instruction: str
    success: dict  # declarative success-predicate record
    oracle_goal: Optional[np.ndarray] = None
    oracle_scoring: str = "distance_to_goal"  # or "progress"
    goal_body: str = "gripper"
    needs_fingers: bool = True
    needs_rotation: bool = True
    subtasks: tuple = ()


# ---------------------------------------------------------------------------
# scene


@dataclass(frozen=True)
class SceneTwin:
    bodies: tuple  # of RigidBody
    splats: SplatCloud
    cameras: CameraRig
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    support_plane_z: float
    anchor_threshold_m: float
    task: TaskSpec

    def body(self, body_id: str) -> RigidBody:
        for b in self.bodies:
            if b.id == body_id:
                return b
        raise KeyError(body_id)

    def body_ids(self) -> List[str]:
        return [b.id for b in self.bodies]


BodyTransformSet = Dict[str, Pose]  # body id -> rigid delta about the prior pose


def apply_transforms(scene: SceneTwin, t: BodyTransformSet) -> SceneTwin:
    """Apply per-body rigid deltas; anchored splats follow their body. Pure."""
    if not t:
        return scene
    by_id = {b.id: b for b in scene.bodies}
    for bid in t:
        if bid not in by_id:
            raise SceneValidationError(f"transform targets unknown body '{bid}'")
        if not by_id[bid].movable:
            raise SceneValidationError(f"transform targets immovable body '{bid}'")
    bodies = tuple(
        dataclasses.replace(b, pose=apply_delta(b.pose, t[b.id])) if b.id in t else b
        for b in scene.bodies
    )
    splats = scene.splats
    if len(splats):
        anchors = np.array([a if a is not None else STATIC for a in splats.anchors])
        positions = None
        for bid, delta in t.items():
            mask = anchors == bid
            if not mask.any():
                continue
            if positions is None:
                positions = splats.positions.copy()
            pivot = by_id[bid].pose.position
            positions[mask] = delta_apply_points(delta, pivot, positions[mask])
        if positions is not None:
            splats = dataclasses.replace(splats, positions=positions)
    return dataclasses.replace(scene, bodies=bodies, splats=splats)


# ---------------------------------------------------------------------------
# validation and (de)serialization


def _validate_predicate(pred: dict, body_ids: set, label: str) -> None:
    if not isinstance(pred, dict) or "type" not in pred:
        raise SceneValidationError(f"{label}: predicate must be a record with 'type'")
    t = pred["type"]
    if t not in PREDICATE_TYPES:
        raise SceneValidationError(f"{label}: unknown predicate type '{t}'")
    for key in ("body", "a", "b"):
        if key in pred and pred[key] not in body_ids:
            raise SceneValidationError(
                f"{label}: predicate references unknown body '{pred[key]}'")


def validate_scene(scene: SceneTwin) -> None:
    seen = set()
    for b in scene.bodies:
        if b.id in seen:
            raise SceneValidationError(f"duplicate body id '{b.id}'")
        seen.add(b.id)
    if "gripper" in seen:
        raise SceneValidationError(
            "body id 'gripper' is reserved; the gripper is not a scene body")
    lo, hi = scene.workspace_min, scene.workspace_max
    if np.any(hi <= lo):
        raise SceneValidationError("workspace bounds are degenerate")
    for b in scene.bodies:
        p = b.pose.position
        if np.any(p < lo) or np.any(p > hi):
            raise SceneValidationError(
                f"body '{b.id}' pose outside workspace bounds")
    movable_ids = {b.id for b in scene.bodies if b.movable}
    for i, a in enumerate(scene.splats.anchors):
        if a is None:
            raise SceneValidationError(f"splat {i} not anchored")
        if a != STATIC and a not in movable_ids:
            raise SceneValidationError(
                f"splat {i} anchored to unknown or immovable body '{a}'")
    body_ids = set(seen)
    _validate_predicate(scene.task.success, body_ids, "task.success")
    for k, st in enumerate(scene.task.subtasks):
        if st.done is not None:
            _validate_predicate(st.done, body_ids, f"task.subtasks[{k}].done")
        if st.goal_body != "gripper" and st.goal_body not in body_ids:
            raise SceneValidationError(
                f"task.subtasks[{k}] goal_body '{st.goal_body}' unknown")
    if scene.task.goal_body != "gripper" and scene.task.goal_body not in body_ids:
        raise SceneValidationError(
            f"task.goal_body '{scene.task.goal_body}' unknown")


def _pose_from_json(obj: dict) -> Pose:
    return Pose(np.asarray(obj["position"], dtype=float),
                np.asarray(obj["orientation"], dtype=float))


def _pose_to_json(pose: Pose) -> dict:
    return {"position": [float(x) for x in pose.position],
            "orientation": [float(x) for x in pose.orientation]}


def _shape_from_json(obj: dict, body_id: str) -> Shape:
    t = obj.get("type")
    if t == "box":
        return Box(np.asarray(obj["half_extents"], dtype=float))
    if t == "sphere":
        return Sphere(float(obj["radius"]))
    if t == "cylinder":
        return Cylinder(float(obj["radius"]), float(obj["half_height"]))
    if t == "mesh":
        return Mesh(np.asarray(obj["vertices"], dtype=float),
                    np.asarray(obj["faces"], dtype=int))
    raise SceneParseError(f"body '{body_id}': unknown shape type '{t}'")


def _shape_to_json(shape: Shape) -> dict:
    if isinstance(shape, Box):
        return {"type": "box", "half_extents": [float(x) for x in shape.half_extents]}
    if isinstance(shape, Sphere):
        return {"type": "sphere", "radius": float(shape.radius)}
    if isinstance(shape, Cylinder):
        return {"type": "cylinder", "radius": float(shape.radius),
                "half_height": float(shape.half_height)}
    if isinstance(shape, Mesh):
        return {"type": "mesh",
                "vertices": [[float(x) for x in v] for v in shape.vertices],
                "faces": [[int(i) for i in f] for f in shape.faces]}
    raise TypeError(type(shape))


def _camera_from_json(obj: dict) -> Camera:
    return Camera(
        pose=_pose_from_json(obj),
        fx=float(obj["fx"]), fy=float(obj["fy"]),
        cx=float(obj["cx"]), cy=float(obj["cy"]),
        width=int(obj["width"]), height=int(obj["height"]),
        near=float(obj["near"]), far=float(obj["far"]),
    )


def _camera_to_json(cam: Camera) -> dict:
    d = _pose_to_json(cam.pose)
    d.update({"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
              "width": cam.width, "height": cam.height,
              "near": cam.near, "far": cam.far})
    return d


def _task_from_json(obj: dict) -> TaskSpec:
    subtasks = []
    for st in obj.get("subtasks", []):
        subtasks.append(Subtask(
            text=st["text"],
            goal=st.get("goal"),
            goal_body=st.get("goal_body", "gripper"),
            done=st.get("done"),
        ))
    goal = obj.get("oracle_goal")
    return TaskSpec(
        instruction=obj["instruction"],
        success=obj["success"],
        oracle_goal=None if goal is None else np.asarray(goal, dtype=float),
        oracle_scoring=obj.get("oracle_scoring", "distance_to_goal"),
        goal_body=obj.get("goal_body", "gripper"),
        needs_fingers=bool(obj.get("needs_fingers", True)),
        needs_rotation=bool(obj.get("needs_rotation", True)),
        subtasks=tuple(subtasks),
    )


def _task_to_json(task: TaskSpec) -> dict:
    d = {
        "instruction": task.instruction,
        "success": task.success,
        "oracle_scoring": task.oracle_scoring,
        "goal_body": task.goal_body,
        "needs_fingers": task.needs_fingers,
        "needs_rotation": task.needs_rotation,
        "subtasks": [
            {"text": st.text, "goal": st.goal, "goal_body": st.goal_body,
             "done": st.done}
            for st in task.subtasks
        ],
    }
    if task.oracle_goal is not None:
        d["oracle_goal"] = [float(x) for x in task.oracle_goal]
    return d


def load_splats_ply(path: Path) -> SplatCloud:
    """Binary little-endian PLY with x,y,z,radius,opacity float32 and rgb uint8."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise SceneParseError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    n = None
    props = []
    fmt_ok = False
    for line in header:
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            fmt_ok = True
        elif parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            props.append((parts[1], parts[2]))
    if not fmt_ok or n is None:
        raise SceneParseError(f"{path}: expected binary little-endian PLY")
    expected = [("float", "x"), ("float", "y"), ("float", "z"),
                ("uchar", "red"), ("uchar", "green"), ("uchar", "blue"),
                ("float", "radius"), ("float", "opacity")]
    if props != expected:
        raise SceneParseError(f"{path}: unexpected PLY properties {props}")
    dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                      ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                      ("radius", "<f4"), ("opacity", "<f4")])
    body = data[end + len(b"end_header\n"):]
    arr = np.frombuffer(body, dtype=dtype, count=n)
    return SplatCloud(
        np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(float),
        np.stack([arr["red"], arr["green"], arr["blue"]], axis=1),
        arr["radius"].astype(float),
        arr["opacity"].astype(float),
        [None] * n,
    )


def write_splats_ply(splats: SplatCloud, path: Path) -> None:
    n = len(splats)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property float radius\nproperty float opacity\n"
        "end_header\n"
    ).encode("ascii")
    rows = bytearray()
    for i in range(n):
        rows += struct.pack(
            "<fffBBBff",
            splats.positions[i, 0], splats.positions[i, 1], splats.positions[i, 2],
            int(splats.colors[i, 0]), int(splats.colors[i, 1]), int(splats.colors[i, 2]),
            splats.radii[i], splats.opacities[i])
    Path(path).write_bytes(header + bytes(rows))


def scene_to_json(scene: SceneTwin) -> dict:
    return {
        "workspace": {"min": [float(x) for x in scene.workspace_min],
                      "max": [float(x) for x in scene.workspace_max]},
        "support_plane_z": float(scene.support_plane_z),
        "anchor_threshold_m": float(scene.anchor_threshold_m),
        "bodies": [
            {"id": b.id, "movable": b.movable, "graspable": b.graspable,
             "shape": _shape_to_json(b.shape), "pose": _pose_to_json(b.pose)}
            for b in scene.bodies
        ],
        "splats": [
            {"position": [float(x) for x in scene.splats.positions[i]],
             "color": [int(c) for c in scene.splats.colors[i]],
             "radius": float(scene.splats.radii[i]),
             "opacity": float(scene.splats.opacities[i]),
             "anchor": scene.splats.anchors[i]}
            for i in range(len(scene.splats))
        ],
        "cameras": {name: _camera_to_json(cam) for name, cam in scene.cameras.items()},
        "task": _task_to_json(scene.task),
    }


def scene_from_json(obj: dict, base_dir: Optional[Path] = None) -> SceneTwin:
    try:
        ws = obj["workspace"]
        bodies = []
        for bobj in obj["bodies"]:
            bodies.append(RigidBody(
                id=str(bobj["id"]),
                shape=_shape_from_json(bobj["shape"], str(bobj["id"])),
                pose=_pose_from_json(bobj["pose"]),
                movable=bool(bobj.get("movable", False)),
                graspable=bool(bobj.get("graspable", False)),
            ))
        if "splats_ply" in obj:
            ply_path = Path(obj["splats_ply"])
            if base_dir is not None and not ply_path.is_absolute():
                ply_path = base_dir / ply_path
            splats = load_splats_ply(ply_path)
        else:
            pts = [SplatPoint(np.asarray(s["position"], dtype=float),
                              np.asarray(s["color"], dtype=np.uint8),
                              float(s["radius"]), float(s["opacity"]),
                              s.get("anchor"))
                   for s in obj.get("splats", [])]
            splats = SplatCloud.from_points(pts)
        cam_obj = obj["cameras"]
        if set(cam_obj) != set(VIEW_NAMES):
            raise SceneValidationError(
                f"cameras must be exactly {sorted(VIEW_NAMES)}, got {sorted(cam_obj)}")
        rig = CameraRig(**{name: _camera_from_json(cam_obj[name])
                           for name in VIEW_NAMES})
        task = _task_from_json(obj["task"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneParseError(f"malformed scene file: {exc}") from exc

    threshold = float(obj.get("anchor_threshold_m", DEFAULT_ANCHOR_THRESHOLD))
    if any(a is None for a in splats.anchors):
        known = anchor_splats(splats, bodies, threshold)
        anchors = [a if a is not None else known.anchors[i]
                   for i, a in enumerate(splats.anchors)]
        splats = dataclasses.replace(splats, anchors=anchors)

    # resolve body_displaced reference positions at load
    task = _resolve_displacement_refs(task, bodies)

    scene = SceneTwin(
        bodies=tuple(bodies),
        splats=splats,
        cameras=rig,
        workspace_min=np.asarray(ws["min"], dtype=float),
        workspace_max=np.asarray(ws["max"], dtype=float),
        support_plane_z=float(obj["support_plane_z"]),
        anchor_threshold_m=threshold,
        task=task,
    )
    validate_scene(scene)
    return scene


def _resolve_displacement_refs(task: TaskSpec, bodies: Sequence[RigidBody]) -> TaskSpec:
    by_id = {b.id: b for b in bodies}

    def fix(pred):
        if pred and pred.get("type") == "body_displaced" and "reference" not in pred:
            body = by_id.get(pred.get("body"))
            if body is not None:
                pred = dict(pred)
                pred["reference"] = [float(x) for x in body.pose.position]
        return pred

    subtasks = tuple(dataclasses.replace(st, done=fix(st.done))
                     for st in task.subtasks)
    return dataclasses.replace(task, success=fix(task.success), subtasks=subtasks)


def load_scene(path) -> SceneTwin:
    path = Path(path)
    if not path.exists():
        raise SceneParseError(f"scene file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: invalid JSON: {exc}") from exc
    return scene_from_json(obj, base_dir=path.parent)


def save_scene(scene: SceneTwin, path) -> None:
    Path(path).write_text(
        json.dumps(scene_to_json(scene), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def scene_equal(a: SceneTwin, b: SceneTwin, tol: float = 0.0) -> bool:
    """Field-by-field equality via the canonical JSON form."""
    return scene_to_json(a) == scene_to_json(b)

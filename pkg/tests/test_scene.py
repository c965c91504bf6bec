"""Scene model: shapes, splat anchoring, rigid-follow transforms, file IO."""
import dataclasses
import json

import numpy as np
import pytest

from twinplan.geometry import Pose, delta_between
from twinplan.scene import (Box, Cylinder, Mesh, RigidBody, SceneParseError,
                            SceneValidationError, SplatCloud, SplatPoint,
                            Sphere, STATIC, anchor_splats, apply_transforms,
                            load_scene, load_splats_ply, save_scene,
                            scene_from_json, scene_to_json, surface_distance,
                            surface_distances, validate_scene,
                            write_splats_ply)

from conftest import random_pose


def _pose(p):
    return Pose(np.asarray(p, dtype=float), np.array([0.0, 0.0, 0.0, 1.0]))


def _box_body(bid="b", half=(0.1, 0.1, 0.1), pos=(0, 0, 0), **kw):
    return RigidBody(bid, Box(np.asarray(half)), _pose(pos), **kw)


# ---------------------------------------------------------------------------
# shapes and surface distances


def test_shape_invariants_rejected():
    with pytest.raises(SceneValidationError):
        Box(np.array([0.1, -0.1, 0.1]))
    with pytest.raises(SceneValidationError):
        Sphere(0.0)
    with pytest.raises(SceneValidationError):
        Cylinder(0.1, -1.0)
    with pytest.raises(SceneValidationError):
        Mesh(np.zeros((3, 3)), np.zeros((4, 3), dtype=int))


def test_graspable_implies_movable():
    with pytest.raises(SceneValidationError):
        _box_body(graspable=True, movable=False)


def test_sphere_surface_distance_exact():
    body = RigidBody("s", Sphere(0.2), _pose([1.0, 0.0, 0.0]))
    assert surface_distance(np.array([1.5, 0.0, 0.0]), body) == pytest.approx(0.3)
    # inside clamps to zero
    assert surface_distance(np.array([1.05, 0.0, 0.0]), body) == 0.0


def test_box_surface_distance_face_edge_corner():
    body = _box_body(half=(1, 1, 1))
    assert surface_distance(np.array([2.0, 0.0, 0.0]), body) == pytest.approx(1.0)
    assert surface_distance(np.array([2.0, 2.0, 0.0]), body) == pytest.approx(np.sqrt(2))
    assert surface_distance(np.array([2.0, 2.0, 2.0]), body) == pytest.approx(np.sqrt(3))
    assert surface_distance(np.array([0.5, 0.5, 0.5]), body) == 0.0


def test_cylinder_surface_distance():
    body = RigidBody("c", Cylinder(0.5, 1.0), _pose([0, 0, 0]))
    assert surface_distance(np.array([1.5, 0.0, 0.0]), body) == pytest.approx(1.0)
    assert surface_distance(np.array([0.0, 0.0, 2.0]), body) == pytest.approx(1.0)
    # off-axis above the rim: hypotenuse to the rim circle
    d = surface_distance(np.array([1.5, 0.0, 2.0]), body)
    assert d == pytest.approx(np.sqrt(2.0))


def test_rotated_box_distance_matches_local_frame():
    rng = np.random.default_rng(0)
    pose = random_pose(rng)
    body = RigidBody("b", Box(np.array([0.2, 0.1, 0.3])), pose)
    pts = rng.uniform(-1, 1, (100, 3))
    got = surface_distances(pts, body)
    # independent oracle: transform into local frame, use box SDF formula
    local = (pts - pose.position) @ pose.matrix()
    q = np.abs(local) - np.array([0.2, 0.1, 0.3])
    want = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    assert np.allclose(got, want, atol=1e-12)


def test_mesh_distance_is_nearest_vertex():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    body = RigidBody("m", Mesh(verts, faces), _pose([0, 0, 0]))
    p = np.array([2.0, 0.0, 0.0])
    assert surface_distance(p, body) == pytest.approx(1.0)  # nearest vertex (1,0,0)


# ---------------------------------------------------------------------------
# splat anchoring


def test_anchoring_matches_brute_force():
    """Independent oracle: per-splat loop over bodies with naive min distance."""
    rng = np.random.default_rng(1)
    bodies = [
        _box_body("alpha", half=(0.05,) * 3, pos=(0.1, 0.0, 0.05), movable=True),
        RigidBody("beta", Sphere(0.04), _pose([-0.1, 0.05, 0.04]), movable=True),
        _box_body("wall", half=(0.3, 0.01, 0.1), pos=(0.0, -0.2, 0.1)),  # immovable
    ]
    pts = rng.uniform([-0.3, -0.3, 0.0], [0.3, 0.3, 0.2], (500, 3))
    cloud = SplatCloud(pts, np.zeros((500, 3), dtype=np.uint8),
                       np.full(500, 0.004), np.ones(500), [None] * 500)
    threshold = 0.05
    anchored = anchor_splats(cloud, bodies, threshold)
    movable = sorted([b for b in bodies if b.movable], key=lambda b: b.id)
    for i in range(500):
        dists = [(surface_distance(pts[i], b), b.id) for b in movable]
        best_d, best_id = min(dists)  # lexicographic tie-break via tuple order
        want = best_id if best_d <= threshold else STATIC
        assert anchored.anchors[i] == want


def test_anchoring_tie_breaks_lexicographically():
    # two identical boxes equidistant from the midpoint splat
    bodies = [
        _box_body("zeta", half=(0.01,) * 3, pos=(0.05, 0, 0), movable=True),
        _box_body("alpha", half=(0.01,) * 3, pos=(-0.05, 0, 0), movable=True),
    ]
    cloud = SplatCloud(np.array([[0.0, 0.0, 0.0]]),
                       np.zeros((1, 3), dtype=np.uint8),
                       np.array([0.004]), np.array([1.0]), [None])
    anchored = anchor_splats(cloud, bodies, 0.1)
    assert anchored.anchors[0] == "alpha"


def test_anchoring_threshold_boundary():
    bodies = [_box_body("a", half=(0.01,) * 3, pos=(0, 0, 0), movable=True)]
    cloud = SplatCloud(np.array([[0.06, 0.0, 0.0], [0.0601, 0.0, 0.0]]),
                       np.zeros((2, 3), dtype=np.uint8),
                       np.full(2, 0.004), np.ones(2), [None, None])
    anchored = anchor_splats(cloud, bodies, 0.05)
    assert anchored.anchors[0] == "a"       # exactly at threshold: anchored
    assert anchored.anchors[1] == STATIC    # just beyond: background


def test_anchor_requires_positive_threshold():
    with pytest.raises(ValueError):
        anchor_splats(SplatCloud.empty(), [], 0.0)


# ---------------------------------------------------------------------------
# apply_transforms


def _tiny_scene():
    obj = {
        "workspace": {"min": [-1, -1, 0], "max": [1, 1, 1]},
        "support_plane_z": 0.0,
        "anchor_threshold_m": 0.05,
        "bodies": [
            {"id": "mover", "movable": True, "graspable": True,
             "shape": {"type": "box", "half_extents": [0.05, 0.05, 0.05]},
             "pose": {"position": [0.2, 0.0, 0.05],
                      "orientation": [0, 0, 0, 1]}},
            {"id": "rock", "movable": False, "graspable": False,
             "shape": {"type": "sphere", "radius": 0.05},
             "pose": {"position": [-0.4, 0.0, 0.05],
                      "orientation": [0, 0, 0, 1]}},
        ],
        "splats": [
            {"position": [0.2, 0.0, 0.1], "color": [200, 10, 10],
             "radius": 0.004, "opacity": 1.0},
            {"position": [0.25, 0.02, 0.08], "color": [10, 200, 10],
             "radius": 0.004, "opacity": 1.0},
            {"position": [0.8, 0.8, 0.0], "color": [99, 99, 99],
             "radius": 0.004, "opacity": 1.0},
        ],
        "cameras": _cameras(),
        "task": {"instruction": "noop",
                 "success": {"type": "gripper_in_region",
                             "region": {"min": [-1, -1, 0], "max": [1, 1, 1]}}},
    }
    return scene_from_json(obj)


def _cameras():
    from twinplan.cameras import default_rig
    from twinplan.scene import _camera_to_json

    rig = default_rig(np.array([-1.0, -1.0, 0.0]), np.array([1.0, 1.0, 1.0]))
    return {name: _camera_to_json(cam) for name, cam in rig.items()}


def test_apply_transforms_moves_body_and_anchored_splats():
    scene = _tiny_scene()
    assert scene.splats.anchors == ["mover", "mover", STATIC]
    old = scene.body("mover").pose
    new = Pose(np.array([0.0, 0.1, 0.05]),
               np.array([0.0, 0.0, np.sin(0.3), np.cos(0.3)]))
    delta = delta_between(old, new)
    out = apply_transforms(scene, {"mover": delta})
    assert out.body("mover").pose.almost_equal(new, tol=1e-9)
    # anchored splats keep their pose relative to the body
    for i in range(2):
        local = old.inverse().transform_point(scene.splats.positions[i])
        assert np.allclose(out.splats.positions[i], new.transform_point(local),
                           atol=1e-9)
    # static splat untouched
    assert np.array_equal(out.splats.positions[2], scene.splats.positions[2])


def test_apply_transforms_is_pure():
    scene = _tiny_scene()
    before = scene.splats.positions.copy()
    pose_before = scene.body("mover").pose
    apply_transforms(scene, {"mover": Pose(np.array([0.1, 0, 0]),
                                           np.array([0, 0, 0, 1.0]))})
    assert np.array_equal(scene.splats.positions, before)
    assert scene.body("mover").pose.almost_equal(pose_before)


def test_apply_transforms_rejects_static_or_unknown_targets():
    scene = _tiny_scene()
    delta = Pose(np.array([0.1, 0, 0]), np.array([0, 0, 0, 1.0]))
    with pytest.raises(SceneValidationError):
        apply_transforms(scene, {"rock": delta})
    with pytest.raises(SceneValidationError):
        apply_transforms(scene, {"ghost": delta})


def test_rigid_follow_preserves_intra_anchor_distances():
    rng = np.random.default_rng(2)
    scene = _tiny_scene()
    pts = scene.splats.positions[:2]
    d_before = np.linalg.norm(pts[0] - pts[1])
    for _ in range(50):
        delta = delta_between(random_pose(rng), random_pose(rng))
        out = apply_transforms(scene, {"mover": delta})
        moved = out.splats.positions[:2]
        assert abs(np.linalg.norm(moved[0] - moved[1]) - d_before) < 1e-9


# ---------------------------------------------------------------------------
# validation


def test_validate_rejects_duplicate_and_reserved_ids():
    scene = _tiny_scene()
    dup = dataclasses.replace(scene, bodies=scene.bodies + (scene.bodies[0],))
    with pytest.raises(SceneValidationError):
        validate_scene(dup)
    grip = dataclasses.replace(
        scene, bodies=(dataclasses.replace(scene.bodies[0], id="gripper"),
                       scene.bodies[1]))
    with pytest.raises(SceneValidationError):
        validate_scene(grip)


def test_validate_rejects_out_of_workspace_body():
    scene = _tiny_scene()
    far = dataclasses.replace(
        scene.bodies[0], pose=_pose([5.0, 0.0, 0.05]))
    bad = dataclasses.replace(scene, bodies=(far, scene.bodies[1]))
    with pytest.raises(SceneValidationError):
        validate_scene(bad)


def test_validate_rejects_unknown_predicate_body():
    obj = scene_to_json(_tiny_scene())
    obj["task"]["success"] = {"type": "body_in_region", "body": "ghost",
                              "region": {"min": [0, 0, 0], "max": [1, 1, 1]}}
    with pytest.raises(SceneValidationError):
        scene_from_json(obj)


# ---------------------------------------------------------------------------
# golden fixture + file IO


def test_golden_scene_counts_independent_parse(press_scene_path):
    """Counts asserted against a raw JSON parse, independent of the loader."""
    raw = json.loads(press_scene_path.read_text())
    assert len(raw["bodies"]) == 3
    assert len(raw["splats"]) == 5000
    assert set(raw["cameras"]) == {"front", "left", "right", "top_down"}

    scene = load_scene(press_scene_path)
    assert len(scene.bodies) == 3
    assert len(scene.splats) == 5000
    assert len(scene.cameras.items()) == 4


def test_golden_scene_anchors_cover_spacebar(press_scene):
    anchors = set(press_scene.splats.anchors)
    assert anchors == {"spacebar", STATIC}
    assert press_scene.splats.anchors.count("spacebar") > 500


def test_scene_roundtrip_via_json(press_scene):
    obj = scene_to_json(press_scene)
    again = scene_from_json(obj)
    assert scene_to_json(again) == obj


def test_save_load_roundtrip(tmp_path, press_scene):
    path = tmp_path / "out.scene"
    save_scene(press_scene, path)
    again = load_scene(path)
    assert scene_to_json(again) == scene_to_json(press_scene)


def test_malformed_json_raises_parse_error(tmp_path):
    p = tmp_path / "bad.scene"
    p.write_text("{not json")
    with pytest.raises(SceneParseError):
        load_scene(p)
    with pytest.raises(SceneParseError):
        load_scene(tmp_path / "missing.scene")


def test_missing_field_raises_parse_error():
    with pytest.raises(SceneParseError):
        scene_from_json({"bodies": []})


def test_ply_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    n = 100
    cloud = SplatCloud(
        rng.uniform(-1, 1, (n, 3)).astype(np.float32).astype(float),
        rng.integers(0, 256, (n, 3)).astype(np.uint8),
        np.full(n, np.float32(0.004)).astype(float),
        rng.uniform(0.1, 1.0, n).astype(np.float32).astype(float),
        [None] * n,
    )
    path = tmp_path / "pts.ply"
    write_splats_ply(cloud, path)
    again = load_splats_ply(path)
    assert np.allclose(again.positions, cloud.positions)
    assert np.array_equal(again.colors, cloud.colors)
    assert np.allclose(again.radii, cloud.radii)
    assert np.allclose(again.opacities, cloud.opacities)


def test_scene_with_external_ply(tmp_path):
    scene = _tiny_scene()
    obj = scene_to_json(scene)
    write_splats_ply(scene.splats, tmp_path / "cloud.ply")
    del obj["splats"]
    obj["splats_ply"] = "cloud.ply"
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(obj))
    loaded = load_scene(path)
    assert len(loaded.splats) == len(scene.splats)
    # anchors recomputed at load since PLY carries no anchor column
    assert loaded.splats.anchors == scene.splats.anchors


def test_splat_point_accessor(press_scene):
    pt = press_scene.splats.point(0)
    assert isinstance(pt, SplatPoint)
    assert np.array_equal(pt.position, press_scene.splats.positions[0])
    assert pt.anchor == press_scene.splats.anchors[0]


def test_bad_splat_values_rejected():
    with pytest.raises(SceneValidationError):
        SplatCloud(np.zeros((1, 3)), np.zeros((1, 3), dtype=np.uint8),
                   np.array([0.0]), np.array([1.0]), [None])
    with pytest.raises(SceneValidationError):
        SplatCloud(np.zeros((1, 3)), np.zeros((1, 3), dtype=np.uint8),
                   np.array([0.004]), np.array([1.5]), [None])

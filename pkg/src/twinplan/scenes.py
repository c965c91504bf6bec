"""Seeded fixture-scene generators: reach, press, pick-place, push-region, pair-up.

Each template writes a fully scripted scene (subtasks, completion predicates,
oracle goals) so oracle-critic episodes run without any remote model.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .cameras import default_rig
from .scene import _camera_to_json  # shared JSON form for rig serialization

TEMPLATES = ("reach", "press", "pick-place", "push-region", "pair-up")

WS_MIN = np.array([-0.35, -0.35, 0.0])
WS_MAX = np.array([0.35, 0.35, 0.45])
SUPPORT_Z = 0.0

TABLE_RGB = (120, 96, 72)


def _cameras_json() -> dict:
    rig = default_rig(WS_MIN, WS_MAX)
    return {name: _camera_to_json(cam) for name, cam in rig.items()}


def _base(instruction: str, success: dict) -> dict:
    return {
        "workspace": {"min": list(WS_MIN), "max": list(WS_MAX)},
        "support_plane_z": SUPPORT_Z,
        "anchor_threshold_m": 0.05,
        "bodies": [],
        "splats": [],
        "cameras": _cameras_json(),
        "task": {"instruction": instruction, "success": success},
    }


def _region(center, half) -> dict:
    c = np.asarray(center, dtype=float)
    h = np.asarray(half, dtype=float)
    return {"min": [float(x) for x in c - h], "max": [float(x) for x in c + h]}


def _body(bid, shape, position, movable=False, graspable=False) -> dict:
    return {
        "id": bid, "movable": movable, "graspable": graspable,
        "shape": shape,
        "pose": {"position": [float(x) for x in position],
                 "orientation": [0.0, 0.0, 0.0, 1.0]},
    }


def _splat(position, color, rng, radius=0.004, opacity=1.0) -> dict:
    jitter = [int(np.clip(c + rng.integers(-12, 13), 0, 255)) for c in color]
    return {"position": [float(x) for x in position], "color": jitter,
            "radius": radius, "opacity": opacity}


def _box_surface_points(center, half, n, rng) -> np.ndarray:
    half = np.asarray(half, dtype=float)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    probs = np.repeat(areas, 2)
    probs = probs / probs.sum()
    faces = rng.choice(6, size=n, p=probs)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    for i, f in enumerate(faces):
        axis, sign = divmod(int(f), 2)
        pts[i, axis] = half[axis] * (1.0 if sign else -1.0)
    return pts + np.asarray(center, dtype=float)


def _cylinder_surface_points(center, radius, half_height, n, rng) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi, size=n)
    z = rng.uniform(-half_height, half_height, size=n)
    pts = np.stack([radius * np.cos(theta), radius * np.sin(theta), z], axis=1)
    return pts + np.asarray(center, dtype=float)


def _table_points(n, rng) -> np.ndarray:
    xy = rng.uniform(WS_MIN[:2] + 0.02, WS_MAX[:2] - 0.02, size=(n, 2))
    return np.concatenate([xy, np.full((n, 1), SUPPORT_Z + 0.001)], axis=1)


def _gripper_start() -> np.ndarray:
    c = 0.5 * (WS_MIN + WS_MAX)
    return np.array([c[0], c[1], WS_MIN[2] + 0.6 * (WS_MAX[2] - WS_MIN[2])])


def _seeded_xy(rng, margin=0.12) -> np.ndarray:
    return rng.uniform(WS_MIN[:2] + margin, WS_MAX[:2] - margin)


def gen_reach(rng: np.random.Generator) -> dict:
    start = _gripper_start()
    offset = rng.uniform([-0.10, -0.10, -0.08], [0.10, 0.10, 0.06])
    goal = np.clip(start + offset, WS_MIN + 0.03, WS_MAX - 0.03)
    success = {"type": "gripper_in_region", "region": _region(goal, [0.02] * 3)}
    scene = _base("move the gripper to the marked target point", success)
    scene["task"].update({
        "oracle_goal": [float(x) for x in goal],
        "oracle_scoring": "distance_to_goal",
        "goal_body": "gripper",
        "needs_fingers": False,
        "needs_rotation": False,
        "subtasks": [{"text": "move the gripper to the target point",
                      "goal": [float(x) for x in goal],
                      "goal_body": "gripper",
                      "done": success}],
    })
    return scene


def gen_press(rng: np.random.Generator, n_splats: int = 5000) -> dict:
    base_c = np.append(_seeded_xy(rng, margin=0.16), 0.01)
    base_half = [0.11, 0.045, 0.01]
    dx = float(rng.uniform(-0.05, 0.05))
    btn_c = np.array([base_c[0] + dx, base_c[1], 0.026])
    btn_half = [0.03, 0.012, 0.006]
    # decoy object well away from the keyboard
    while True:
        mug_xy = _seeded_xy(rng, margin=0.08)
        if np.linalg.norm(mug_xy - base_c[:2]) > 0.22:
            break
    mug_c = np.append(mug_xy, 0.04)

    success = {"type": "gripper_in_region",
               "region": {"min": [float(btn_c[0] - 0.03), float(btn_c[1] - 0.012), 0.0],
                          "max": [float(btn_c[0] + 0.03), float(btn_c[1] + 0.012), 0.032]}}
    scene = _base("press the spacebar on the keyboard", success)
    scene["bodies"] = [
        _body("keyboard", {"type": "box", "half_extents": base_half}, base_c),
        _body("spacebar", {"type": "box", "half_extents": btn_half}, btn_c,
              movable=True),
        _body("mug", {"type": "cylinder", "radius": 0.025, "half_height": 0.04},
              mug_c),
    ]
    above = np.array([btn_c[0], btn_c[1], 0.10])
    scene["task"].update({
        "oracle_goal": [float(btn_c[0]), float(btn_c[1]), 0.024],
        "oracle_scoring": "progress",
        "goal_body": "gripper",
        "needs_fingers": False,
        "needs_rotation": False,
        "subtasks": [
            {"text": "move above the spacebar",
             "goal": [float(x) for x in above],
             "goal_body": "gripper",
             "done": {"type": "gripper_in_region",
                      "region": _region(above, [0.04, 0.04, 0.04])}},
            {"text": "press down on the spacebar",
             "goal": [float(btn_c[0]), float(btn_c[1]), 0.024],
             "goal_body": "gripper",
             "done": success},
        ],
    })
    n_each = max(n_splats // 5, 1)
    splats = []
    for p in _box_surface_points(base_c, base_half, 2 * n_each, rng):
        splats.append(_splat(p, (40, 40, 46), rng))
    for p in _box_surface_points(btn_c, btn_half, n_each, rng):
        splats.append(_splat(p, (210, 208, 200), rng))
    for p in _cylinder_surface_points(mug_c, 0.025, 0.04, n_each, rng):
        splats.append(_splat(p, (180, 60, 50), rng))
    for p in _table_points(n_splats - len(splats), rng):
        splats.append(_splat(p, TABLE_RGB, rng))
    scene["splats"] = splats
    return scene


def gen_pick_place(rng: np.random.Generator, n_splats: int = 400) -> dict:
    while True:
        cube_xy = _seeded_xy(rng)
        pad_xy = _seeded_xy(rng)
        if np.linalg.norm(cube_xy - pad_xy) > 0.16:
            break
    cube_c = np.append(cube_xy, 0.018)
    pad_c = np.append(pad_xy, 0.005)
    success = {"type": "body_in_region", "body": "cube",
               "region": {"min": [float(pad_c[0] - 0.035), float(pad_c[1] - 0.035), 0.0],
                          "max": [float(pad_c[0] + 0.035), float(pad_c[1] + 0.035), 0.08]}}
    scene = _base("put the green cube onto the target pad", success)
    scene["bodies"] = [
        _body("cube", {"type": "box", "half_extents": [0.018] * 3}, cube_c,
              movable=True, graspable=True),
        _body("pad", {"type": "box", "half_extents": [0.035, 0.035, 0.005]},
              pad_c),
    ]
    scene["task"].update({
        "oracle_goal": [float(pad_c[0]), float(pad_c[1]), 0.03],
        "oracle_scoring": "progress",
        "goal_body": "cube",
        "needs_fingers": True,
        "needs_rotation": False,
        "subtasks": [
            {"text": "move above the cube",
             "goal": {"body": "cube", "offset": [0.0, 0.0, 0.06]},
             "goal_body": "gripper",
             "done": {"type": "gripper_near_body", "body": "cube",
                      "threshold": 0.075}},
            {"text": "grasp the cube",
             "goal": {"body": "cube", "offset": [0.0, 0.0, 0.005]},
             "goal_body": "gripper",
             "done": {"type": "gripper_holding", "body": "cube"}},
            {"text": "place the cube on the target pad",
             "goal": [float(pad_c[0]), float(pad_c[1]), 0.05],
             "goal_body": "cube",
             "done": success},
        ],
    })
    n_each = max(n_splats // 4, 1)
    splats = []
    for p in _box_surface_points(cube_c, [0.018] * 3, n_each, rng):
        splats.append(_splat(p, (60, 170, 70), rng))
    for p in _box_surface_points(pad_c, [0.035, 0.035, 0.005], n_each, rng):
        splats.append(_splat(p, (200, 180, 60), rng))
    for p in _table_points(n_splats - len(splats), rng):
        splats.append(_splat(p, TABLE_RGB, rng))
    scene["splats"] = splats
    return scene


def gen_push_region(rng: np.random.Generator, n_splats: int = 400) -> dict:
    while True:
        block_xy = _seeded_xy(rng)
        target_xy = _seeded_xy(rng)
        d = np.linalg.norm(block_xy - target_xy)
        if 0.12 < d < 0.22:
            break
    block_c = np.append(block_xy, 0.025)
    target_c = np.append(target_xy, 0.0)
    success = {"type": "body_in_region", "body": "block",
               "region": {"min": [float(target_c[0] - 0.045), float(target_c[1] - 0.045), 0.0],
                          "max": [float(target_c[0] + 0.045), float(target_c[1] + 0.045), 0.1]}}
    scene = _base("push the block into the marked region", success)
    scene["bodies"] = [
        _body("block", {"type": "box", "half_extents": [0.025] * 3}, block_c,
              movable=True),
    ]
    away = block_xy - target_xy
    away = away / np.linalg.norm(away)
    stand = block_c + np.array([away[0] * 0.055, away[1] * 0.055, 0.01])
    scene["task"].update({
        "oracle_goal": [float(target_c[0]), float(target_c[1]), 0.025],
        "oracle_scoring": "progress",
        "goal_body": "block",
        "needs_fingers": False,
        "needs_rotation": False,
        "subtasks": [
            {"text": "move beside the block, opposite the target",
             "goal": [float(x) for x in stand],
             "goal_body": "gripper",
             "done": {"type": "gripper_near_body", "body": "block",
                      "threshold": 0.075}},
            {"text": "push the block into the region",
             "goal": [float(target_c[0]), float(target_c[1]), 0.025],
             "goal_body": "block",
             "done": success},
        ],
    })
    n_each = max(n_splats // 3, 1)
    splats = []
    for p in _box_surface_points(block_c, [0.025] * 3, n_each, rng):
        splats.append(_splat(p, (70, 90, 200), rng))
    for p in _table_points(n_splats - len(splats), rng):
        splats.append(_splat(p, TABLE_RGB, rng))
    scene["splats"] = splats
    return scene


def gen_pair_up(rng: np.random.Generator, n_splats: int = 400) -> dict:
    while True:
        a_xy = _seeded_xy(rng)
        b_xy = _seeded_xy(rng)
        if np.linalg.norm(a_xy - b_xy) > 0.18:
            break
    half = [0.04, 0.02, 0.015]
    a_c = np.append(a_xy, 0.015)
    b_c = np.append(b_xy, 0.015)
    success = {"type": "body_near_body", "a": "shoe_left", "b": "shoe_right",
               "threshold": 0.095}
    scene = _base("pair up the shoes", success)
    scene["bodies"] = [
        _body("shoe_left", {"type": "box", "half_extents": half}, a_c,
              movable=True, graspable=True),
        _body("shoe_right", {"type": "box", "half_extents": half}, b_c,
              movable=True),
    ]
    scene["task"].update({
        "oracle_goal": [float(b_c[0]), float(b_c[1] + 0.06), 0.02],
        "oracle_scoring": "progress",
        "goal_body": "shoe_left",
        "needs_fingers": True,
        "needs_rotation": False,
        "subtasks": [
            {"text": "move above the left shoe",
             "goal": {"body": "shoe_left", "offset": [0.0, 0.0, 0.055]},
             "goal_body": "gripper",
             "done": {"type": "gripper_near_body", "body": "shoe_left",
                      "threshold": 0.07}},
            {"text": "grasp the left shoe",
             "goal": {"body": "shoe_left", "offset": [0.0, 0.0, 0.005]},
             "goal_body": "gripper",
             "done": {"type": "gripper_holding", "body": "shoe_left"}},
            {"text": "place it next to the right shoe",
             "goal": {"body": "shoe_right", "offset": [0.0, 0.06, 0.05]},
             "goal_body": "shoe_left",
             "done": success},
        ],
    })
    n_each = max(n_splats // 3, 1)
    splats = []
    for p in _box_surface_points(a_c, half, n_each, rng):
        splats.append(_splat(p, (160, 40, 40), rng))
    for p in _box_surface_points(b_c, half, n_each, rng):
        splats.append(_splat(p, (40, 40, 160), rng))
    for p in _table_points(n_splats - len(splats), rng):
        splats.append(_splat(p, TABLE_RGB, rng))
    scene["splats"] = splats
    return scene


_GENERATORS = {
    "reach": gen_reach,
    "press": gen_press,
    "pick-place": gen_pick_place,
    "push-region": gen_push_region,
    "pair-up": gen_pair_up,
}


def gen_scene(template: str, seed: int, output_path=None) -> dict:
    """Generate a seeded fixture scene; identical (template, seed) gives
    byte-identical files."""
    if template not in _GENERATORS:
        raise ValueError(f"unknown template '{template}'; "
                         f"choose from {', '.join(TEMPLATES)}")
    rng = np.random.default_rng(seed)
    scene = _GENERATORS[template](rng)
    if output_path is not None:
        Path(output_path).write_text(
            json.dumps(scene, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return scene

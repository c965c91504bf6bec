"""Append-only episode traces: line-delimited JSON recording, deterministic
replay through the simulator, frame dumping, and offline lint checks."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .geometry import Pose
from .render import render_composite, save_png
from .scene import SceneTwin, apply_transforms, scene_to_json
from .sim import (Action, ContactEvent, GripperState, SimConfig,
                  initial_gripper_state, simulate_step)

SCHEMA_VERSION = 1

TERMINAL_STATUSES = ("SUCCESS", "FAILED_BUDGET", "ABORTED_CRITIC")


class TraceError(Exception):
    pass


class ReplayDivergence(TraceError):
    def __init__(self, step_index: int, detail: str):
        super().__init__(f"replay diverged at step {step_index}: {detail}")
        self.step_index = step_index


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def scene_hash(scene: Optional[SceneTwin] = None,
               path: Optional[Path] = None) -> str:
    if path is not None:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    if scene is None:
        raise ValueError("need a scene or a path to hash")
    return hashlib.sha256(
        _dumps(scene_to_json(scene)).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# serialization helpers


def _floats(x) -> List[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def pose_to_json(pose: Pose) -> dict:
    return {"position": _floats(pose.position),
            "orientation": _floats(pose.orientation)}


def pose_from_json(obj: dict) -> Pose:
    return Pose(np.asarray(obj["position"]), np.asarray(obj["orientation"]))


def action_to_json(action: Action) -> dict:
    return {"position": _floats(action.position),
            "rotvec": _floats(action.rotvec),
            "finger": float(action.finger)}


def action_from_json(obj: dict) -> Action:
    return Action(np.asarray(obj["position"]), np.asarray(obj["rotvec"]),
                  obj["finger"])


def event_to_json(ev: ContactEvent) -> dict:
    return {"kind": ev.kind, "body": ev.body,
            "step_fraction": float(ev.step_fraction)}


def gripper_to_json(g: GripperState) -> dict:
    d = pose_to_json(g.pose)
    d["fingers"] = g.fingers
    d["held"] = g.held
    return d


def make_header(scene: SceneTwin, config, sim_config: SimConfig, critic,
                scene_path=None, template_hash_value: str = "") -> dict:
    return {
        "type": "header",
        "schema": SCHEMA_VERSION,
        "scene_path": str(scene_path) if scene_path else None,
        "scene_hash": scene_hash(scene=scene,
                                 path=Path(scene_path) if scene_path else None),
        "episode_seed": config.episode_seed,
        "critic": getattr(critic, "kind", "unknown"),
        "template_hash": template_hash_value,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "workspace": {"min": _floats(scene.workspace_min),
                      "max": _floats(scene.workspace_max)},
        "planner": {
            "n_samples": config.n_samples,
            "group_size": config.group_size,
            "iterations": config.iterations,
            "step_budget": config.step_budget,
            "time_budget": config.time_budget,
            "use_views": config.use_views,
            "use_subtasks": config.use_subtasks,
            "use_cem": config.use_cem,
            "std_floor": _floats(config.std_floor),
            "init_std": _floats(config.init_std),
        },
        "sim": {
            "grasp_radius": sim_config.grasp_radius,
            "push_enabled": sim_config.push_enabled,
            "max_penetration": sim_config.max_penetration,
            "settle_enabled": sim_config.settle_enabled,
            "substeps": sim_config.substeps,
        },
    }


def step_record(index: int, result, events, scene_after: SceneTwin,
                gripper_after: GripperState, success: bool) -> dict:
    verdicts = []
    for group in result.verdicts:
        verdicts.append([
            {"chosen_index": v.chosen_index, **(
                {"rationale": v.rationale} if v.rationale else {})}
            for v in group])
    return {
        "type": "step",
        "index": index,
        "active_subtask": result.active_subtask,
        "chosen_view": result.chosen_view,
        "view_fallback": result.view_fallback,
        "chosen_action": action_to_json(result.chosen_action),
        "distributions": [{"mean": _floats(d.mean), "std": _floats(d.std)}
                          for d in result.distributions],
        "elite_indices": [[int(i) for i in it] for it in result.elite_indices],
        "verdicts": verdicts,
        "n_simulations": result.n_simulations,
        "n_queries": result.n_queries,
        "events": [event_to_json(e) for e in events],
        "gripper": gripper_to_json(gripper_after),
        "body_poses": {b.id: pose_to_json(b.pose)
                       for b in scene_after.bodies if b.movable},
        "success": success,
    }


# ---------------------------------------------------------------------------
# trace object + writer


@dataclass
class EpisodeTrace:
    header: dict
    steps: List[dict]
    terminal: Optional[dict] = None

    @property
    def status(self) -> Optional[str]:
        return self.terminal["status"] if self.terminal else None

    @property
    def success(self) -> bool:
        return bool(self.terminal and self.terminal.get("success"))

    def lines(self) -> List[str]:
        out = [_dumps(self.header)]
        out += [_dumps(s) for s in self.steps]
        if self.terminal is not None:
            out.append(_dumps(self.terminal))
        return out

    def serialize(self) -> str:
        return "\n".join(self.lines()) + "\n"


class TraceWriter:
    """Single-writer append-only recorder; every append is flushed to disk."""

    def __init__(self, header: dict, path=None):
        self.header = header
        self.steps: List[dict] = []
        self.terminal: Optional[dict] = None
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", encoding="utf-8")
            self._write_line(header)

    def _write_line(self, obj: dict) -> None:
        if self._fh is not None:
            self._fh.write(_dumps(obj) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def append_step(self, record: dict) -> None:
        if self.terminal is not None:
            raise TraceError("trace already terminated")
        self.steps.append(record)
        self._write_line(record)

    def finalize(self, status: str, success: bool, error: str = "") -> None:
        if self.terminal is not None:
            raise TraceError("trace already terminated")
        if status not in TERMINAL_STATUSES:
            raise ValueError(f"unknown terminal status '{status}'")
        terminal = {"type": "end", "status": status, "success": success,
                    "steps": len(self.steps)}
        if error:
            terminal["error"] = error
        self.terminal = terminal
        self._write_line(terminal)
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def trace(self) -> EpisodeTrace:
        return EpisodeTrace(self.header, list(self.steps), self.terminal)


def read_trace(path) -> EpisodeTrace:
    """Parse a trace file; an incomplete trailing line (crash) is dropped."""
    text = Path(path).read_text(encoding="utf-8")
    records = []
    for line in text.split("\n"):
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            break  # crash-truncated tail
    if not records or records[0].get("type") != "header":
        raise TraceError(f"{path}: missing trace header")
    header = records[0]
    steps = [r for r in records[1:] if r.get("type") == "step"]
    terminals = [r for r in records[1:] if r.get("type") == "end"]
    return EpisodeTrace(header, steps, terminals[0] if terminals else None)


def sim_config_from_header(header: dict) -> SimConfig:
    s = header["sim"]
    return SimConfig(grasp_radius=s["grasp_radius"],
                     push_enabled=s["push_enabled"],
                     max_penetration=s["max_penetration"],
                     settle_enabled=s["settle_enabled"],
                     substeps=s["substeps"])


def replay(trace: EpisodeTrace, scene: SceneTwin,
           scene_path=None) -> EpisodeTrace:
    """Re-execute the recorded actions and verify every recorded outcome."""
    expected = scene_hash(scene=scene,
                          path=Path(scene_path) if scene_path else None)
    if expected != trace.header["scene_hash"]:
        raise TraceError("scene content hash does not match trace header")
    sim_config = sim_config_from_header(trace.header)
    gripper = initial_gripper_state(scene)
    for rec in trace.steps:
        action = action_from_json(rec["chosen_action"])
        deltas, gripper, events = simulate_step(scene, gripper, action,
                                                sim_config)
        scene = apply_transforms(scene, deltas)
        got_events = [event_to_json(e) for e in events]
        if got_events != rec["events"]:
            raise ReplayDivergence(rec["index"], "contact events differ")
        if gripper_to_json(gripper) != rec["gripper"]:
            raise ReplayDivergence(rec["index"], "gripper state differs")
        got_poses = {b.id: pose_to_json(b.pose)
                     for b in scene.bodies if b.movable}
        if got_poses != rec["body_poses"]:
            raise ReplayDivergence(rec["index"], "body poses differ")
    return trace


def dump_frames(trace: EpisodeTrace, scene: SceneTwin, out_dir) -> int:
    """Write the chosen-view composite PNG at each post-action state."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim_config = sim_config_from_header(trace.header)
    gripper = initial_gripper_state(scene)
    count = 0
    for rec in trace.steps:
        action = action_from_json(rec["chosen_action"])
        deltas, gripper, _ = simulate_step(scene, gripper, action, sim_config)
        scene = apply_transforms(scene, deltas)
        view = rec["chosen_view"]
        img = render_composite(scene, gripper, scene.cameras[view]).color
        save_png(img, out_dir / f"step_{rec['index']:03d}_{view}.png")
        count += 1
    return count


# ---------------------------------------------------------------------------
# lint


def trace_lint(trace: EpisodeTrace) -> List[str]:
    """Standalone invariant checks over a trace file alone (no live system)."""
    problems: List[str] = []
    planner = trace.header.get("planner", {})
    budget = planner.get("step_budget")
    n = planner.get("n_samples")
    gsize = planner.get("group_size")
    iters = planner.get("iterations")
    use_cem = planner.get("use_cem", True)
    use_views = planner.get("use_views", True)
    std_floor = np.asarray(planner.get("std_floor",
                                       [0.0] * 7), dtype=float)
    ws = trace.header.get("workspace")

    if budget is not None and len(trace.steps) > budget:
        problems.append(f"step count {len(trace.steps)} exceeds budget {budget}")

    prev_view = None
    for rec in trace.steps:
        i = rec["index"]
        exp_sims = iters * n if use_cem else n
        exp_queries = iters * (n // gsize) if use_cem else n // gsize
        if rec["n_simulations"] != exp_sims:
            problems.append(
                f"step {i}: {rec['n_simulations']} simulations, expected {exp_sims}")
        if rec["n_queries"] != exp_queries:
            problems.append(
                f"step {i}: {rec['n_queries']} queries, expected {exp_queries}")
        exp_dists = iters if use_cem else 1
        if len(rec["distributions"]) != exp_dists:
            problems.append(
                f"step {i}: {len(rec['distributions'])} distributions, "
                f"expected {exp_dists}")
        for d in rec["distributions"]:
            std = np.asarray(d["std"])
            # dims frozen by the task (needs_rotation/needs_fingers false) are
            # recorded with a negligible std and exempt from the floor
            frozen = np.isclose(std, 1e-6, rtol=0.0, atol=1e-9)
            if np.any((std < std_floor - 1e-12) & ~frozen):
                problems.append(f"step {i}: distribution std below floor")
        view = rec["chosen_view"]
        if use_views:
            if view == prev_view:
                problems.append(f"step {i}: repeated view '{view}'")
        else:
            if view != "top_down":
                problems.append(f"step {i}: view '{view}' with use_views=false")
        prev_view = view
        if ws is not None:
            pos = np.asarray(rec["chosen_action"]["position"])
            lo = np.asarray(ws["min"])
            hi = np.asarray(ws["max"])
            if np.any(pos < lo - 1e-12) or np.any(pos > hi + 1e-12):
                problems.append(f"step {i}: chosen action outside workspace")
        rv = np.asarray(rec["chosen_action"]["rotvec"])
        if np.linalg.norm(rv) > np.pi + 1e-9:
            problems.append(f"step {i}: chosen action rotation not canonical")

    if trace.terminal is not None:
        if trace.terminal["status"] == "SUCCESS":
            final_ok = trace.terminal.get("success") and (
                not trace.steps or trace.steps[-1]["success"])
            if not final_ok:
                problems.append("terminal SUCCESS without final success flag")
    else:
        problems.append("trace has no terminal record")
    return problems

"""Command-line entry point: validate, gen-scene, plan, replay, render, stub-server."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import scenes, stubserver
from .config import ConfigError, build_planner_config, build_sim_config, \
    critic_settings, load_run_config
from .critic import make_critic
from .render import render_composite, save_pfm, save_png
from .scene import SceneError, load_scene
from .sim import initial_gripper_state
from .trace import TraceError, read_trace, replay


def _err(message: str, code: str = "error") -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="twinplan",
        description="MPC planning in a rigid-body digital twin with a "
                    "pluggable outcome critic")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="load and validate a scene file")
    v.add_argument("--scene", required=True)

    g = sub.add_parser("gen-scene", help="generate a seeded fixture scene")
    g.add_argument("--template", required=True, choices=scenes.TEMPLATES)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    pl = sub.add_parser("plan", help="run a planning episode")
    pl.add_argument("--scene", required=True)
    pl.add_argument("--config", help="run-config INI file")
    pl.add_argument("--critic", choices=("oracle", "random", "remote"))
    pl.add_argument("--endpoint")
    pl.add_argument("--model")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--out", help="trace output path (.trace.jsonl)")
    pl.add_argument("--no-views", action="store_true")
    pl.add_argument("--no-subtasks", action="store_true")
    pl.add_argument("--no-cem", action="store_true")
    pl.add_argument("--steps", type=int, help="step budget")
    pl.add_argument("--samples", type=int, help="candidate actions per iteration")
    pl.add_argument("--group-size", type=int)
    pl.add_argument("--iters", type=int, help="CEM iterations")

    r = sub.add_parser("replay", help="re-execute a trace and verify it")
    r.add_argument("--trace", required=True)
    r.add_argument("--scene", required=True)

    rd = sub.add_parser("render", help="render one view of a scene to PNG")
    rd.add_argument("--scene", required=True)
    rd.add_argument("--view", required=True,
                    choices=("front", "left", "right", "top_down"))
    rd.add_argument("--out", required=True)
    rd.add_argument("--depth-out", help="optional PFM depth dump")

    s = sub.add_parser("stub-server", help="serve scripted critic replies")
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--script", required=True)
    return p


def _cmd_plan(args) -> int:
    run_config = {}
    if args.config:
        run_config = load_run_config(args.config)
    planner_overrides = {
        "n_samples": args.samples,
        "group_size": args.group_size,
        "iterations": args.iters,
        "step_budget": args.steps,
        "episode_seed": args.seed,
    }
    if args.no_views:
        planner_overrides["use_views"] = False
    if args.no_subtasks:
        planner_overrides["use_subtasks"] = False
    if args.no_cem:
        planner_overrides["use_cem"] = False
    try:
        config = build_planner_config(run_config, planner_overrides)
    except (ConfigError, ValueError) as exc:
        _err(str(exc), code="usage")
        return 2
    sim_config = build_sim_config(run_config)
    csettings = critic_settings(run_config, {
        "kind": args.critic, "endpoint": args.endpoint, "model": args.model})
    kind = csettings.pop("kind", "oracle")
    try:
        critic = make_critic(kind, **{
            k: v for k, v in csettings.items()
            if k in ("scoring", "seed", "endpoint", "model", "timeout",
                     "retries", "backoff")})
    except ValueError as exc:
        _err(str(exc), code="usage")
        return 2

    scene = load_scene(args.scene)
    from .planner import plan_episode  # deferred: keeps light commands fast
    t0 = time.monotonic()
    trace = plan_episode(scene, critic, config, sim_config=sim_config,
                         trace_path=args.out, scene_path=args.scene)
    wall = time.monotonic() - t0
    summary = {
        "status": trace.status,
        "steps": len(trace.steps),
        "wall_time_s": round(wall, 3),
        "queries": sum(s["n_queries"] for s in trace.steps),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0 if trace.status == "SUCCESS" else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            load_scene(args.scene)
            return 0
        if args.command == "gen-scene":
            scenes.gen_scene(args.template, args.seed, args.out)
            return 0
        if args.command == "plan":
            return _cmd_plan(args)
        if args.command == "replay":
            trace = read_trace(args.trace)
            scene = load_scene(args.scene)
            replay(trace, scene, scene_path=args.scene)
            print(json.dumps({"status": "ok", "steps": len(trace.steps)}))
            return 0
        if args.command == "render":
            scene = load_scene(args.scene)
            out = render_composite(scene, initial_gripper_state(scene),
                                   scene.cameras[args.view])
            save_png(out.color, args.out)
            if args.depth_out:
                save_pfm(out.depth, args.depth_out)
            return 0
        if args.command == "stub-server":
            stubserver.serve_forever(args.port, args.script)
            return 0
    except (SceneError, TraceError, ConfigError, OSError) as exc:
        _err(str(exc))
        return 1
    except ValueError as exc:
        _err(str(exc), code="usage")
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

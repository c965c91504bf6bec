"""Render the four canonical views of a generated scene to PNG files.

Usage: python demos/render_views.py [--template pick-place] [--out-dir out]
"""
import argparse
import tempfile
from pathlib import Path

from twinplan.render import render_views, save_png
from twinplan.scene import load_scene
from twinplan.scenes import TEMPLATES, gen_scene
from twinplan.sim import initial_gripper_state


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--template", default="pick-place", choices=TEMPLATES)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()

    out_dir = Path(args.out_dir or tempfile.mkdtemp(prefix="twinplan-views-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    scene_path = out_dir / f"{args.template}.scene"
    gen_scene(args.template, args.seed, scene_path)
    scene = load_scene(scene_path)

    views = render_views(scene, initial_gripper_state(scene), scene.cameras)
    for name, img in views.items():
        path = out_dir / f"{args.template}_{name}.png"
        save_png(img, path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()

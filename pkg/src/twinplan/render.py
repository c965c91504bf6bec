"""Software point-splat rasterizer with depth buffers and depth compositing."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image

from .cameras import Camera, CameraRig, world_to_camera
from .scene import SceneTwin
from .sim import GripperState, finger_obbs

BACKGROUND_RGB = np.array([64, 64, 64], dtype=np.uint8)

GRIPPER_BASE_RGB = np.array([186.0, 186.0, 198.0])
LIGHT_DIR = np.array([-0.45, 0.32, -0.83]) / np.linalg.norm([-0.45, 0.32, -0.83])


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf where empty


def new_output(camera: Camera) -> RenderOutput:
    color = np.tile(BACKGROUND_RGB, (camera.height, camera.width, 1))
    depth = np.full((camera.height, camera.width), np.inf)
    return RenderOutput(color, depth)


def render_splats(scene: SceneTwin, camera: Camera) -> RenderOutput:
    """Rasterize splats as filled discs with per-pixel depth test and alpha blend."""
    out = new_output(camera)
    n = len(scene.splats)
    if n == 0:
        return out
    cam_pts = world_to_camera(scene.splats.positions, camera)
    z = cam_pts[:, 2]
    vis = z > camera.near
    if not vis.any():
        return out
    idx = np.nonzero(vis)[0]
    px = camera.fx * cam_pts[idx, 0] / z[idx] + camera.cx
    py = camera.fy * cam_pts[idx, 1] / z[idx] + camera.cy
    pr = np.maximum(1.0, camera.fx * scene.splats.radii[idx] / z[idx])
    colors = scene.splats.colors[idx].astype(float)
    alphas = scene.splats.opacities[idx]
    depths = z[idx]
    h, w = camera.height, camera.width
    color = out.color.astype(float)
    depth = out.depth
    for k in range(len(idx)):
        x0 = max(int(np.ceil(px[k] - pr[k])), 0)
        x1 = min(int(np.floor(px[k] + pr[k])), w - 1)
        y0 = max(int(np.ceil(py[k] - pr[k])), 0)
        y1 = min(int(np.floor(py[k] + pr[k])), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        dx = xs - px[k]
        dy = ys - py[k]
        mask = dx[None, :] ** 2 + dy[:, None] ** 2 <= pr[k] ** 2
        sub_depth = depth[y0:y1 + 1, x0:x1 + 1]
        write = mask & (depths[k] < sub_depth)
        if not write.any():
            continue
        sub_color = color[y0:y1 + 1, x0:x1 + 1]
        a = alphas[k]
        if a >= 1.0:
            sub_color[write] = colors[k]
        else:
            sub_color[write] = a * colors[k] + (1.0 - a) * sub_color[write]
        sub_depth[write] = depths[k]
    out.color = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    out.depth = depth
    return out


def _raster_triangle(color: np.ndarray, depth: np.ndarray,
                     pts: np.ndarray, zs: np.ndarray, rgb: np.ndarray) -> None:
    """Fill one screen-space triangle with affine depth interpolation."""
    h, w = depth.shape
    area = ((pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
            - (pts[1, 1] - pts[0, 1]) * (pts[2, 0] - pts[0, 0]))
    if abs(area) < 1e-12:
        return
    x0 = max(int(np.ceil(pts[:, 0].min())), 0)
    x1 = min(int(np.floor(pts[:, 0].max())), w - 1)
    y0 = max(int(np.ceil(pts[:, 1].min())), 0)
    y1 = min(int(np.floor(pts[:, 1].max())), h - 1)
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    gx, gy = np.meshgrid(xs, ys)

    def edge(a, b):
        return (b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])

    w0 = edge(pts[1], pts[2])
    w1 = edge(pts[2], pts[0])
    w2 = edge(pts[0], pts[1])
    if area < 0:
        w0, w1, w2, a = -w0, -w1, -w2, -area
    else:
        a = area
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not inside.any():
        return
    z = (w0 * zs[0] + w1 * zs[1] + w2 * zs[2]) / a
    sub_depth = depth[y0:y1 + 1, x0:x1 + 1]
    write = inside & (z < sub_depth)
    if not write.any():
        return
    color[y0:y1 + 1, x0:x1 + 1][write] = rgb
    sub_depth[write] = z[write]


_BOX_FACES = [
    # (corner indices, outward normal axis, sign); corners indexed by bits zyx
    ([0, 1, 3, 2], 2, -1),  # -z
    ([4, 6, 7, 5], 2, 1),   # +z
    ([0, 4, 5, 1], 1, -1),  # -y
    ([2, 3, 7, 6], 1, 1),   # +y
    ([0, 2, 6, 4], 0, -1),  # -x
    ([1, 5, 7, 3], 0, 1),   # +x
]


def _box_triangles(center: np.ndarray, rot: np.ndarray, half: np.ndarray):
    """12 world-space triangles with outward face normals for one box."""
    corners = np.array([
        [sx * half[0], sy * half[1], sz * half[2]]
        for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)
    ])
    world = corners @ rot.T + center
    tris = []
    for quad, axis, sign in _BOX_FACES:
        n = sign * rot[:, axis]
        a, b, c, d = (world[i] for i in quad)
        tris.append((np.array([a, b, c]), n))
        tris.append((np.array([a, c, d]), n))
    return tris


def render_gripper(gripper: GripperState, camera: Camera) -> RenderOutput:
    """Flat-shaded render of the two finger boxes at their open/closed offsets."""
    out = new_output(camera)
    color = out.color
    depth = out.depth
    closed = gripper.fingers == "closed"
    for center, rot, half in finger_obbs(gripper.pose, closed):
        for verts, normal in _box_triangles(center, rot, half):
            cam_v = world_to_camera(verts, camera)
            if np.any(cam_v[:, 2] <= camera.near):
                continue
            zs = cam_v[:, 2]
            pts = np.stack([
                camera.fx * cam_v[:, 0] / zs + camera.cx,
                camera.fy * cam_v[:, 1] / zs + camera.cy,
            ], axis=1)
            intensity = 0.30 + 0.70 * max(0.0, float(normal @ (-LIGHT_DIR)))
            rgb = np.clip(np.rint(GRIPPER_BASE_RGB * intensity), 0, 255).astype(np.uint8)
            _raster_triangle(color, depth, pts, zs, rgb)
    return out


def composite(background: RenderOutput, foreground: RenderOutput) -> RenderOutput:
    """Per-pixel depth-min merge; equal depths resolve to the foreground."""
    if background.color.shape != foreground.color.shape:
        raise ValueError("composite: dimension mismatch")
    fg_wins = (foreground.depth <= background.depth) & np.isfinite(foreground.depth)
    color = np.where(fg_wins[..., None], foreground.color, background.color)
    depth = np.minimum(background.depth, foreground.depth)
    return RenderOutput(color, depth)


def render_views(scene: SceneTwin, gripper: GripperState,
                 rig: CameraRig) -> Dict[str, np.ndarray]:
    """Composite scene + gripper for all four canonical views."""
    out = {}
    for name, camera in rig.items():
        merged = composite(render_splats(scene, camera),
                           render_gripper(gripper, camera))
        out[name] = merged.color
    return out


def render_composite(scene: SceneTwin, gripper: GripperState,
                     camera: Camera) -> RenderOutput:
    return composite(render_splats(scene, camera), render_gripper(gripper, camera))


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(
        buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_png(image))


def save_pfm(depth: np.ndarray, path) -> None:
    """Grayscale PFM (little-endian) depth dump; +inf stored as 0."""
    d = np.asarray(depth, dtype=np.float32)
    d = np.where(np.isfinite(d), d, 0.0)
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(d).tobytes())

"""Bounding-box overlays on depth images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import AxisAlignedBox, RigidTransform, TriangleMesh
from .render import CameraModel, DepthImage

GT_COLOR = (255, 0, 0)
EST_COLOR = (0, 200, 0)
_EDGES = [(0, 1), (0, 2), (0, 4), (1, 3), (1, 5), (2, 3), (2, 6), (3, 7), (4, 5), (4, 6), (5, 7), (6, 7)]


def depth_to_rgb(depth: DepthImage) -> np.ndarray:
    """Grayscale rendering of depth: near is bright, background black."""
    z = depth.values
    hit = z > 0
    out = np.zeros(z.shape, dtype=np.uint8)
    if hit.any():
        lo, hi = z[hit].min(), z[hit].max()
        span = hi - lo if hi > lo else 1.0
        out[hit] = (255 - 191 * (z[hit] - lo) / span).astype(np.uint8)
    return np.repeat(out[..., None], 3, axis=2)


def _draw_box(draw: ImageDraw.ImageDraw, box: AxisAlignedBox, pose: RigidTransform, camera: CameraModel, color) -> None:
    uvz = camera.project(pose.transform_points(box.corners()))
    for a, b in _EDGES:
        if uvz[a, 2] > 0 and uvz[b, 2] > 0:
            draw.line([tuple(uvz[a, :2]), tuple(uvz[b, :2])], fill=color, width=1)


def draw_overlay(depth: DepthImage, camera: CameraModel, mesh: TriangleMesh, gt: RigidTransform,
                 est: RigidTransform) -> Image.Image:
    """Model-frame bounding box of ``mesh`` at the ground-truth (red) and estimated (green) poses."""
    img = Image.fromarray(depth_to_rgb(depth), mode="RGB")
    draw = ImageDraw.Draw(img)
    box = mesh.bounds()
    _draw_box(draw, box, gt, camera, GT_COLOR)
    _draw_box(draw, box, est, camera, EST_COLOR)
    return img


def write_overlay(path, depth: DepthImage, camera: CameraModel, mesh: TriangleMesh, gt: RigidTransform,
                  est: RigidTransform) -> Path:
    path = Path(path)
    draw_overlay(depth, camera, mesh, gt, est).save(path, format="PNG")
    return path

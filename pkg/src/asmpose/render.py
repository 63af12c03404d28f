"""Pinhole ray casting against posed triangle meshes.

Camera frame convention: x right, y down, z along the optical axis. The ray
through pixel ``(u, v)`` has direction ``((u - cx) / fx, (v - cy) / fy, 1)``,
so the ray parameter of a hit is its z-depth.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import PointCloud, RigidTransform, TriangleMesh, centroid, compose, invert

_DET_EPS = 1e-18
_T_MIN = 1e-9
_LEAF = 8


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_pose(self, pose: RigidTransform) -> "CameraModel":
        return dataclasses.replace(self, pose=pose)

    def project(self, world_points) -> np.ndarray:
        """Pixel coordinates ``(u, v)`` and camera z of world points, shape (n, 3)."""
        p = invert(self.pose).transform_points(world_points)
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[:, 0] / z + self.cx
            v = self.fy * p[:, 1] / z + self.cy
        return np.column_stack([u, v, z])

    def ray_directions(self) -> np.ndarray:
        """Camera-frame direction (dz = 1) for every pixel, row-major, shape (h*w, 3)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        dx = (u.reshape(-1) - self.cx) / self.fx
        dy = (v.reshape(-1) - self.cy) / self.fy
        return np.column_stack([dx, dy, np.ones_like(dx)])


def default_camera(pose: RigidTransform | None = None) -> CameraModel:
    """640x480 preset with fx = fy = 615 and the principal point at the image center."""
    return CameraModel(615.0, 615.0, 320.0, 240.0, 640, 480, pose or RigidTransform.identity())


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel z-depth in meters; 0 means no surface."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("depth values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class LabelImage:
    """Per-pixel object id; 0 is background."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int64, copy=True)
        if v.ndim != 2:
            raise ValueError("label image must be 2-D")
        if np.any(v < 0):
            raise ValueError("label ids must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def ids(self) -> set[int]:
        return set(int(i) for i in np.unique(self.values)) - {0}


# ---------------------------------------------------------------- intersection kernel


class _Triangles:
    """Camera-frame triangles prepared for Moller-Trumbore against rays from the origin."""

    def __init__(self, v0: np.ndarray, v1: np.ndarray, v2: np.ndarray, labels: np.ndarray):
        self.v0 = v0
        self.e1 = v1 - v0
        self.e2 = v2 - v0
        # tvec = origin - v0 = -v0 is ray independent, so is qvec = tvec x e1
        tx, ty, tz = -v0[:, 0], -v0[:, 1], -v0[:, 2]
        e1, e2 = self.e1, self.e2
        self.tvec = np.column_stack([tx, ty, tz])
        self.qvec = np.column_stack([ty * e1[:, 2] - tz * e1[:, 1], tz * e1[:, 0] - tx * e1[:, 2], tx * e1[:, 1] - ty * e1[:, 0]])
        self.tq = e2[:, 0] * self.qvec[:, 0] + e2[:, 1] * self.qvec[:, 1] + e2[:, 2] * self.qvec[:, 2]
        self.labels = labels
        lo = np.minimum(np.minimum(v0, v1), v2)
        hi = np.maximum(np.maximum(v0, v1), v2)
        self.lo, self.hi = lo, hi

    def __len__(self) -> int:
        return len(self.v0)

    def intersect(self, dirs: np.ndarray, ray: np.ndarray, tri: np.ndarray):
        """Evaluate ray/triangle pairs; returns (hit mask, t). Every operation is elementwise."""
        dx, dy = dirs[ray, 0], dirs[ray, 1]
        e1, e2 = self.e1[tri], self.e2[tri]
        px = dy * e2[:, 2] - e2[:, 1]
        py = e2[:, 0] - dx * e2[:, 2]
        pz = dx * e2[:, 1] - dy * e2[:, 0]
        det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
        ok = np.abs(det) > _DET_EPS
        inv = 1.0 / np.where(ok, det, 1.0)
        tv = self.tvec[tri]
        u = (tv[:, 0] * px + tv[:, 1] * py + tv[:, 2] * pz) * inv
        q = self.qvec[tri]
        v = (dx * q[:, 0] + dy * q[:, 1] + q[:, 2]) * inv
        t = self.tq[tri] * inv
        ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > _T_MIN)
        return ok, t


def _scene_triangles(objects, camera: CameraModel) -> _Triangles:
    world_to_cam = invert(camera.pose)
    v0s, v1s, v2s, labels = [], [], [], []
    for mesh, pose, obj_id in objects:
        if obj_id <= 0:
            raise ValueError("object ids must be positive")
        v = compose(world_to_cam, pose).transform_points(mesh.vertices)
        tri = mesh.triangles
        v0s.append(v[tri[:, 0]])
        v1s.append(v[tri[:, 1]])
        v2s.append(v[tri[:, 2]])
        labels.append(np.full(len(tri), obj_id, dtype=np.int64))
    if not v0s:
        z = np.zeros((0, 3))
        return _Triangles(z, z, z, np.zeros(0, dtype=np.int64))
    return _Triangles(np.concatenate(v0s), np.concatenate(v1s), np.concatenate(v2s), np.concatenate(labels))


class _Bvh:
    """Median-split bounding volume hierarchy over triangle boxes."""

    def __init__(self, tris: _Triangles):
        self.lo, self.hi, self.children, self.ranges = [], [], [], []
        n = len(tris)
        self.order = np.arange(n)
        if n == 0:
            return
        centers = (tris.lo + tris.hi) * 0.5
        pad = 1e-9 * (1.0 + np.abs(np.concatenate([tris.lo, tris.hi])).max())
        stack = [(0, n, -1, 0)]
        while stack:
            start, end, parent, side = stack.pop()
            ids = self.order[start:end]
            node = len(self.lo)
            self.lo.append(tris.lo[ids].min(axis=0) - pad)
            self.hi.append(tris.hi[ids].max(axis=0) + pad)
            self.children.append([-1, -1])
            self.ranges.append((start, end))
            if parent >= 0:
                self.children[parent][side] = node
            if end - start <= _LEAF:
                continue
            c = centers[ids]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (end - start) // 2
            part = np.argsort(c[:, axis], kind="stable")
            self.order[start:end] = ids[part]
            stack.append((start + mid, end, node, 1))
            stack.append((start, start + mid, node, 0))

    def rays_hitting(self, node: int, dirs: np.ndarray, rays: np.ndarray) -> np.ndarray:
        lo, hi = self.lo[node], self.hi[node]
        tenter = np.full(len(rays), lo[2])
        texit = np.full(len(rays), hi[2])
        for a in (0, 1):
            d = dirs[rays, a]
            nz = d != 0.0
            safe = np.where(nz, d, 1.0)
            t1 = np.where(nz, lo[a] / safe, -np.inf)
            t2 = np.where(nz, hi[a] / safe, np.inf)
            inside = (lo[a] <= 0.0) & (0.0 <= hi[a])
            if not inside:
                t1 = np.where(nz, t1, np.inf)
                t2 = np.where(nz, t2, -np.inf)
            tenter = np.maximum(tenter, np.minimum(t1, t2))
            texit = np.minimum(texit, np.maximum(t1, t2))
        return rays[texit >= np.maximum(tenter, 0.0)]


def _closest_hits(n_rays: int, hit_ray, hit_tri, hit_t, labels):
    depth = np.zeros(n_rays)
    label = np.zeros(n_rays, dtype=np.int64)
    if len(hit_ray) == 0:
        return depth, label
    order = np.lexsort((hit_tri, hit_t, hit_ray))
    r = hit_ray[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = r[1:] != r[:-1]
    sel = order[first]
    depth[hit_ray[sel]] = hit_t[sel]
    label[hit_ray[sel]] = labels[hit_tri[sel]]
    return depth, label


def _cast_bvh(tris: _Triangles, dirs: np.ndarray):
    bvh = _Bvh(tris)
    hits_r, hits_f, hits_t = [], [], []
    if len(tris):
        stack = [(0, np.arange(len(dirs)))]
        while stack:
            node, rays = stack.pop()
            rays = bvh.rays_hitting(node, dirs, rays)
            if len(rays) == 0:
                continue
            left, right = bvh.children[node]
            if left < 0:
                start, end = bvh.ranges[node]
                leaf_tris = bvh.order[start:end]
                ray = np.repeat(rays, len(leaf_tris))
                tri = np.tile(leaf_tris, len(rays))
                ok, t = tris.intersect(dirs, ray, tri)
                hits_r.append(ray[ok])
                hits_f.append(tri[ok])
                hits_t.append(t[ok])
            else:
                stack.append((right, rays))
                stack.append((left, rays))
    return _concat_hits(hits_r, hits_f, hits_t)


def _cast_brute(tris: _Triangles, dirs: np.ndarray, chunk: int = 1 << 20):
    hits_r, hits_f, hits_t = [], [], []
    n_rays, n_tri = len(dirs), len(tris)
    per = max(1, chunk // max(n_rays, 1))
    for start in range(0, n_tri, per):
        tri_ids = np.arange(start, min(n_tri, start + per))
        ray = np.tile(np.arange(n_rays), len(tri_ids))
        tri = np.repeat(tri_ids, n_rays)
        ok, t = tris.intersect(dirs, ray, tri)
        hits_r.append(ray[ok])
        hits_f.append(tri[ok])
        hits_t.append(t[ok])
    return _concat_hits(hits_r, hits_f, hits_t)


def _concat_hits(r, f, t):
    if not r:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(r), np.concatenate(f), np.concatenate(t)


def raycast_scene(objects: Sequence[tuple[TriangleMesh, RigidTransform, int]], camera: CameraModel, method: str = "bvh"):
    """Render z-depth and object labels by closest-hit ray casting.

    ``objects`` holds ``(mesh, model_to_world_pose, id)`` with unique positive
    ids. Pixels without a hit get depth 0 and label 0. ``method`` selects the
    BVH traversal (``"bvh"``) or the all-pairs reference (``"brute"``); both
    evaluate identical ray/triangle arithmetic, and ties in depth go to the
    lower triangle index, so their outputs are bit-identical.
    """
    ids = [o[2] for o in objects]
    if len(set(ids)) != len(ids):
        raise ValueError("object ids must be unique")
    tris = _scene_triangles(objects, camera)
    dirs = camera.ray_directions()
    if method == "bvh":
        hits = _cast_bvh(tris, dirs)
    elif method == "brute":
        hits = _cast_brute(tris, dirs)
    else:
        raise ValueError(f"unknown ray casting method {method!r}")
    depth, label = _closest_hits(len(dirs), *hits, tris.labels)
    shape = (camera.height, camera.width)
    return DepthImage(depth.reshape(shape)), LabelImage(label.reshape(shape))


def depth_to_cloud(depth: DepthImage, camera: CameraModel, mask: LabelImage | None = None, ids: int | Iterable[int] | None = None) -> PointCloud:
    """Back-project depth pixels to world-frame points.

    With a mask, only pixels whose label is in ``ids`` are used. Points are
    emitted in row-major pixel order.
    """
    z = depth.values
    if (depth.height, depth.width) != (camera.height, camera.width):
        raise ValueError("depth image size does not match the camera")
    sel = z > 0
    if mask is not None:
        if mask.values.shape != z.shape:
            raise ValueError("mask and depth image sizes differ")
        if ids is None:
            sel &= mask.values > 0
        else:
            id_list = [ids] if isinstance(ids, (int, np.integer)) else list(ids)
            sel &= np.isin(mask.values, id_list)
    v, u = np.nonzero(sel)
    zz = z[v, u]
    pts = np.column_stack([(u - camera.cx) * zz / camera.fx, (v - camera.cy) * zz / camera.fy, zz])
    return PointCloud(camera.pose.transform_points(pts))


def render_source_cloud(base_mesh: TriangleMesh, target: PointCloud, camera: CameraModel):
    """Synthesize the source cloud for registration.

    The mesh is translated so its vertex centroid sits on the centroid of
    ``target``, then rendered with ``camera``. Returns the back-projected hits
    and the translation-only placement transform.
    """
    if len(target) == 0:
        raise ValueError("target cloud is empty")
    placement = RigidTransform.from_translation(centroid(target) - base_mesh.vertex_centroid())
    depth, label = raycast_scene([(base_mesh, placement, 1)], camera)
    cloud = depth_to_cloud(depth, camera, label, 1)
    if len(cloud) == 0:
        raise ValueError("source not visible")
    return cloud, placement

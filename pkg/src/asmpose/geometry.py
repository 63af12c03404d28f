"""Rigid transforms, point clouds, triangle meshes and the helpers around them.

All lengths are meters. Transforms follow the homogeneous-matrix convention:
``compose(a, b)`` is the matrix product ``a @ b`` and maps a point through
``b`` first, then ``a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-6
DEGENERATE_AREA = 1e-12


def _frozen(a, dtype=np.float64, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, shape=(3, 3))
        t = _frozen(self.translation, shape=(3,))
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite transform")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or np.linalg.det(r) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_quaternion(cls, q, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Build from a unit quaternion ordered ``(w, x, y, z)``."""
        w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        r = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(r, translation)

    def as_quaternion(self) -> np.ndarray:
        """Return ``(w, x, y, z)`` with ``w >= 0``."""
        r = self.rotation
        tr = np.trace(r)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        return q if q[0] >= 0 else -q

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def transform_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Homogeneous product ``a @ b``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about ``axis`` (normalized here)."""
    k = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(k)
    if n == 0:
        return np.eye(3)
    k = k / n
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def rotation_about(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(axis_angle_matrix(axis, angle), translation)


def exp_se3(omega, v) -> RigidTransform:
    """Small-motion update: rotation ``exp([omega]x)`` followed by translation ``v``."""
    omega = np.asarray(omega, dtype=np.float64)
    angle = float(np.linalg.norm(omega))
    r = axis_angle_matrix(omega, angle) if angle > 0 else np.eye(3)
    return RigidTransform(r, v)


def random_transform(rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
    """Uniformly random rotation (via a random unit quaternion) and a box-uniform translation."""
    q = rng.normal(size=4)
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform.from_quaternion(q, t)


def rotation_angle(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle (radians) between the rotations of two transforms."""
    c = (np.trace(a.rotation.T @ b.rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points with optional unit normals.

    ``degenerate`` is set by normal estimation for points whose normal could
    not be fitted (fewer than three neighbors).
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64, copy=True)
        if p.size == 0:
            p = p.reshape(0, 3)
        p = p.reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.array(self.normals, dtype=np.float64, copy=True).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError(f"{len(n)} normals for {len(p)} points")
            if len(n) and np.abs(np.linalg.norm(n, axis=1) - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)
        if self.degenerate is not None:
            d = np.array(self.degenerate, dtype=bool, copy=True).reshape(-1)
            d.setflags(write=False)
            object.__setattr__(self, "degenerate", d)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def select(self, index) -> "PointCloud":
        n = None if self.normals is None else self.normals[index]
        d = None if self.degenerate is None else self.degenerate[index]
        return PointCloud(self.points[index], n, d)

    def with_normals(self, normals, degenerate=None) -> "PointCloud":
        return PointCloud(self.points, normals, degenerate)


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Move points by ``t``; normals are rotated only."""
    pts = cloud.points @ t.rotation.T + t.translation
    nrm = None if cloud.normals is None else cloud.normals @ t.rotation.T
    if nrm is not None and len(nrm):
        nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    return PointCloud(pts, nrm, cloud.degenerate)


def centroid(cloud: PointCloud) -> np.ndarray:
    if len(cloud) == 0:
        raise ValueError("centroid of an empty cloud")
    return cloud.points.mean(axis=0)


@dataclass(frozen=True)
class AxisAlignedBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.min, shape=(3,))
        hi = _frozen(self.max, shape=(3,))
        if np.any(lo > hi):
            raise ValueError("box min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_points(cls, points) -> "AxisAlignedBox":
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(p) == 0:
            raise ValueError("bounding box of no points")
        return cls(p.min(axis=0), p.max(axis=0))

    def corners(self) -> np.ndarray:
        """The 8 corners; index bits (x, y, z) select min (0) or max (1)."""
        lo, hi = self.min, self.max
        return np.array(
            [[(lo, hi)[(i >> 2) & 1][0], (lo, hi)[(i >> 1) & 1][1], (lo, hi)[i & 1][2]] for i in range(8)]
        )

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def contains(self, points, eps: float = 0.0) -> np.ndarray:
        p = np.asarray(points).reshape(-1, 3)
        return np.all((p >= self.min - eps) & (p <= self.max + eps), axis=1)


class TriangleMesh:
    """Indexed triangle set.

    Triangles with area below ``DEGENERATE_AREA`` are dropped on construction;
    the number dropped is logged and kept in ``dropped_triangles``.
    """

    def __init__(self, vertices, triangles):
        v = np.array(vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        f = np.array(triangles, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        areas = _triangle_areas(v, f)
        keep = areas >= DEGENERATE_AREA
        self.dropped_triangles = int((~keep).sum())
        if self.dropped_triangles:
            logger.warning("dropped %d degenerate triangles", self.dropped_triangles)
            f = f[keep]
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.triangles = f

    def __repr__(self) -> str:
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.triangles)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def vertex_centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounds(self) -> AxisAlignedBox:
        return AxisAlignedBox.from_points(self.vertices)

    def transformed(self, t: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(t.transform_points(self.vertices), self.triangles)

    def scaled(self, factor: float) -> "TriangleMesh":
        return TriangleMesh(self.vertices * factor, self.triangles)

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += len(m.vertices)
        if not verts:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def _triangle_areas(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    if len(f) == 0:
        return np.zeros(0)
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-uniform surface sample with face normals.

    A triangle is picked with probability proportional to its area, then a
    point is drawn uniformly inside it with the square-root barycentric trick.
    """
    if mesh.is_empty:
        raise ValueError("empty mesh")
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    face = np.minimum(face, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    tri = mesh.triangles[face]
    a, b, c = (mesh.vertices[tri[:, i]] for i in range(3))
    pts = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c
    return PointCloud(pts, mesh.face_normals()[face])


def mesh_diameter(mesh: TriangleMesh) -> float:
    """Largest distance between two mesh vertices."""
    v = mesh.vertices
    if len(v) < 2:
        raise ValueError("diameter needs at least 2 vertices")
    cand = v
    if len(v) > 64:
        try:
            cand = v[ConvexHull(v).vertices]
        except QhullError:
            cand = v
    best = 0.0
    for start in range(0, len(cand), 512):
        block = cand[start : start + 512]
        d = np.sqrt(((block[:, None, :] - cand[None, :, :]) ** 2).sum(-1))
        best = max(best, float(d.max()))
    return best

"""Closed triangle meshes for simple solids, all centered on the origin."""
from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def box(sx: float, sy: float, sz: float) -> TriangleMesh:
    h = np.array([sx, sy, sz]) / 2.0
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64) * h
    # vertex index = 4*ix + 2*iy + iz; faces wound outward
    f = [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ]
    return TriangleMesh(v, f)


def _ring(radius: float, z: float, segments: int, phase: float = 0.0) -> np.ndarray:
    a = phase + 2 * np.pi * np.arange(segments) / segments
    return np.column_stack([radius * np.cos(a), radius * np.sin(a), np.full(segments, z)])


def prism(radius: float, height: float, segments: int = 48, phase: float = 0.0) -> TriangleMesh:
    """Right prism over a regular polygon; a cylinder for large ``segments``."""
    n = segments
    bottom = _ring(radius, -height / 2, n, phase)
    top = _ring(radius, height / 2, n, phase)
    v = np.vstack([bottom, top, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * n, 2 * n + 1
    f = []
    for i in range(n):
        j = (i + 1) % n
        f += [[i, j, n + j], [i, n + j, n + i], [cb, j, i], [ct, n + i, n + j]]
    return TriangleMesh(v, f)


def cylinder(radius: float, height: float, segments: int = 48) -> TriangleMesh:
    return prism(radius, height, segments)


def cone(radius: float, height: float, segments: int = 48) -> TriangleMesh:
    n = segments
    v = np.vstack([_ring(radius, -height / 2, n), [[0, 0, height / 2], [0, 0, -height / 2]]])
    apex, cb = n, n + 1
    f = []
    for i in range(n):
        j = (i + 1) % n
        f += [[i, j, apex], [cb, j, i]]
    return TriangleMesh(v, f)


def tube(inner_radius: float, outer_radius: float, height: float, segments: int = 48) -> TriangleMesh:
    """Hollow cylinder (open bore along z)."""
    if not 0 < inner_radius < outer_radius:
        raise ValueError("need 0 < inner_radius < outer_radius")
    n = segments
    ob, ot = _ring(outer_radius, -height / 2, n), _ring(outer_radius, height / 2, n)
    ib, it = _ring(inner_radius, -height / 2, n), _ring(inner_radius, height / 2, n)
    v = np.vstack([ob, ot, ib, it])
    f = []
    for i in range(n):
        j = (i + 1) % n
        f += [[i, j, n + j], [i, n + j, n + i]]  # outer wall
        f += [[2 * n + i, 3 * n + j, 2 * n + j], [2 * n + i, 3 * n + i, 3 * n + j]]  # inner wall
        f += [[n + i, n + j, 3 * n + j], [n + i, 3 * n + j, 3 * n + i]]  # top annulus
        f += [[i, 2 * n + j, j], [i, 2 * n + i, 2 * n + j]]  # bottom annulus
    return TriangleMesh(v, f)


def uv_sphere(radius: float, rings: int = 32, segments: int = 64) -> TriangleMesh:
    verts = [[0.0, 0.0, radius]]
    for i in range(1, rings):
        theta = np.pi * i / rings
        for j in range(segments):
            phi = 2 * np.pi * j / segments
            verts.append([radius * np.sin(theta) * np.cos(phi), radius * np.sin(theta) * np.sin(phi), radius * np.cos(theta)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1
    f = []
    for j in range(segments):
        f.append([0, 1 + j, 1 + (j + 1) % segments])
    for i in range(rings - 2):
        a0 = 1 + i * segments
        b0 = a0 + segments
        for j in range(segments):
            k = (j + 1) % segments
            f += [[a0 + j, b0 + j, b0 + k], [a0 + j, b0 + k, a0 + k]]
    last = 1 + (rings - 2) * segments
    for j in range(segments):
        f.append([south, last + (j + 1) % segments, last + j])
    return TriangleMesh(np.array(verts), f)


def icosphere(radius: float, subdivisions: int = 3) -> TriangleMesh:
    """Geodesic sphere; vertices lie exactly on the sphere, triangles are near-uniform."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriangleMesh(np.array(verts) * radius, f)


def plane(size_x: float, size_y: float) -> TriangleMesh:
    """Two-triangle rectangle in z = 0, normal +z."""
    hx, hy = size_x / 2, size_y / 2
    v = [[-hx, -hy, 0], [hx, -hy, 0], [hx, hy, 0], [-hx, hy, 0]]
    return TriangleMesh(v, [[0, 1, 2], [0, 2, 3]])

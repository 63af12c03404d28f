"""STL (ASCII and binary) and OBJ reading and writing."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh


class MeshFormatError(ValueError):
    pass


def load_mesh(path, scale: float = 1.0) -> TriangleMesh:
    """Load a triangle mesh and multiply coordinates by ``scale`` (e.g. 0.001 for mm files)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".stl":
        v, f = _read_stl(path)
    elif suffix == ".obj":
        v, f = _read_obj(path)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh format {suffix!r}")
    if len(f) == 0:
        raise MeshFormatError(f"{path}: no triangles")
    return TriangleMesh(v * scale, f)


def save_mesh(mesh: TriangleMesh, path, scale: float = 1.0) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".stl":
        _write_stl(mesh, path, scale)
    elif suffix == ".obj":
        _write_obj(mesh, path, scale)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh format {suffix!r}")


def _weld(corners: np.ndarray):
    """Merge bitwise-identical corner positions into shared vertices."""
    flat = corners.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    return verts, inverse.reshape(-1, 3)


def _read_stl(path: Path):
    data = path.read_bytes()
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * count == len(data):
            rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            tris = np.frombuffer(data, dtype=rec, count=count, offset=84)
            return _weld(tris["v"].astype(np.float64))
    text = data.decode("ascii", errors="replace")
    if not text.lstrip().startswith("solid"):
        raise MeshFormatError(f"{path}: not a valid STL file")
    coords = []
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            if len(parts) != 4:
                raise MeshFormatError(f"{path}: malformed vertex line {line.strip()!r}")
            coords.append([float(x) for x in parts[1:]])
    if len(coords) % 3:
        raise MeshFormatError(f"{path}: vertex count {len(coords)} is not a multiple of 3")
    return _weld(np.array(coords, dtype=np.float64).reshape(-1, 3, 3))


def _read_obj(path: Path):
    verts, faces = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise MeshFormatError(f"{path}:{lineno}: face with fewer than 3 vertices")
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _write_stl(mesh: TriangleMesh, path: Path, scale: float) -> None:
    v = mesh.vertices / scale
    tri = v[mesh.triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rec = np.zeros(len(tri), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tri
    header = b"binary STL".ljust(80, b" ")
    path.write_bytes(header + struct.pack("<I", len(tri)) + rec.tobytes())


def _write_obj(mesh: TriangleMesh, path: Path, scale: float) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in (mesh.vertices / scale).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    path.write_text("\n".join(lines) + "\n")

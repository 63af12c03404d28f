"""Surface normals and FPFH descriptors."""
from __future__ import annotations

import numpy as np
from scipy import sparse

from .geometry import PointCloud
from .spatial import KdTree

BINS = 11
DESCRIPTOR_DIM = 3 * BINS


def _neighborhoods(points: np.ndarray, radius: float, max_nn: int, tree: KdTree | None = None):
    tree = tree or KdTree(points)
    k = min(max_nn, len(points))
    idx, dist = tree.query(points, k=k, max_distance=radius)
    return idx, dist, idx < len(points)


def estimate_normals(cloud: PointCloud, radius: float, max_nn: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """PCA normals oriented toward ``viewpoint``.

    Each point uses its ``max_nn`` nearest neighbors within ``radius`` (itself
    included). Points with fewer than three neighbors get normal (0, 0, 1) and
    are marked in ``degenerate``.
    """
    if len(cloud) == 0:
        raise ValueError("normal estimation on an empty cloud")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    idx, _, valid = _neighborhoods(pts, radius, max_nn)
    count = valid.sum(axis=1)
    safe = np.where(valid, idx, 0)
    w = valid[..., None].astype(np.float64)
    nbr = pts[safe] * w
    mean = nbr.sum(axis=1) / np.maximum(count, 1)[:, None]
    centered = (pts[safe] - mean[:, None, :]) * w
    cov = np.einsum("nki,nkj->nij", centered, centered) / np.maximum(count, 1)[:, None, None]
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    to_view = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = (normals * to_view).sum(axis=1) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    degenerate = count < 3
    normals[degenerate] = (0.0, 0.0, 1.0)
    return PointCloud(pts, normals, degenerate)


def pair_features(p1, n1, p2, n2):
    """Darboux-frame features ``(theta, alpha, phi, distance)`` for point pairs.

    Vectorized over leading axes. The frame is anchored at whichever point's
    normal makes the smaller angle with the connecting line, which makes the
    features symmetric in the pair. Zero-length or degenerate pairs return
    zeros.
    """
    d = p2 - p1
    dist = np.sqrt((d * d).sum(-1))
    safe = np.where(dist > 0, dist, 1.0)
    a1 = (n1 * d).sum(-1) / safe
    a2 = (n2 * d).sum(-1) / safe
    swap = np.arccos(np.clip(np.abs(a1), -1, 1)) > np.arccos(np.clip(np.abs(a2), -1, 1))
    u = np.where(swap[..., None], n2, n1)
    other = np.where(swap[..., None], n1, n2)
    d = np.where(swap[..., None], -d, d)
    phi = np.where(swap, -a2, a1)
    v = np.cross(d, u)
    vn = np.sqrt((v * v).sum(-1))
    ok = (dist > 0) & (vn > 0)
    v = v / np.where(vn > 0, vn, 1.0)[..., None]
    w = np.cross(u, v)
    alpha = (v * other).sum(-1)
    theta = np.arctan2((w * other).sum(-1), (u * other).sum(-1))
    zero = np.zeros_like(dist)
    return (np.where(ok, theta, zero), np.where(ok, alpha, zero), np.where(ok, phi, zero), np.where(ok, dist, zero)), ok


def _bin(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    b = np.floor(BINS * (values - lo) / (hi - lo)).astype(np.int64)
    return np.clip(b, 0, BINS - 1)


def compute_spfh(cloud: PointCloud, radius: float, max_nn: int = 100):
    """Simplified point feature histograms plus the neighborhood used.

    Each of the three 11-bin sub-histograms of a point with at least one valid
    pair sums to 100. Returns ``(spfh, neighbor_index, neighbor_distance, mask)``
    where ``mask`` marks usable (non-self, non-duplicate) neighbors.
    """
    if cloud.normals is None:
        raise ValueError("normals required")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    if n == 0:
        return np.zeros((0, DESCRIPTOR_DIM)), np.zeros((0, 0), np.int64), np.zeros((0, 0)), np.zeros((0, 0), bool)
    idx, dist, valid = _neighborhoods(pts, radius, max_nn + 1)
    rows = np.arange(n)[:, None]
    # drop the query point itself and exact duplicates
    mask = valid & (idx != rows) & (dist > 0)
    safe = np.where(mask, idx, 0)
    (theta, alpha, phi, _), ok = pair_features(pts[:, None, :], nrm[:, None, :], pts[safe], nrm[safe])
    mask = mask & ok
    used = mask.sum(axis=1)
    incr = np.where(used > 0, 100.0 / np.maximum(used, 1), 0.0)
    weight = np.broadcast_to(incr[:, None], mask.shape)[mask]
    r = np.broadcast_to(rows, mask.shape)[mask]
    spfh = np.zeros((n, DESCRIPTOR_DIM))
    for offset, (vals, lo, hi) in enumerate(((alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -np.pi, np.pi))):
        cols = offset * BINS + _bin(vals[mask], lo, hi)
        spfh += np.bincount(r * DESCRIPTOR_DIM + cols, weights=weight, minlength=n * DESCRIPTOR_DIM).reshape(n, DESCRIPTOR_DIM)
    return spfh, idx, dist, mask


def compute_fpfh(cloud: PointCloud, radius: float, max_nn: int = 100) -> np.ndarray:
    """FPFH descriptors, one 33-vector per point.

    ``FPFH(p) = SPFH(p) + (1/K) * sum_k SPFH(p_k) / |p - p_k|`` over the ``K``
    usable neighbors of ``p``. Layout: alpha bins, phi bins, theta bins.
    """
    spfh, idx, dist, mask = compute_spfh(cloud, radius, max_nn)
    n = len(spfh)
    if n == 0:
        return spfh
    k = mask.sum(axis=1)
    w = np.where(mask, 1.0 / np.where(mask, dist, 1.0), 0.0) / np.maximum(k, 1)[:, None]
    rows = np.broadcast_to(np.arange(n)[:, None], mask.shape)[mask]
    weights = sparse.csr_matrix((w[mask], (rows, idx[mask])), shape=(n, n))
    return spfh + weights @ spfh

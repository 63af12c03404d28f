"""Global (RANSAC on FPFH matches) and local (point-to-plane ICP) registration."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .features import compute_fpfh, estimate_normals
from .geometry import PointCloud, RigidTransform, apply, compose, exp_se3
from .spatial import KdTree

logger = logging.getLogger(__name__)

_RANSAC_BATCH = 512


@dataclass
class RegistrationParams:
    """Registration settings.

    ``threshold_mode`` is ``"absolute"`` (``distance_threshold`` in meters) or
    ``"relative"`` (``relative_threshold`` times the base mesh diameter).
    ``voxel_size`` of ``None`` means ``0.2 * threshold``; ``icp_voxel_size`` of
    ``None`` means ICP runs on the same downsampled clouds as RANSAC.
    """

    distance_threshold: float = 0.036
    threshold_mode: str = "absolute"
    relative_threshold: float = 0.05
    edge_length_factor: float = 0.9
    ransac_max_iterations: int = 100_000
    ransac_sample_size: int = 3
    ransac_confidence: float = 0.999
    icp_max_iterations: int = 50
    icp_relative_fitness_eps: float = 1e-6
    icp_relative_rmse_eps: float = 1e-6
    voxel_size: Optional[float] = None
    icp_voxel_size: Optional[float] = None
    normal_radius_factor: float = 2.0
    fpfh_radius_factor: float = 5.0
    normal_max_nn: int = 30
    fpfh_max_nn: int = 100
    mutual_filter: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.threshold_mode not in ("absolute", "relative"):
            raise ValueError(f"threshold_mode must be 'absolute' or 'relative', got {self.threshold_mode!r}")
        positive = ("distance_threshold", "relative_threshold", "ransac_max_iterations", "ransac_sample_size",
                    "icp_max_iterations", "icp_relative_fitness_eps", "icp_relative_rmse_eps",
                    "normal_radius_factor", "fpfh_radius_factor", "normal_max_nn", "fpfh_max_nn")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("voxel_size", "icp_voxel_size"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.edge_length_factor <= 1:
            raise ValueError("edge_length_factor must lie in (0, 1]")
        if not 0 < self.ransac_confidence < 1:
            raise ValueError("ransac_confidence must lie in (0, 1)")
        if self.ransac_sample_size < 3:
            raise ValueError("ransac_sample_size must be at least 3")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def threshold(self, diameter: float | None = None) -> float:
        if self.threshold_mode == "absolute":
            return self.distance_threshold
        if diameter is None:
            raise ValueError("relative threshold needs the object diameter")
        return self.relative_threshold * diameter

    def resolved(self, diameter: float | None = None) -> "RegistrationParams":
        """Copy with an absolute threshold and explicit voxel size."""
        thr = self.threshold(diameter)
        voxel = self.voxel_size if self.voxel_size is not None else 0.2 * thr
        return dataclasses.replace(self, distance_threshold=thr, threshold_mode="absolute", voxel_size=voxel)

    @property
    def effective_voxel_size(self) -> float:
        if self.voxel_size is not None:
            return self.voxel_size
        if self.threshold_mode != "absolute":
            raise ValueError("voxel size depends on the object diameter; call resolved() first")
        return 0.2 * self.distance_threshold


_OPTIONAL_FLOATS = {"voxel_size", "icp_voxel_size"}


def params_to_text(params: RegistrationParams) -> str:
    lines = []
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def params_from_text(text: str, source: str = "<string>") -> RegistrationParams:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unlisted keys keep defaults."""
    types = {f.name: f.type for f in dataclasses.fields(RegistrationParams)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{source}:{lineno}: unknown parameter {key!r}")
        try:
            values[key] = _parse_value(key, value, types[key])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return RegistrationParams(**values)


def _parse_value(key: str, value: str, annotation: str):
    low = value.lower()
    if key in _OPTIONAL_FLOATS:
        return None if low in ("none", "") else float(value)
    if annotation == "bool":
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if annotation == "int":
        return int(value.replace("_", ""))
    if annotation == "float":
        return float(value)
    return value


def load_params(path) -> RegistrationParams:
    path = Path(path)
    return params_from_text(path.read_text(), str(path))


def save_params(params: RegistrationParams, path) -> None:
    Path(path).write_text(params_to_text(params))


@dataclass
class RegistrationResult:
    transform: RigidTransform
    fitness: float
    inlier_rmse: float
    correspondence_count: int
    flagged: bool = False
    iterations: int = 0
    transform_history: list = field(default_factory=list, repr=False)
    objective_history: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------- evaluation


def evaluate_alignment(source: PointCloud, target: PointCloud, t: RigidTransform, threshold: float):
    """Fitness and inlier RMSE of ``source`` moved by ``t`` against ``target``.

    An inlier is a target point whose nearest moved-source point lies within
    ``threshold``; fitness is the inlier count over the target point count and
    the RMSE is taken over those inlier distances. No inliers gives (0, 0).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("alignment evaluation needs non-empty clouds")
    moved = apply(t, PointCloud(source.points))
    _, d = KdTree(moved.points).query(target.points, k=1, max_distance=threshold)
    d = d[:, 0]
    inl = np.isfinite(d)
    count = int(inl.sum())
    if count == 0:
        return 0.0, 0.0
    return count / len(target), float(np.sqrt(np.mean(d[inl] ** 2)))


# ---------------------------------------------------------------- downsampling and matching


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One point per occupied voxel at the centroid of its members.

    Output is ordered by voxel key. Normals are averaged and renormalized; a
    voxel whose normals cancel keeps the normal of its first member.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(counts)
    pts = np.column_stack([np.bincount(inverse, weights=cloud.points[:, i], minlength=m) for i in range(3)]) / counts[:, None]
    normals = None
    if cloud.normals is not None:
        s = np.column_stack([np.bincount(inverse, weights=cloud.normals[:, i], minlength=m) for i in range(3)])
        norm = np.linalg.norm(s, axis=1)
        first = np.full(m, -1, dtype=np.int64)
        order = np.arange(len(inverse))[::-1]
        first[inverse[order]] = order
        fallback = cloud.normals[first]
        bad = norm < 1e-12
        s[~bad] /= norm[~bad, None]
        s[bad] = fallback[bad]
        normals = s
    return PointCloud(pts, normals)


def match_features(source_desc, target_desc, mutual: bool = False) -> np.ndarray:
    """Pair every source descriptor with its nearest target descriptor.

    Returns an ``(m, 2)`` array of ``(source_index, target_index)``. With
    ``mutual`` only pairs that are nearest neighbors both ways are kept.
    """
    s = np.asarray(source_desc, dtype=np.float64)
    t = np.asarray(target_desc, dtype=np.float64)
    if len(s) == 0 or len(t) == 0:
        raise ValueError("feature matching needs non-empty descriptor sets")
    fwd, _ = KdTree(t).query(s, k=1)
    fwd = fwd[:, 0]
    pairs = np.column_stack([np.arange(len(s)), fwd])
    if mutual:
        back, _ = KdTree(s).query(t, k=1)
        pairs = pairs[back[fwd, 0] == np.arange(len(s))]
    return pairs


# ---------------------------------------------------------------- closed-form fits


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform mapping ``src`` onto ``dst``."""
    r, t = _kabsch_batch(src[None], dst[None])
    return RigidTransform(r[0], t[0])


def _kabsch_batch(src: np.ndarray, dst: np.ndarray):
    cs = src.mean(axis=1, keepdims=True)
    cd = dst.mean(axis=1, keepdims=True)
    h = np.einsum("bki,bkj->bij", src - cs, dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(np.einsum("bji,bkj->bik", vt, u)))
    d = np.where(d == 0, 1.0, d)
    fix = np.ones((len(src), 3))
    fix[:, 2] = d
    r = np.einsum("bji,bj,bkj->bik", vt, fix, u)
    t = cd[:, 0, :] - np.einsum("bij,bj->bi", r, cs[:, 0, :])
    return r, t


# ---------------------------------------------------------------- RANSAC


def _required_iterations(inlier_ratio: float, sample_size: int, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0:
        return cap
    p = inlier_ratio ** sample_size
    if p >= 1:
        return 1
    return min(cap, int(math.ceil(math.log(1 - confidence) / math.log(1 - p))))


def ransac_global(source: PointCloud, target: PointCloud, correspondences, params: RegistrationParams) -> RegistrationResult:
    """RANSAC over feature correspondences with edge-length and distance pruning.

    Hypotheses are drawn in batches from a generator seeded with
    ``params.seed`` and visited in draw order, so the outcome matches a
    sequential loop over the same draws. A hypothesis ranks by inlier count,
    then by lower inlier RMSE. The loop stops once the iteration count reaches
    what the confidence level requires for the best inlier ratio so far. The
    winner is refit on all of its inliers.
    """
    corr = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
    k = params.ransac_sample_size
    if len(corr) < k:
        raise ValueError("insufficient correspondences")
    thr = params.distance_threshold
    f = params.edge_length_factor
    src = source.points[corr[:, 0]]
    dst = target.points[corr[:, 1]]
    c = len(corr)
    rng = np.random.default_rng(params.seed)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    pi = np.array([p[0] for p in pairs])
    pj = np.array([p[1] for p in pairs])

    best = None  # (count, sse, iteration, R, t)
    required = params.ransac_max_iterations
    done = 0
    while done < required:
        b = min(_RANSAC_BATCH, params.ransac_max_iterations - done)
        sample = rng.integers(0, c, size=(b, k))
        ss, sd = src[sample], dst[sample]
        ok = np.ones(b, dtype=bool)
        srt = np.sort(sample, axis=1)
        ok &= np.all(srt[:, 1:] != srt[:, :-1], axis=1)
        es = np.linalg.norm(ss[:, pi] - ss[:, pj], axis=-1)
        et = np.linalg.norm(sd[:, pi] - sd[:, pj], axis=-1)
        ok &= np.all((es > f * et) & (et > f * es), axis=1)
        rot = np.zeros((b, 3, 3))
        tr = np.zeros((b, 3))
        if ok.any():
            r_ok, t_ok = _kabsch_batch(ss[ok], sd[ok])
            rot[ok], tr[ok] = r_ok, t_ok
            moved = np.einsum("bij,bkj->bki", rot[ok], ss[ok]) + tr[ok][:, None, :]
            close = np.all(np.linalg.norm(moved - sd[ok], axis=-1) <= thr, axis=1)
            ok[np.nonzero(ok)[0][~close]] = False
        counts = np.zeros(b, dtype=np.int64)
        sse = np.zeros(b)
        cand = np.nonzero(ok)[0]
        if len(cand):
            moved = np.einsum("bij,cj->bci", rot[cand], src) + tr[cand][:, None, :]
            d2 = ((moved - dst[None]) ** 2).sum(-1)
            inl = d2 < thr * thr
            counts[cand] = inl.sum(axis=1)
            sse[cand] = np.where(inl, d2, 0.0).sum(axis=1)
        stop_at = b
        for j in range(b):
            if ok[j] and counts[j] > 0:
                key = (counts[j], -sse[j] / counts[j])
                if best is None or key > (best[0], -best[1] / best[0]):
                    best = (int(counts[j]), float(sse[j]), done + j, rot[j].copy(), tr[j].copy())
                    required = _required_iterations(best[0] / c, k, params.ransac_confidence, params.ransac_max_iterations)
            if done + j + 1 >= required:
                stop_at = j + 1
                break
        done += stop_at

    if best is None:
        logger.debug("RANSAC: all %d hypotheses pruned", done)
        return RegistrationResult(RigidTransform.identity(), 0.0, 0.0, 0, flagged=True, iterations=done)

    r, t = best[3], best[4]
    moved = src @ r.T + t
    inl = ((moved - dst) ** 2).sum(-1) < thr * thr
    if inl.sum() >= 3:
        guess = kabsch(src[inl], dst[inl])
        moved2 = guess.transform_points(src)
        if (((moved2 - dst) ** 2).sum(-1) < thr * thr).sum() >= inl.sum():
            r, t = guess.rotation, guess.translation
    transform = RigidTransform(r, t)
    fit, rmse = evaluate_alignment(source, target, transform, thr)
    return RegistrationResult(transform, fit, rmse, int(inl.sum()), iterations=done)


# ---------------------------------------------------------------- ICP


def _plane_objective(moved: np.ndarray, tree: KdTree, target: PointCloud, thr: float):
    idx, d = tree.query(moved, k=1, max_distance=thr)
    idx, d = idx[:, 0], d[:, 0]
    valid = np.isfinite(d)
    src = moved[valid]
    p = target.points[idx[valid]]
    n = target.normals[idx[valid]]
    r = ((src - p) * n).sum(axis=1)
    return float((r * r).sum()), src, p, n, r, d[valid]


def point_to_plane_objective(source: PointCloud, target: PointCloud, t: RigidTransform, threshold: float) -> float:
    """Sum of squared point-to-plane residuals over nearest-neighbor pairs within ``threshold``."""
    moved = t.transform_points(source.points)
    return _plane_objective(moved, KdTree(target.points), target, threshold)[0]


def icp_point_to_plane(source: PointCloud, target: PointCloud, init: RigidTransform, params: RegistrationParams) -> RegistrationResult:
    """Point-to-plane ICP refining ``init`` (which maps source into target).

    Each iteration pairs moved source points with their nearest target point
    within the distance threshold and solves the 6x6 small-angle normal
    equations in (rotation, translation). A step is accepted only if the
    objective, recomputed with fresh correspondences, does not increase;
    otherwise it is halved (up to 8 times) and the loop ends if none helps.
    Iteration stops when the relative change of both the correspondence
    fitness and RMSE falls below their eps values.
    """
    if target.normals is None:
        raise ValueError("normals required on the ICP target")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("ICP needs non-empty clouds")
    thr = params.distance_threshold
    tree = KdTree(target.points)
    t = init
    obj, s, p, n, r, d = _plane_objective(t.transform_points(source.points), tree, target, thr)
    if len(s) == 0:
        return RegistrationResult(init, 0.0, 0.0, 0, flagged=True, transform_history=[init], objective_history=[0.0])
    history, objectives = [t], [obj]
    fitness = len(s) / len(source)
    rmse = float(np.sqrt(np.mean(d * d)))
    iterations = 0
    for _ in range(params.icp_max_iterations):
        iterations += 1
        jac = np.hstack([np.cross(s, n), n])
        step = np.linalg.lstsq(jac.T @ jac, -(jac.T @ r), rcond=None)[0]
        accepted = None
        scale = 1.0
        for _ in range(9):
            cand = compose(exp_se3(scale * step[:3], scale * step[3:]), t)
            out = _plane_objective(cand.transform_points(source.points), tree, target, thr)
            if len(out[1]) and out[0] <= obj:
                accepted = (cand, out)
                break
            scale *= 0.5
        if accepted is None:
            break
        t, (obj, s, _, n, r, d) = accepted[0], accepted[1]
        history.append(t)
        objectives.append(obj)
        new_fitness = len(s) / len(source)
        new_rmse = float(np.sqrt(np.mean(d * d)))
        d_fit = abs(new_fitness - fitness) / max(fitness, 1e-300)
        d_rmse = abs(new_rmse - rmse) / max(rmse, 1e-300) if rmse > 0 else (0.0 if new_rmse == 0 else 1.0)
        fitness, rmse = new_fitness, new_rmse
        if d_fit < params.icp_relative_fitness_eps and d_rmse < params.icp_relative_rmse_eps:
            break
    fit, inl_rmse = evaluate_alignment(source, target, t, thr)
    return RegistrationResult(t, fit, inl_rmse, len(s), iterations=iterations,
                              transform_history=history, objective_history=objectives)


# ---------------------------------------------------------------- full chain


@dataclass
class PreparedCloud:
    cloud: PointCloud
    features: np.ndarray


def prepare_cloud(cloud: PointCloud, params: RegistrationParams, viewpoint) -> PreparedCloud:
    """Downsample, estimate normals, and compute FPFH at the configured voxel size."""
    voxel = params.effective_voxel_size
    down = voxel_downsample(PointCloud(cloud.points), voxel)
    down = estimate_normals(down, params.normal_radius_factor * voxel, params.normal_max_nn, viewpoint)
    fpfh = compute_fpfh(down, params.fpfh_radius_factor * voxel, params.fpfh_max_nn)
    return PreparedCloud(down, fpfh)


def register(source: PointCloud, target: PointCloud, params: RegistrationParams, viewpoint=(0.0, 0.0, 0.0)):
    """RANSAC on FPFH matches followed by point-to-plane ICP.

    ``params`` must carry an absolute threshold (see ``RegistrationParams.resolved``).
    Returns ``(icp_result, ransac_result)``; the transform maps source onto target.
    """
    if params.threshold_mode != "absolute":
        raise ValueError("register() needs resolved parameters")
    src = prepare_cloud(source, params, viewpoint)
    dst = prepare_cloud(target, params, viewpoint)
    if len(src.cloud) < params.ransac_sample_size or len(dst.cloud) < params.ransac_sample_size:
        raise ValueError("insufficient correspondences")
    corr = match_features(src.features, dst.features, params.mutual_filter)
    if len(corr) < params.ransac_sample_size:
        raise ValueError("insufficient correspondences")
    coarse = ransac_global(src.cloud, dst.cloud, corr, params)
    if params.icp_voxel_size is not None:
        icp_src = voxel_downsample(PointCloud(source.points), params.icp_voxel_size)
        icp_dst = voxel_downsample(PointCloud(target.points), params.icp_voxel_size)
        icp_dst = estimate_normals(icp_dst, params.normal_radius_factor * params.icp_voxel_size, params.normal_max_nn, viewpoint)
    else:
        icp_src, icp_dst = src.cloud, dst.cloud
    fine = icp_point_to_plane(icp_src, icp_dst, coarse.transform, params)
    fine.flagged = fine.flagged or coarse.flagged
    return fine, coarse

"""Assembly pose estimation from a single depth view.

For one record of step ``i``: segment the base object, back-project it to the
target cloud, ray cast the base CAD model from the same camera to get the
source cloud, register source onto target, then chain

    T_w^b = T_s^b T_w^s        (base pose in the world)
    T_w^a = T_b^a T_w^b        (assembly pose in the world)
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .dataset import AssemblyDataset, AssemblyPlan, DatasetError, SceneRecord
from .geometry import RigidTransform, compose, mesh_diameter
from .registration import RegistrationParams, RegistrationResult, evaluate_alignment, register
from .render import LabelImage, depth_to_cloud, render_source_cloud

logger = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


class SegmentationProvider(Protocol):
    def __call__(self, record: SceneRecord) -> LabelImage: ...


class GroundTruthSegmentation:
    """Returns the record's own rendered label image."""

    def __call__(self, record: SceneRecord) -> LabelImage:
        return record.labels


@dataclass
class AssemblyEstimate:
    step_index: int
    image_id: int
    T_w_b: RigidTransform
    T_w_a: RigidTransform
    registration: RegistrationResult
    elapsed: float
    fitness_full: float = 0.0
    inlier_rmse_full: float = 0.0

    @property
    def failed(self) -> bool:
        return self.registration.flagged or self.registration.fitness == 0.0

    @property
    def fitness(self) -> float:
        return self.registration.fitness

    @property
    def inlier_rmse(self) -> float:
        return self.registration.inlier_rmse


@dataclass
class EstimateFailure:
    step_index: int
    image_id: int
    message: str


class EstimateList(list):
    """Estimates in record order plus the records that raised."""

    def __init__(self, estimates=(), failures=()):
        super().__init__(estimates)
        self.failures: list[EstimateFailure] = list(failures)


class _StepModels:
    """Per-step base mesh and diameter, computed once."""

    def __init__(self, plan: AssemblyPlan):
        self.plan = plan
        self._cache: dict[int, tuple] = {}

    def get(self, step: int):
        if step not in self._cache:
            mesh = self.plan.base_mesh(step)
            self._cache[step] = (mesh, mesh_diameter(mesh))
        return self._cache[step]


def chain_poses(T_s_b: RigidTransform, T_w_s: RigidTransform, T_b_a: RigidTransform) -> tuple[RigidTransform, RigidTransform]:
    """Return ``(T_w^b, T_w^a)`` from the registration result, source placement and plan prior."""
    T_w_b = compose(T_s_b, T_w_s)
    return T_w_b, compose(T_b_a, T_w_b)


def estimate_step(record: SceneRecord, plan: AssemblyPlan, step: int, seg: SegmentationProvider,
                  params: RegistrationParams, _models: _StepModels | None = None) -> AssemblyEstimate:
    models = _models or _StepModels(plan)
    base_mesh, diameter = models.get(step)
    resolved = params.resolved(diameter)
    start = time.perf_counter()
    labels = seg(record)
    if labels.values.shape != record.depth.values.shape:
        raise EstimationError("segmentation size does not match the depth image")
    ids = plan.base_ids(step)
    target = depth_to_cloud(record.depth, record.camera, labels, ids)
    if len(target) == 0:
        raise EstimationError("base object not visible")
    try:
        source, T_w_s = render_source_cloud(base_mesh, target, record.camera)
    except ValueError as exc:
        raise EstimationError(str(exc)) from None
    viewpoint = record.camera.pose.translation
    try:
        fine, _ = register(source, target, resolved, viewpoint)
    except ValueError as exc:
        # too few points or matches: keep a flagged zero-fitness result so the failure is reported
        logger.debug("step %d image %d: %s", step, record.image_id, exc)
        fine = RegistrationResult(RigidTransform.identity(), 0.0, 0.0, 0, flagged=True)
    T_w_b, T_w_a = chain_poses(fine.transform, T_w_s, plan.step(step).relative_pose)
    elapsed = time.perf_counter() - start
    fit, rmse = evaluate_alignment(source, target, fine.transform, resolved.distance_threshold)
    return AssemblyEstimate(step, record.image_id, T_w_b, T_w_a, fine, elapsed, fit, rmse)


def estimate_sequence(dataset: AssemblyDataset, plan: AssemblyPlan, seg: SegmentationProvider | None = None,
                      params: RegistrationParams | None = None, steps=None, threads: int = 1) -> EstimateList:
    """Estimate every record of every step independently.

    A record that fails to load or estimate is logged and kept in
    ``failures``; the rest of the batch continues. Output order follows
    (step, image id) regardless of ``threads``.
    """
    seg = seg or GroundTruthSegmentation()
    params = params or RegistrationParams()
    if dataset.num_steps != len(plan.steps):
        raise DatasetError(f"dataset has {dataset.num_steps} steps but the plan has {len(plan.steps)}")
    for s in range(1, dataset.num_steps + 1):
        info = dataset.step_info(s)
        if sorted(info.base_ids) != sorted(plan.base_ids(s)) or info.assembly_id != plan.part_id(plan.step(s).assembly_part):
            raise DatasetError(f"dataset step {s} does not match the plan's step {s}")
    models = _StepModels(plan)
    keys = [(s, i) for s in (steps or range(1, dataset.num_steps + 1)) for i in dataset.image_ids(s)]
    for s in {k[0] for k in keys}:
        models.get(s)

    def run(key):
        step, image_id = key
        try:
            record = dataset.record(step, image_id)
            return estimate_step(record, plan, step, seg, params, models)
        except (EstimationError, DatasetError, ValueError, OSError) as exc:
            logger.warning("step %d image %d: %s", step, image_id, exc)
            return EstimateFailure(step, image_id, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, keys))
    else:
        results = [run(k) for k in keys]
    out = EstimateList([r for r in results if isinstance(r, AssemblyEstimate)],
                       [r for r in results if isinstance(r, EstimateFailure)])
    return out


# ---------------------------------------------------------------- estimates file


def _matrix_list(t: RigidTransform) -> list[float]:
    return [float(x) for x in t.matrix().reshape(-1)]


def estimate_to_json(e: AssemblyEstimate) -> str:
    reg = e.registration
    return json.dumps({
        "step": e.step_index,
        "image_id": e.image_id,
        "T_w_a": _matrix_list(e.T_w_a),
        "T_w_b": _matrix_list(e.T_w_b),
        "T_s_b": _matrix_list(reg.transform),
        "fitness": reg.fitness,
        "inlier_rmse": reg.inlier_rmse,
        "fitness_full": e.fitness_full,
        "inlier_rmse_full": e.inlier_rmse_full,
        "correspondences": reg.correspondence_count,
        "flagged": bool(reg.flagged),
    })


def write_estimates(estimates, path, failures=(), timings_path=None) -> None:
    """Write one JSON line per estimate (and per failure).

    Wall-clock times vary between runs, so they go to a separate
    ``timings_path`` (default: ``<path>.timings.jsonl``) to keep the
    estimates file reproducible.
    """
    path = Path(path)
    lines = [estimate_to_json(e) for e in estimates]
    lines += [json.dumps({"step": f.step_index, "image_id": f.image_id, "error": f.message}) for f in failures]
    path.write_text("".join(line + "\n" for line in lines))
    timings_path = Path(timings_path) if timings_path else timings_file(path)
    timings_path.write_text("".join(json.dumps({"step": e.step_index, "image_id": e.image_id, "elapsed": e.elapsed}) + "\n" for e in estimates))


def timings_file(estimates_path) -> Path:
    p = Path(estimates_path)
    return p.with_name(p.name + ".timings.jsonl")


def read_estimates(path, plan: AssemblyPlan | None = None) -> EstimateList:
    """Load an estimates file (and its timings sidecar when present).

    With a plan, ``T_w_a`` is recomputed from ``T_w_b`` and checked against
    the stored value.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    timings = {}
    tpath = timings_file(path)
    if tpath.exists():
        for line in tpath.read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                timings[(d["step"], d["image_id"])] = float(d["elapsed"])
    out = EstimateList()
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            key = (int(d["step"]), int(d["image_id"]))
            if "error" in d:
                out.failures.append(EstimateFailure(*key, d["error"]))
                continue
            T_w_a = RigidTransform.from_matrix(np.array(d["T_w_a"]).reshape(4, 4))
            T_w_b = RigidTransform.from_matrix(np.array(d["T_w_b"]).reshape(4, 4))
            T_s_b = RigidTransform.from_matrix(np.array(d["T_s_b"]).reshape(4, 4))
            reg = RegistrationResult(T_s_b, float(d["fitness"]), float(d["inlier_rmse"]),
                                     int(d.get("correspondences", 0)), bool(d.get("flagged", False)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: line {n}: malformed estimate ({exc})") from None
        if plan is not None:
            expect = compose(plan.step(key[0]).relative_pose, T_w_b)
            if not np.array_equal(expect.matrix(), T_w_a.matrix()):
                raise DatasetError(f"{path}: line {n}: T_w_a does not equal T_b^a T_w^b")
        out.append(AssemblyEstimate(key[0], key[1], T_w_b, T_w_a, reg, timings.get(key, float("nan")),
                                    float(d.get("fitness_full", 0.0)), float(d.get("inlier_rmse_full", 0.0))))
    return out

"""Pose error metrics and per-step evaluation reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import AssemblyDataset, AssemblyPlan, DatasetError
from .geometry import PointCloud, RigidTransform, TriangleMesh, sample_mesh_surface
from .spatial import KdTree
from .symmetry import SymmetrySet

__all__ = ["adi", "mssd", "EvalRow", "ModelData", "build_models", "evaluate_estimates", "SymmetrySet",
           "rows_to_csv", "rows_to_table", "CSV_COLUMNS", "MODEL_SAMPLES"]

MODEL_SAMPLES = 30_000
CSV_COLUMNS = ["step", "fitness_mean", "fitness_stdv", "rmse_mean", "rmse_stdv",
               "adi_mean", "adi_stdv", "mssd_mean", "mssd_stdv", "time_mean"]


def _points(model) -> np.ndarray:
    pts = model.points if isinstance(model, PointCloud) else np.asarray(model, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty model")
    return pts


def adi(gt: RigidTransform, est: RigidTransform, model_points) -> float:
    """Mean distance from each ground-truth-posed point to the nearest estimate-posed point."""
    pts = _points(model_points)
    u = gt.transform_points(pts)
    v = est.transform_points(pts)
    _, d = KdTree(v).query(u, k=1)
    return float(d[:, 0].mean())


def mssd(gt: RigidTransform, est: RigidTransform, vertices, symmetries: SymmetrySet | None = None) -> float:
    """Largest vertex displacement between the poses, minimized over the symmetry set."""
    x = _points(vertices)
    u = gt.transform_points(x)
    best = math.inf
    for y in symmetries or SymmetrySet.identity():
        v = est.transform_points(y.transform_points(x))
        best = min(best, float(np.sqrt(((u - v) ** 2).sum(axis=1)).max()))
    return best


@dataclass
class EvalRow:
    step: int
    fitness_mean: float
    fitness_stdv: float
    rmse_mean: float
    rmse_stdv: float
    adi_mean: float
    adi_stdv: float
    mssd_mean: float
    mssd_stdv: float
    time_mean: float
    count: int = 0
    failures: int = 0
    fitness_full_mean: float = 0.0

    def numeric(self) -> list[float]:
        return [getattr(self, c) for c in CSV_COLUMNS[1:]]


@dataclass
class ModelData:
    points: np.ndarray
    vertices: np.ndarray
    symmetries: SymmetrySet


def build_models(plan: AssemblyPlan, samples: int = MODEL_SAMPLES, seed: int = 0) -> dict[int, ModelData]:
    """Metric models per step, keyed by step index (the step's assembly part)."""
    out = {}
    cache: dict[str, tuple] = {}
    for step in plan.steps:
        name = step.assembly_part
        if name not in cache:
            mesh: TriangleMesh = plan.parts[name].mesh
            cache[name] = (sample_mesh_surface(mesh, samples, seed).points, mesh.vertices)
        out[step.index] = ModelData(*cache[name], step.symmetries)
    return out


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    if len(a) == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std())


def per_estimate_errors(estimates, dataset: AssemblyDataset, models: dict[int, ModelData]):
    """``(adi, mssd)`` arrays aligned with ``estimates``."""
    errs = []
    for e in estimates:
        if e.step_index not in models:
            raise DatasetError(f"no model for step {e.step_index}")
        try:
            gt = dataset.assembly_ground_truth(e.step_index, e.image_id)
        except DatasetError as exc:
            raise DatasetError(f"no ground truth for step {e.step_index} image {e.image_id}: {exc}") from None
        m = models[e.step_index]
        errs.append((adi(gt, e.T_w_a, m.points), mssd(gt, e.T_w_a, m.vertices, m.symmetries)))
    a = np.array(errs, dtype=np.float64).reshape(-1, 2)
    return a[:, 0], a[:, 1]


def evaluate_estimates(estimates, dataset: AssemblyDataset, plan: AssemblyPlan,
                       models: dict[int, ModelData] | None = None, failures: Sequence = ()) -> list[EvalRow]:
    """Per-step means and population standard deviations of every metric.

    Each step is scored against its own ground truth. Estimates whose image
    id is not in the dataset raise an error naming the record.
    """
    models = models or build_models(plan)
    for e in estimates:
        if not 1 <= e.step_index <= dataset.num_steps or e.image_id not in dataset.image_ids(e.step_index):
            raise DatasetError(f"estimate for step {e.step_index} image {e.image_id} has no matching record")
    adis, mssds = per_estimate_errors(estimates, dataset, models)
    rows = []
    for step in sorted({e.step_index for e in estimates}):
        sel = [i for i, e in enumerate(estimates) if e.step_index == step]
        es = [estimates[i] for i in sel]
        times = np.array([e.elapsed for e in es], dtype=np.float64)
        rows.append(EvalRow(
            step,
            *_mean_std([e.fitness for e in es]),
            *_mean_std([e.inlier_rmse for e in es]),
            *_mean_std(adis[sel]),
            *_mean_std(mssds[sel]),
            float(np.nanmean(times)) if np.isfinite(times).any() else math.nan,
            count=len(es),
            failures=sum(1 for e in es if e.failed) + sum(1 for f in failures if f.step_index == step),
            fitness_full_mean=_mean_std([e.fitness_full for e in es])[0],
        ))
    return rows


def rows_to_csv(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.step] + [repr(float(v)) for v in r.numeric()])
    return buf.getvalue()


def write_csv(rows: Sequence[EvalRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def rows_to_table(rows: Sequence[EvalRow], extra: bool = True) -> str:
    """Aligned plain-text table; lengths in meters, time in seconds.

    ``extra`` appends the record count, failure count and full-resolution fitness.
    """
    head = ["step", "fitness", "(stdv)", "rmse", "(stdv)", "ADI", "(stdv)", "MSSD", "(stdv)", "time"]
    body = [[str(r.step)] + [f"{v:.6f}" for v in r.numeric()] for r in rows]
    if extra:
        head += ["n", "fail", "fit_full"]
        for b, r in zip(body, rows):
            b += [str(r.count), str(r.failures), f"{r.fitness_full_mean:.6f}"]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(head)] + [fmt(b) for b in body]) + "\n"

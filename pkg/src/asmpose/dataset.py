"""Assembly plans, hemisphere camera sampling, and the per-step BOP-style dataset.

On-disk layout::

    dataset_info.json           steps, part ids, complete-assembly poses
    step_XX/depth/NNNNNN.png    16-bit z-depth, ``depth_scale`` mm per unit
    step_XX/mask/NNNNNN.png     8-bit object ids
    step_XX/scene_gt.json       per image: obj_id, R_m2w (row-major), t_m2w (mm)
    step_XX/scene_camera.json   per image: cam_K, width, height, R_c2w, t_c2w (mm), depth_scale

Translations are written as exact decimal expansions so that loading
reproduces every pose bit for bit.
"""
from __future__ import annotations

import decimal
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import yaml
from PIL import Image

from .geometry import AxisAlignedBox, RigidTransform, TriangleMesh, compose
from .meshio import load_mesh
from .render import CameraModel, DepthImage, LabelImage, default_camera, raycast_scene
from .symmetry import SymmetrySet

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_SCALE_MM = 0.1
FORMAT_NAME = "asmpose-assembly-bop"


class PlanError(ValueError):
    pass


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------- assembly plan


@dataclass
class Part:
    name: str
    id: int
    mesh: TriangleMesh
    mesh_path: Optional[str] = None
    unit_scale: float = 1.0


@dataclass
class AssemblyStep:
    """One assembly step: place ``assembly_part`` relative to the base.

    ``relative_pose`` is T_b^a: the assembly pose follows as
    ``compose(relative_pose, base_pose)``. The base frame is the frame of the
    plan's first part.
    """

    index: int
    base_parts: list[str]
    assembly_part: str
    relative_pose: RigidTransform
    symmetries: SymmetrySet = field(default_factory=SymmetrySet.identity)
    symmetry_spec: list = field(default_factory=list)
    occluders: list[tuple[str, RigidTransform]] = field(default_factory=list)


class AssemblyPlan:
    def __init__(self, parts: Sequence[Part], steps: Sequence[AssemblyStep]):
        self.parts = {p.name: p for p in parts}
        if len(self.parts) != len(parts):
            raise PlanError("duplicate part names")
        ids = [p.id for p in parts]
        if len(set(ids)) != len(ids) or min(ids, default=1) <= 0 or max(ids, default=1) > 255:
            raise PlanError("part ids must be unique integers in 1..255")
        self.steps = list(steps)
        if not self.steps:
            raise PlanError("plan has no steps")
        self._validate()

    def _validate(self) -> None:
        placed = None
        for i, step in enumerate(self.steps):
            if step.index != i + 1:
                raise PlanError(f"step {i + 1}: index {step.index} out of order")
            for name in step.base_parts + [step.assembly_part] + [o[0] for o in step.occluders]:
                if name not in self.parts:
                    raise PlanError(f"step {step.index}: unknown part {name!r}")
            if placed is None:
                if len(step.base_parts) != 1:
                    raise PlanError("the first step's base must be a single part")
                placed = list(step.base_parts)
            elif step.base_parts != placed:
                raise PlanError(f"step {step.index}: base {step.base_parts} must be the parts assembled so far {placed}")
            if step.assembly_part in placed:
                raise PlanError(f"step {step.index}: part {step.assembly_part!r} is already assembled")
            for name, _ in step.occluders:
                if name in placed or name == step.assembly_part:
                    raise PlanError(f"step {step.index}: occluder {name!r} is part of the assembly")
            placed = placed + [step.assembly_part]

    @property
    def first_part(self) -> str:
        return self.steps[0].base_parts[0]

    def part_id(self, name: str) -> int:
        return self.parts[name].id

    def part_by_id(self, obj_id: int) -> Part:
        for p in self.parts.values():
            if p.id == obj_id:
                return p
        raise KeyError(obj_id)

    def assembled_poses(self) -> dict[str, RigidTransform]:
        """Pose of every assembled part in the base frame (first part at identity)."""
        poses = {self.first_part: RigidTransform.identity()}
        for step in self.steps:
            poses[step.assembly_part] = compose(step.relative_pose, poses[self.first_part])
        return poses

    def step(self, index: int) -> AssemblyStep:
        if not 1 <= index <= len(self.steps):
            raise PlanError(f"no step {index} (plan has {len(self.steps)})")
        return self.steps[index - 1]

    def base_ids(self, index: int) -> list[int]:
        return [self.part_id(n) for n in self.step(index).base_parts]

    def base_mesh(self, index: int) -> TriangleMesh:
        """Union of the base parts placed in the base frame."""
        poses = self.assembled_poses()
        return TriangleMesh.merge(self.parts[n].mesh.transformed(poses[n]) for n in self.step(index).base_parts)

    def scene_objects(self, index: int, world: RigidTransform | None = None):
        """``(mesh, world_pose, id)`` for every object present while step ``index`` is recorded."""
        world = world or RigidTransform.identity()
        poses = self.assembled_poses()
        step = self.step(index)
        objs = [(self.parts[n].mesh, compose(world, poses[n]), self.part_id(n)) for n in step.base_parts]
        objs += [(self.parts[n].mesh, compose(world, pose), self.part_id(n)) for n, pose in step.occluders]
        return objs

    def complete_assembly(self) -> dict[int, RigidTransform]:
        return {self.part_id(n): pose for n, pose in self.assembled_poses().items()}

    def bounds(self) -> AxisAlignedBox:
        poses = self.assembled_poses()
        pts = np.concatenate([self.parts[n].mesh.transformed(p).vertices for n, p in poses.items()])
        return AxisAlignedBox.from_points(pts)


def _matrix16(value, where: str) -> RigidTransform:
    try:
        m = np.asarray(value, dtype=np.float64).reshape(4, 4)
    except (TypeError, ValueError):
        raise PlanError(f"{where}: expected 16 numbers (4x4 row-major)") from None
    if not np.allclose(m[3], [0, 0, 0, 1]):
        raise PlanError(f"{where}: last row must be 0 0 0 1")
    try:
        return RigidTransform.from_matrix(m)
    except ValueError as exc:
        raise PlanError(f"{where}: {exc}") from None


def load_plan(path) -> AssemblyPlan:
    """Read a YAML assembly plan; mesh paths are relative to the plan file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise PlanError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "parts" not in doc or "steps" not in doc:
        raise PlanError(f"{path}: plan needs 'parts' and 'steps'")
    default_scale = float(doc.get("unit_scale", 1.0))
    parts = []
    for i, entry in enumerate(doc["parts"]):
        where = f"{path}: parts[{i}]"
        try:
            name, obj_id, mesh_rel = entry["name"], int(entry["id"]), entry["mesh"]
        except (KeyError, TypeError):
            raise PlanError(f"{where}: needs name, id, mesh") from None
        scale = float(entry.get("unit_scale", default_scale))
        mesh_path = path.parent / mesh_rel
        if not mesh_path.exists():
            raise PlanError(f"{where}: mesh file {mesh_path} not found")
        parts.append(Part(name, obj_id, load_mesh(mesh_path, scale), str(mesh_rel), scale))
    steps = []
    placed: list[str] = []
    for i, entry in enumerate(doc["steps"]):
        where = f"{path}: steps[{i}]"
        if "assembly" not in entry or "relative_pose" not in entry:
            raise PlanError(f"{where}: needs assembly and relative_pose")
        base = entry.get("base")
        if base is None:
            base = list(placed) if placed else [doc["parts"][0]["name"]]
        base = [base] if isinstance(base, str) else list(base)
        spec = entry.get("symmetry") or []
        try:
            sym = SymmetrySet.from_spec(spec)
        except (KeyError, ValueError, TypeError) as exc:
            raise PlanError(f"{where}: bad symmetry spec: {exc}") from None
        occ = [(o["part"], _matrix16(o["pose"], f"{where}: occluder")) for o in entry.get("occluders") or []]
        steps.append(AssemblyStep(i + 1, base, entry["assembly"], _matrix16(entry["relative_pose"], f"{where}: relative_pose"), sym, list(spec), occ))
        placed = base + [entry["assembly"]]
    return AssemblyPlan(parts, steps)


def plan_to_yaml(plan: AssemblyPlan, unit_scale: float = 1.0) -> str:
    doc = {
        "unit_scale": unit_scale,
        "parts": [{"name": p.name, "id": p.id, "mesh": p.mesh_path, "unit_scale": p.unit_scale} for p in plan.parts.values()],
        "steps": [],
    }
    for s in plan.steps:
        entry = {
            "base": list(s.base_parts),
            "assembly": s.assembly_part,
            "relative_pose": [float(x) for x in s.relative_pose.matrix().reshape(-1)],
        }
        if s.symmetry_spec:
            entry["symmetry"] = s.symmetry_spec
        if s.occluders:
            entry["occluders"] = [{"part": n, "pose": [float(x) for x in p.matrix().reshape(-1)]} for n, p in s.occluders]
        doc["steps"].append(entry)
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------- camera sampling


@dataclass
class HemisphereSampling:
    yaw_values: list[float]
    pitch_values: list[float]
    scale_values: list[float]
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.yaw_values and self.pitch_values and self.scale_values):
            raise ValueError("yaw, pitch and scale lists must be non-empty")
        if any(not 0 < p <= math.pi / 2 for p in self.pitch_values):
            raise ValueError("pitch must lie in (0, pi/2]")
        if any(s <= 0 for s in self.scale_values):
            raise ValueError("scale must be positive")

    def __len__(self) -> int:
        return len(self.yaw_values) * len(self.pitch_values) * len(self.scale_values)

    @classmethod
    def grid(cls, n_yaw: int = 8, n_pitch: int = 3, n_scale: int = 2,
             pitch_range=(math.radians(30), math.radians(70)), scale_range=(0.30, 0.40), look_at=(0.0, 0.0, 0.0)):
        """Evenly spaced yaw around the full circle; pitch and scale spread over their ranges."""
        def spread(lo, hi, n):
            return [0.5 * (lo + hi)] if n == 1 else list(np.linspace(lo, hi, n))
        yaw = [2 * math.pi * k / n_yaw for k in range(n_yaw)]
        return cls(yaw, spread(*pitch_range, n_pitch), spread(*scale_range, n_scale), tuple(look_at))


def plan_sampling(plan: "AssemblyPlan", n_yaw: int = 8, n_pitch: int = 3, n_scale: int = 2) -> HemisphereSampling:
    """Default grid aimed at the center of the complete assembly's bounding box."""
    b = plan.bounds()
    return HemisphereSampling.grid(n_yaw, n_pitch, n_scale, look_at=tuple(float(x) for x in 0.5 * (b.min + b.max)))


def look_at_pose(position, target, yaw: float) -> RigidTransform:
    """Camera-to-world pose at ``position`` with its optical axis through ``target``.

    The camera x axis is ``(-sin yaw, cos yaw, 0)``, which stays well defined
    when looking straight down.
    """
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    right -= fwd * (right @ fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return RigidTransform(np.column_stack([right, down, fwd]), position)


def hemisphere_poses(sampling: HemisphereSampling) -> list[RigidTransform]:
    """One camera-to-world pose per (yaw, pitch, scale), yaw outermost, scale innermost."""
    c = np.asarray(sampling.look_at, dtype=np.float64)
    poses = []
    for phi in sampling.yaw_values:
        for theta in sampling.pitch_values:
            for s in sampling.scale_values:
                offset = s * np.array([math.cos(theta) * math.cos(phi), math.cos(theta) * math.sin(phi), math.sin(theta)])
                poses.append(look_at_pose(c + offset, c, phi))
    return poses


# ---------------------------------------------------------------- exact JSON numbers


def _mm_text(meters: float) -> str:
    with decimal.localcontext() as ctx:
        ctx.prec = 2000
        d = Decimal(float(meters)) * 1000
        return format(d.normalize() if d != 0 else Decimal(0), "f")


def _from_mm(value) -> float:
    with decimal.localcontext() as ctx:
        ctx.prec = 2000
        return float(Decimal(value) / 1000)


def _dump(obj, indent: int = 0) -> str:
    """JSON writer that emits pre-formatted number strings wrapped in ``_Raw`` verbatim."""
    pad = "  " * indent
    if isinstance(obj, _Raw):
        return obj.text
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v, indent + 1) for v in obj) + "]"
        items = [pad + "  " + _dump(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite number")
        return repr(obj)
    return json.dumps(obj)


class _Raw:
    def __init__(self, text: str):
        self.text = text


def _pose_json(t: RigidTransform, prefix: str) -> dict:
    return {
        f"R_{prefix}": [float(x) for x in t.rotation.reshape(-1)],
        f"t_{prefix}": [_Raw(_mm_text(x)) for x in t.translation],
    }


def _read_json(path: Path):
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    try:
        return json.loads(path.read_text(), parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None


def _pose_from_json(entry, prefix: str, where: str) -> RigidTransform:
    try:
        r = np.array([float(x) for x in entry[f"R_{prefix}"]], dtype=np.float64)
        t = np.array([_from_mm(x) for x in entry[f"t_{prefix}"]], dtype=np.float64)
    except KeyError as exc:
        raise DatasetError(f"{where}: missing field {exc.args[0]}") from None
    except (TypeError, ValueError, decimal.InvalidOperation):
        raise DatasetError(f"{where}: malformed pose") from None
    if r.shape != (9,) or t.shape != (3,):
        raise DatasetError(f"{where}: field R_{prefix} needs 9 and t_{prefix} 3 numbers")
    try:
        return RigidTransform(r.reshape(3, 3), t)
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from None


# ---------------------------------------------------------------- records and generation


@dataclass
class SceneRecord:
    depth: DepthImage
    labels: LabelImage
    camera: CameraModel
    object_poses: dict[int, RigidTransform]
    step_index: int
    image_id: int = 0
    depth_scale: float = DEFAULT_DEPTH_SCALE_MM

    @property
    def key(self) -> tuple[int, int]:
        return (self.step_index, self.image_id)


@dataclass
class AssemblyDatasetSummary:
    path: Path
    records_per_step: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.records_per_step.values())


def step_dir(root, step: int) -> Path:
    return Path(root) / f"step_{step:02d}"


def encode_depth(depth: np.ndarray, depth_scale_mm: float) -> np.ndarray:
    units = np.rint(depth * 1000.0 / depth_scale_mm)
    if units.max(initial=0) > np.iinfo(np.uint16).max:
        raise DatasetError("depth exceeds the 16-bit range at this depth_scale")
    return units.astype(np.uint16)


def decode_depth(units: np.ndarray, depth_scale_mm: float) -> np.ndarray:
    return units.astype(np.float64) * (depth_scale_mm / 1000.0)


def _write_png(array: np.ndarray, path: Path) -> None:
    Image.fromarray(array).save(path, format="PNG", optimize=False)


def generate_dataset(plan: AssemblyPlan, sampling: HemisphereSampling, out_path, intrinsics: CameraModel | None = None,
                     seed: int = 0, depth_noise: float = 0.0, depth_scale_mm: float = DEFAULT_DEPTH_SCALE_MM,
                     threads: int = 1) -> AssemblyDatasetSummary:
    """Render every assembly step from every sampled camera and write the dataset.

    Step ``i`` shows the base parts (parts assembled before step ``i``) at their
    assembled poses plus the step's occluders; the assembly part itself is not
    in the scene. Its ground-truth pose for step ``i`` is the pose recorded for
    it in step ``i + 1`` (or, for the last step, in ``complete_assembly`` of
    ``dataset_info.json``). ``depth_noise`` adds zero-mean Gaussian noise (meters)
    to hit pixels, seeded per image from ``seed``.
    """
    intrinsics = intrinsics or default_camera()
    out = Path(out_path)
    for step in plan.steps:
        for name in step.base_parts + [step.assembly_part]:
            if plan.parts[name].mesh.is_empty:
                raise PlanError(f"part {name!r} has an empty mesh")
    cams = hemisphere_poses(sampling)
    out.mkdir(parents=True, exist_ok=True)

    info = {
        "format": FORMAT_NAME,
        "version": 1,
        "num_steps": len(plan.steps),
        "images_per_step": len(cams),
        "depth_scale": depth_scale_mm,
        "parts": {str(p.id): p.name for p in plan.parts.values()},
        "steps": [
            {"step": s.index, "base_ids": plan.base_ids(s.index), "assembly_id": plan.part_id(s.assembly_part),
             "occluder_ids": [plan.part_id(n) for n, _ in s.occluders]}
            for s in plan.steps
        ],
        "complete_assembly": {str(k): _pose_json(v, "m2w") for k, v in sorted(plan.complete_assembly().items())},
    }
    (out / "dataset_info.json").write_text(_dump(info) + "\n")

    counts = {}
    for step in plan.steps:
        sdir = step_dir(out, step.index)
        (sdir / "depth").mkdir(parents=True, exist_ok=True)
        (sdir / "mask").mkdir(parents=True, exist_ok=True)
        objects = plan.scene_objects(step.index)

        def render(i, step=step, objects=objects, sdir=sdir):
            cam = intrinsics.with_pose(cams[i])
            depth, labels = raycast_scene(objects, cam)
            d = depth.values
            if depth_noise > 0:
                rng = np.random.default_rng([seed, step.index, i])
                d = np.where(d > 0, np.maximum(d + rng.normal(0.0, depth_noise, d.shape), 0.0), 0.0)
            _write_png(encode_depth(d, depth_scale_mm), sdir / "depth" / f"{i:06d}.png")
            _write_png(labels.values.astype(np.uint8), sdir / "mask" / f"{i:06d}.png")

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(render, range(len(cams))))
        else:
            for i in range(len(cams)):
                render(i)

        scene_gt, scene_cam = {}, {}
        for i, pose in enumerate(cams):
            scene_gt[str(i)] = [dict(obj_id=obj_id, **_pose_json(p, "m2w")) for _, p, obj_id in objects]
            scene_cam[str(i)] = {
                "cam_K": [float(x) for x in intrinsics.K.reshape(-1)],
                "width": intrinsics.width,
                "height": intrinsics.height,
                **_pose_json(pose, "c2w"),
                "depth_scale": depth_scale_mm,
            }
        (sdir / "scene_gt.json").write_text(_dump(scene_gt) + "\n")
        (sdir / "scene_camera.json").write_text(_dump(scene_cam) + "\n")
        counts[step.index] = len(cams)
        logger.info("step %d: %d records", step.index, len(cams))
    return AssemblyDatasetSummary(out, counts)


# ---------------------------------------------------------------- loading


@dataclass
class StepInfo:
    step: int
    base_ids: list[int]
    assembly_id: int
    occluder_ids: list[int]


class AssemblyDataset:
    """Read access to a generated dataset."""

    def __init__(self, path):
        self.path = Path(path)
        info_path = self.path / "dataset_info.json"
        info = _read_json(info_path)
        try:
            if info["format"] != FORMAT_NAME:
                raise DatasetError(f"{info_path}: unexpected format {info['format']!r}")
            self.num_steps = int(info["num_steps"])
            self.images_per_step = int(info["images_per_step"])
            self.parts = {int(k): v for k, v in info["parts"].items()}
            self.steps = [StepInfo(int(s["step"]), [int(x) for x in s["base_ids"]], int(s["assembly_id"]),
                                   [int(x) for x in s.get("occluder_ids", [])]) for s in info["steps"]]
            complete = info["complete_assembly"]
        except KeyError as exc:
            raise DatasetError(f"{info_path}: missing field {exc.args[0]}") from None
        self.complete_assembly = {int(k): _pose_from_json(v, "m2w", f"{info_path}: complete_assembly[{k}]") for k, v in complete.items()}
        self._gt_cache: dict[int, dict] = {}
        self._cam_cache: dict[int, dict] = {}

    def step_info(self, step: int) -> StepInfo:
        if not 1 <= step <= self.num_steps:
            raise DatasetError(f"{self.path}: no step {step}")
        return self.steps[step - 1]

    def _scene_gt(self, step: int) -> dict:
        if step not in self._gt_cache:
            self._gt_cache[step] = _read_json(step_dir(self.path, step) / "scene_gt.json")
        return self._gt_cache[step]

    def _scene_camera(self, step: int) -> dict:
        if step not in self._cam_cache:
            self._cam_cache[step] = _read_json(step_dir(self.path, step) / "scene_camera.json")
        return self._cam_cache[step]

    def image_ids(self, step: int) -> list[int]:
        return sorted(int(k) for k in self._scene_camera(step))

    def object_poses(self, step: int, image_id: int) -> dict[int, RigidTransform]:
        path = step_dir(self.path, step) / "scene_gt.json"
        entries = self._scene_gt(step).get(str(image_id))
        if entries is None:
            raise DatasetError(f"{path}: no entry for image {image_id}")
        poses = {}
        for j, e in enumerate(entries):
            where = f"{path}: image {image_id} entry {j}"
            if "obj_id" not in e:
                raise DatasetError(f"{where}: missing field obj_id")
            poses[int(e["obj_id"])] = _pose_from_json(e, "m2w", where)
        return poses

    def camera(self, step: int, image_id: int) -> tuple[CameraModel, float]:
        path = step_dir(self.path, step) / "scene_camera.json"
        e = self._scene_camera(step).get(str(image_id))
        where = f"{path}: image {image_id}"
        if e is None:
            raise DatasetError(f"{where}: no entry")
        try:
            k = np.array([float(x) for x in e["cam_K"]]).reshape(3, 3)
            width, height = int(e["width"]), int(e["height"])
            scale = float(e["depth_scale"])
        except KeyError as exc:
            raise DatasetError(f"{where}: missing field {exc.args[0]}") from None
        except (TypeError, ValueError):
            raise DatasetError(f"{where}: malformed field cam_K") from None
        pose = _pose_from_json(e, "c2w", where)
        try:
            cam = CameraModel(k[0, 0], k[1, 1], k[0, 2], k[1, 2], width, height, pose)
        except ValueError as exc:
            raise DatasetError(f"{where}: {exc}") from None
        return cam, scale

    def _png(self, path: Path) -> np.ndarray:
        if not path.exists():
            raise DatasetError(f"{path}: file not found")
        try:
            with Image.open(path) as im:
                return np.array(im)
        except OSError as exc:
            raise DatasetError(f"{path}: unreadable image ({exc})") from None

    def record(self, step: int, image_id: int) -> SceneRecord:
        cam, scale = self.camera(step, image_id)
        sdir = step_dir(self.path, step)
        depth_path = sdir / "depth" / f"{image_id:06d}.png"
        mask_path = sdir / "mask" / f"{image_id:06d}.png"
        units = self._png(depth_path)
        labels = self._png(mask_path)
        if units.shape != (cam.height, cam.width):
            raise DatasetError(f"{depth_path}: size {units.shape[::-1]} does not match camera {cam.width}x{cam.height}")
        if labels.shape != units.shape:
            raise DatasetError(f"{mask_path}: size differs from the depth image")
        poses = self.object_poses(step, image_id)
        missing = {int(i) for i in np.unique(labels)} - {0} - set(poses)
        if missing:
            raise DatasetError(f"{mask_path}: labels {sorted(missing)} have no pose in scene_gt.json")
        return SceneRecord(DepthImage(decode_depth(units, scale)), LabelImage(labels), cam, poses, step, image_id, scale)

    def records(self, step: int | None = None) -> Iterator[SceneRecord]:
        steps = [step] if step is not None else range(1, self.num_steps + 1)
        for s in steps:
            for i in self.image_ids(s):
                yield self.record(s, i)

    def __iter__(self) -> Iterator[SceneRecord]:
        return self.records()

    def __len__(self) -> int:
        return sum(len(self.image_ids(s)) for s in range(1, self.num_steps + 1))

    def assembly_ground_truth(self, step: int, image_id: int = 0) -> RigidTransform:
        """World pose of step ``step``'s assembly part, taken from the next step's scene or the complete assembly."""
        info = self.step_info(step)
        if step < self.num_steps:
            poses = self.object_poses(step + 1, image_id if image_id in self.image_ids(step + 1) else self.image_ids(step + 1)[0])
            if info.assembly_id not in poses:
                raise DatasetError(f"{step_dir(self.path, step + 1) / 'scene_gt.json'}: no pose for assembly part {info.assembly_id}")
            return poses[info.assembly_id]
        if info.assembly_id not in self.complete_assembly:
            raise DatasetError(f"{self.path / 'dataset_info.json'}: no complete-assembly pose for part {info.assembly_id}")
        return self.complete_assembly[info.assembly_id]


def load_dataset(path) -> AssemblyDataset:
    return AssemblyDataset(path)

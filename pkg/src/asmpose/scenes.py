"""Built-in desk-scale assembly made of primitives.

Run ``python -m asmpose.scenes OUTDIR [--occlusion]`` to write the meshes and
the plan file used by the examples and tests.
"""
from __future__ import annotations

import argparse
import math
from pathlib import Path

from . import primitives
from .dataset import AssemblyPlan, AssemblyStep, Part, load_plan, plan_to_yaml
from .geometry import RigidTransform, TriangleMesh, rotation_about
from .meshio import save_mesh
from .registration import RegistrationParams, save_params
from .symmetry import SymmetrySet

SEGMENTS = 36

PLATE_TOP = 0.0075


def desk_params() -> RegistrationParams:
    """Registration settings for the desk-scale parts (6 mm threshold, 1.2 mm voxels)."""
    return RegistrationParams(distance_threshold=0.006, mutual_filter=True)


def base_plate() -> TriangleMesh:
    """6 x 4 x 1.5 cm plate with a 1.5 cm cube on one corner (no rotational symmetry)."""
    plate = primitives.box(0.06, 0.04, 0.015)
    corner = primitives.box(0.015, 0.015, 0.015).transformed(RigidTransform.from_translation((0.0225, 0.0125, 0.015)))
    return TriangleMesh.merge([plate, corner])


def _t(x, y, z, yaw_deg: float = 0.0) -> RigidTransform:
    return rotation_about((0, 0, 1), math.radians(yaw_deg), (x, y, z))


CYLINDER_SYM = [{"axis": [0, 0, 1], "continuous": True, "samples": SEGMENTS}, {"axis": [1, 0, 0], "order": 2}]
CONE_SYM = [{"axis": [0, 0, 1], "continuous": True, "samples": SEGMENTS}]
BLOCK_SYM = [{"axis": [0, 0, 1], "order": 4}, {"axis": [1, 0, 0], "order": 2}]
HEX_SYM = [{"axis": [0, 0, 1], "order": 6}, {"axis": [1, 0, 0], "order": 2}]


def hood() -> TriangleMesh:
    """Box that swallows the +x half of the assembly, hiding well over half of the base."""
    return primitives.box(0.04, 0.05, 0.05)


def desk_parts() -> list[tuple[str, int, TriangleMesh]]:
    return [
        ("plate", 1, base_plate()),
        ("cylinder", 2, primitives.cylinder(0.015, 0.02, SEGMENTS)),
        ("block", 3, primitives.box(0.02, 0.02, 0.03)),
        ("cone", 4, primitives.cone(0.015, 0.03, SEGMENTS)),
        ("hex", 5, primitives.prism(0.012, 0.02, 6)),
        ("hood", 10, hood()),
    ]


def desk_steps(occlusion: bool = False) -> list[dict]:
    steps = [
        dict(assembly="cylinder", pose=_t(-0.015, -0.005, PLATE_TOP + 0.01), symmetry=CYLINDER_SYM),
        dict(assembly="block", pose=_t(0.016, -0.009, PLATE_TOP + 0.015, 20.0), symmetry=BLOCK_SYM),
        dict(assembly="cone", pose=_t(-0.015, -0.005, PLATE_TOP + 0.02 + 0.015), symmetry=CONE_SYM),
    ]
    if occlusion:
        steps.append(dict(assembly="hex", pose=_t(0.016, -0.009, PLATE_TOP + 0.03 + 0.01, 20.0), symmetry=HEX_SYM,
                          occluders=[("hood", occluder_pose())]))
    return steps


def occluder_pose() -> RigidTransform:
    return _t(0.015, 0.0, 0.015)


def desk_plan(occlusion: bool = False) -> AssemblyPlan:
    """Four parts and three steps (five parts and four steps with ``occlusion``)."""
    parts = [Part(n, i, m, f"{n}.obj") for n, i, m in desk_parts()]
    steps, placed = [], ["plate"]
    for k, s in enumerate(desk_steps(occlusion)):
        steps.append(AssemblyStep(k + 1, list(placed), s["assembly"], s["pose"], SymmetrySet.from_spec(s["symmetry"]),
                                  s["symmetry"], s.get("occluders", [])))
        placed.append(s["assembly"])
    used = set(placed) | {o[0] for s in steps for o in s.occluders}
    return AssemblyPlan([p for p in parts if p.name in used], steps)


def write_desk_scene(out_dir, occlusion: bool = False, plan_name: str = "plan.yaml") -> Path:
    """Write the part meshes (OBJ), the plan file and ``params.txt``; returns the plan path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = desk_plan(occlusion)
    for p in plan.parts.values():
        save_mesh(p.mesh, out / p.mesh_path)
    path = out / plan_name
    path.write_text(plan_to_yaml(plan))
    save_params(desk_params(), out / "params.txt")
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m asmpose.scenes", description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--occlusion", action="store_true", help="add a fourth, heavily occluded step")
    args = ap.parse_args(argv)
    path = write_desk_scene(args.out_dir, args.occlusion)
    plan = load_plan(path)
    print(f"plan={path} steps={len(plan.steps)} parts={len(plan.parts)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

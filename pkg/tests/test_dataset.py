import json
import math
import shutil

import numpy as np
import pytest

from asmpose.dataset import (
    AssemblyPlan,
    AssemblyStep,
    DatasetError,
    HemisphereSampling,
    Part,
    PlanError,
    decode_depth,
    encode_depth,
    generate_dataset,
    hemisphere_poses,
    load_dataset,
    load_plan,
)
from asmpose import primitives
from asmpose.geometry import RigidTransform, compose
from asmpose.render import CameraModel, depth_to_cloud, raycast_scene
from asmpose.scenes import desk_plan, write_desk_scene
from oracles import distance_to_mesh


def test_single_triple_looks_straight_down():
    (pose,) = hemisphere_poses(HemisphereSampling([0.0], [math.pi / 2], [1.0]))
    assert np.allclose(pose.translation, [0, 0, 1], atol=1e-15)
    assert np.allclose(pose.rotation[:, 2], [0, 0, -1], atol=1e-15)


def test_poses_sit_at_their_scale_and_look_at_target():
    s = HemisphereSampling.grid(5, 4, 3, look_at=(0.1, -0.2, 0.05))
    poses = hemisphere_poses(s)
    assert len(poses) == 60
    c = np.array(s.look_at)
    k = 0
    for _phi in s.yaw_values:
        for _theta in s.pitch_values:
            for scale in s.scale_values:
                p = poses[k]
                k += 1
                assert abs(np.linalg.norm(p.translation - c) - scale) <= 1e-9
                fwd = (c - p.translation) / np.linalg.norm(c - p.translation)
                assert np.allclose(p.rotation[:, 2], fwd, atol=1e-12)
                # roll-free: the camera x axis stays horizontal
                assert abs(p.rotation[2, 0]) < 1e-12


def test_431_triples_give_431_poses():
    s = HemisphereSampling(list(np.linspace(0, 2 * math.pi, 431, endpoint=False)), [math.pi / 4], [0.5])
    assert len(hemisphere_poses(s)) == 431 == len(s)


@pytest.mark.parametrize("kw", [dict(pitch_values=[0.0]), dict(pitch_values=[2.0]), dict(scale_values=[0.0]), dict(yaw_values=[])])
def test_sampling_validation(kw):
    args = dict(yaw_values=[0.0], pitch_values=[0.5], scale_values=[1.0])
    args.update(kw)
    with pytest.raises(ValueError):
        HemisphereSampling(**args)


def test_plan_invariants():
    plan = desk_plan()
    assert [s.base_parts for s in plan.steps] == [["plate"], ["plate", "cylinder"], ["plate", "cylinder", "block"]]
    poses = plan.assembled_poses()
    assert np.array_equal(poses["plate"].matrix(), np.eye(4))
    for s in plan.steps:
        assert np.array_equal(poses[s.assembly_part].matrix(), compose(s.relative_pose, poses["plate"]).matrix())


def test_plan_rejects_inconsistent_steps():
    mesh = primitives.box(0.01, 0.01, 0.01)
    parts = [Part("a", 1, mesh), Part("b", 2, mesh), Part("c", 3, mesh)]
    eye = RigidTransform.identity()
    with pytest.raises(PlanError, match="base"):
        AssemblyPlan(parts, [AssemblyStep(1, ["a"], "b", eye), AssemblyStep(2, ["a"], "c", eye)])
    with pytest.raises(PlanError, match="unknown part"):
        AssemblyPlan(parts, [AssemblyStep(1, ["a"], "z", eye)])
    with pytest.raises(PlanError, match="already assembled"):
        AssemblyPlan(parts, [AssemblyStep(1, ["a"], "a", eye)])
    with pytest.raises(PlanError):
        AssemblyPlan([Part("a", 1, mesh), Part("b", 1, mesh)], [AssemblyStep(1, ["a"], "b", eye)])


def test_plan_file_roundtrip(tmp_path):
    path = write_desk_scene(tmp_path, occlusion=True)
    plan = load_plan(path)
    ref = desk_plan(occlusion=True)
    assert [s.assembly_part for s in plan.steps] == [s.assembly_part for s in ref.steps]
    for a, b in zip(plan.steps, ref.steps):
        assert np.array_equal(a.relative_pose.matrix(), b.relative_pose.matrix())
        assert len(a.symmetries) == len(b.symmetries)
    for name, part in plan.parts.items():
        assert np.array_equal(part.mesh.vertices, ref.parts[name].mesh.vertices)
    assert plan.steps[3].occluders[0][0] == "hood"


def test_plan_file_errors(tmp_path):
    path = write_desk_scene(tmp_path)
    text = path.read_text()
    (tmp_path / "missing_mesh.yaml").write_text(text.replace("cone.obj", "nope.obj"))
    with pytest.raises(PlanError, match="nope.obj"):
        load_plan(tmp_path / "missing_mesh.yaml")
    (tmp_path / "bad.yaml").write_text("parts: [\n")
    with pytest.raises(PlanError):
        load_plan(tmp_path / "bad.yaml")
    (tmp_path / "empty.yaml").write_text("steps: []\n")
    with pytest.raises(PlanError, match="parts"):
        load_plan(tmp_path / "empty.yaml")


def test_plan_unit_scale(tmp_path):
    (tmp_path / "a.obj").write_text("v 0 0 0\nv 10 0 0\nv 0 10 0\nv 0 0 10\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n")
    (tmp_path / "plan.yaml").write_text(
        "unit_scale: 0.001\nparts:\n- {name: a, id: 1, mesh: a.obj}\n- {name: b, id: 2, mesh: a.obj}\n"
        "steps:\n- {assembly: b, relative_pose: [1,0,0,0, 0,1,0,0, 0,0,1,0.02, 0,0,0,1]}\n"
    )
    plan = load_plan(tmp_path / "plan.yaml")
    assert plan.parts["a"].mesh.vertices.max() == pytest.approx(0.01)
    assert plan.steps[0].base_parts == ["a"]


def test_depth_encoding_bound():
    z = np.random.default_rng(0).uniform(0.2, 0.6, size=(50, 50))
    back = decode_depth(encode_depth(z, 0.1), 0.1)
    assert np.abs(back - z).max() <= 0.1e-3 / 2 + 1e-15
    with pytest.raises(DatasetError):
        encode_depth(np.array([[7.0]]), 0.1)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    plan = desk_plan()
    sampling = HemisphereSampling.grid(2, 2, 1, look_at=(0, 0, 0.02))
    generate_dataset(plan, sampling, root / "ds", seed=0)
    return plan, sampling, root / "ds"


def test_generation_counts_and_layout(small):
    plan, sampling, path = small
    ds = load_dataset(path)
    assert ds.num_steps == 3 and len(ds) == 3 * 4
    for s in (1, 2, 3):
        d = path / f"step_{s:02d}"
        assert sorted(p.name for p in (d / "depth").iterdir()) == [f"{i:06d}.png" for i in range(4)]
        assert (d / "scene_gt.json").exists() and (d / "scene_camera.json").exists()


def test_roundtrip_is_exact(small):
    plan, sampling, path = small
    ds = load_dataset(path)
    cams = hemisphere_poses(sampling)
    poses = plan.assembled_poses()
    for rec in ds:
        assert np.array_equal(rec.camera.pose.matrix(), cams[rec.image_id].matrix())
        assert np.array_equal(rec.camera.K, np.array([[615.0, 0, 320], [0, 615, 240], [0, 0, 1]]))
        for obj_id, pose in rec.object_poses.items():
            assert np.array_equal(pose.matrix(), poses[plan.part_by_id(obj_id).name].matrix())


def test_depth_and_labels_roundtrip(small):
    plan, sampling, path = small
    ds = load_dataset(path)
    for rec in ds.records(2):
        depth, labels = raycast_scene(plan.scene_objects(2), rec.camera)
        assert np.array_equal(labels.values, rec.labels.values)
        assert np.abs(depth.values - rec.depth.values).max() <= rec.depth_scale * 1e-3 / 2 + 1e-15


def test_cumulative_base_by_label_ids(small):
    plan, _, path = small
    ds = load_dataset(path)
    # a view from high above sees every placed part
    for s in (1, 2, 3):
        assert ds.record(s, 1).labels.ids() == set(plan.base_ids(s))


def test_assembly_ground_truth_comes_from_next_step(small):
    plan, _, path = small
    ds = load_dataset(path)
    poses = plan.assembled_poses()
    for s in (1, 2, 3):
        gt = ds.assembly_ground_truth(s, 0)
        assert np.array_equal(gt.matrix(), poses[plan.step(s).assembly_part].matrix())
    assert ds.complete_assembly.keys() == {1, 2, 3, 4}


def test_reprojection_in_memory_is_on_surface(small):
    plan, sampling, _ = small
    cam = CameraModel(615.0, 615.0, 320.0, 240.0, 640, 480, hemisphere_poses(sampling)[1])
    depth, labels = raycast_scene(plan.scene_objects(3), cam)
    world = plan.base_mesh(3)
    pts = depth_to_cloud(depth, cam, labels).points[::40]
    assert distance_to_mesh(pts, world.vertices, world.triangles).max() <= 1e-6


def test_reprojection_after_reload_within_quantization(small):
    plan, _, path = small
    rec = load_dataset(path).record(3, 1)
    world = plan.base_mesh(3)
    pts = depth_to_cloud(rec.depth, rec.camera, rec.labels)
    # a depth error dz moves the point along its ray by dz * |ray| with ray = (x/z, y/z, 1)
    rays = np.linalg.inv(rec.camera.pose.matrix())[:3, :3] @ (pts.points - rec.camera.pose.translation).T
    stretch = np.linalg.norm(rays / rays[2], axis=0)
    bound = rec.depth_scale * 1e-3 / 2 * stretch
    d = distance_to_mesh(pts.points[::40], world.vertices, world.triangles)
    assert np.all(d <= bound[::40] + 1e-12)


def test_noise_is_seeded(tmp_path):
    plan = desk_plan()
    s = HemisphereSampling([0.3], [1.0], [0.3], (0, 0, 0.02))
    for name in ("a", "b"):
        generate_dataset(plan, s, tmp_path / name, seed=5, depth_noise=0.0005)
    generate_dataset(plan, s, tmp_path / "c", seed=6, depth_noise=0.0005)
    png = "step_01/depth/000000.png"
    assert (tmp_path / "a" / png).read_bytes() == (tmp_path / "b" / png).read_bytes()
    assert (tmp_path / "a" / png).read_bytes() != (tmp_path / "c" / png).read_bytes()


def test_threads_do_not_change_output(tmp_path, small):
    plan, sampling, path = small
    generate_dataset(plan, sampling, tmp_path / "t", seed=0, threads=3)
    for f in sorted(p.relative_to(path) for p in path.rglob("*") if p.is_file()):
        assert (path / f).read_bytes() == (tmp_path / "t" / f).read_bytes(), f


def test_missing_pose_file_names_the_file(small, tmp_path):
    _, _, path = small
    copy = tmp_path / "ds"
    shutil.copytree(path, copy)
    (copy / "step_02" / "scene_gt.json").unlink()
    ds = load_dataset(copy)
    with pytest.raises(DatasetError, match=r"step_02.scene_gt\.json"):
        ds.record(2, 0)


def test_malformed_field_names_file_and_field(small, tmp_path):
    _, _, path = small
    copy = tmp_path / "ds"
    shutil.copytree(path, copy)
    f = copy / "step_01" / "scene_camera.json"
    doc = json.loads(f.read_text())
    del doc["0"]["cam_K"]
    f.write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match=r"scene_camera\.json.*cam_K"):
        load_dataset(copy).record(1, 0)
    (copy / "dataset_info.json").write_text("{")
    with pytest.raises(DatasetError, match=r"dataset_info\.json"):
        load_dataset(copy)


def test_missing_image_is_reported(small, tmp_path):
    _, _, path = small
    copy = tmp_path / "ds"
    shutil.copytree(path, copy)
    (copy / "step_03" / "mask" / "000002.png").unlink()
    with pytest.raises(DatasetError, match="000002.png"):
        load_dataset(copy).record(3, 2)


def test_plan_errors_before_any_write(tmp_path):
    plan = desk_plan()
    plan.parts["cone"].mesh = primitives.box(1, 1, 1).__class__(np.zeros((0, 3)), np.zeros((0, 3), int))
    with pytest.raises(PlanError):
        generate_dataset(plan, HemisphereSampling([0.0], [1.0], [0.3]), tmp_path / "never")
    assert not (tmp_path / "never").exists()

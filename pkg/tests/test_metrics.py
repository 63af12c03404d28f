import math

import numpy as np
import pytest

from asmpose import primitives
from asmpose.dataset import DatasetError
from asmpose.geometry import RigidTransform, axis_angle_matrix, compose, random_transform
from asmpose.metrics import CSV_COLUMNS, adi, build_models, evaluate_estimates, mssd, rows_to_csv, rows_to_table
from asmpose.pipeline import AssemblyEstimate
from asmpose.registration import RegistrationResult
from asmpose.symmetry import SymmetrySet
from oracles import brute_adi, max_vertex_distance


def test_adi_trivial_cases():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3))
    t = random_transform(rng)
    assert adi(t, t, pts) == 0.0
    one = np.array([[0.1, 0.2, 0.3]])
    assert adi(RigidTransform.identity(), RigidTransform.from_translation((0.25, 0, 0)), one) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        adi(t, t, np.zeros((0, 3)))


def test_adi_matches_double_loop():
    rng = np.random.default_rng(1)
    pts = rng.normal(scale=0.05, size=(500, 3))
    gt, est = random_transform(rng, 0.1), random_transform(rng, 0.1)
    assert abs(adi(gt, est, pts) - brute_adi(gt.transform_points(pts), est.transform_points(pts))) <= 1e-12


def test_mssd_trivial_and_empty():
    v = primitives.box(0.02, 0.03, 0.04).vertices
    t = random_transform(np.random.default_rng(2))
    assert mssd(t, t, v) == 0.0
    with pytest.raises(ValueError):
        mssd(t, t, np.zeros((0, 3)))


def test_mssd_identity_set_equals_max_distance():
    rng = np.random.default_rng(3)
    v = rng.normal(scale=0.03, size=(200, 3))
    for _ in range(10):
        gt, est = random_transform(rng, 0.1), random_transform(rng, 0.1)
        assert abs(mssd(gt, est, v, SymmetrySet.identity()) - max_vertex_distance(gt.matrix(), est.matrix(), v)) <= 1e-12


def test_mssd_absorbs_declared_symmetry():
    mesh = primitives.box(0.02, 0.03, 0.04)
    sym = SymmetrySet.from_spec([{"axis": [0, 0, 1], "order": 2}])
    flip = RigidTransform(axis_angle_matrix((0, 0, 1), math.pi), (0, 0, 0))
    gt = random_transform(np.random.default_rng(4), 0.1)
    est = compose(gt, flip)
    assert mssd(gt, est, mesh.vertices, sym) <= 1e-15
    assert mssd(gt, est, mesh.vertices) > 0.01


def test_mssd_never_grows_with_more_symmetries():
    rng = np.random.default_rng(5)
    v = primitives.cylinder(0.015, 0.02, 36).vertices
    specs = [[], [{"axis": [0, 0, 1], "order": 2}], [{"axis": [0, 0, 1], "order": 4}],
             [{"axis": [0, 0, 1], "order": 4}, {"axis": [1, 0, 0], "order": 2}],
             [{"axis": [0, 0, 1], "continuous": True}, {"axis": [1, 0, 0], "order": 2}]]
    sets = [SymmetrySet.from_spec(s) for s in specs]
    for _ in range(20):
        gt, est = random_transform(rng, 0.05), random_transform(rng, 0.05)
        vals = [mssd(gt, est, v, s) for s in sets]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_metrics_invariant_to_shared_world_motion():
    rng = np.random.default_rng(6)
    pts = rng.normal(scale=0.03, size=(300, 3))
    sym = SymmetrySet.from_spec([{"axis": [0, 0, 1], "order": 3}])
    gt, est, w = random_transform(rng, 0.1), random_transform(rng, 0.1), random_transform(rng, 1.0)
    assert adi(compose(w, gt), compose(w, est), pts) == pytest.approx(adi(gt, est, pts), abs=1e-12)
    assert mssd(compose(w, gt), compose(w, est), pts, sym) == pytest.approx(mssd(gt, est, pts, sym), abs=1e-12)


def test_symmetry_set_closure():
    s = SymmetrySet.from_spec([{"axis": [0, 0, 1], "order": 4}, {"axis": [1, 0, 0], "order": 2}])
    assert len(s) == 8
    mats = [t.matrix() for t in s]
    for a in s:
        for b in s:
            c = compose(a, b).matrix()
            assert any(np.allclose(c, m, atol=1e-9) for m in mats)
    assert np.array_equal(next(iter(SymmetrySet.identity())).matrix(), np.eye(4))
    assert len(SymmetrySet.from_spec([{"axis": [0, 0, 1], "continuous": True}])) == 36
    with pytest.raises(ValueError):
        SymmetrySet.from_spec([{"axis": [0, 0, 0], "order": 2}])
    with pytest.raises(ValueError):
        SymmetrySet.from_spec([{"axis": [0, 0, 1], "continuous": True}, {"axis": [1, 0, 0], "continuous": True}])


def test_off_origin_axis_symmetry():
    # a cylinder whose axis passes through (1, 2, 0) is unchanged by rotations about that line
    mesh = primitives.cylinder(0.01, 0.02, 36)
    v = mesh.vertices + [1.0, 2.0, 0.0]
    sym = SymmetrySet.from_spec([{"axis": [0, 0, 1], "center": [1, 2, 0], "continuous": True}])
    r = axis_angle_matrix((0, 0, 1), math.radians(70))
    spin = RigidTransform(r, np.array([1.0, 2.0, 0.0]) - r @ [1.0, 2.0, 0.0])
    assert mssd(RigidTransform.identity(), spin, v, sym) <= 1e-12


def _fake(step, image_id, T_w_a, plan, elapsed=0.5):
    T_w_b = compose(plan.step(step).relative_pose.inverse(), T_w_a)
    return AssemblyEstimate(step, image_id, T_w_b, T_w_a, RegistrationResult(RigidTransform.identity(), 1.0, 0.0, 10), elapsed)


def test_ground_truth_estimates_give_zero_errors(desk3):
    ds, plan = desk3.dataset, desk3.plan
    est = [_fake(s, i, ds.assembly_ground_truth(s, i), plan) for s in (1, 2, 3) for i in (0, 9, 30)]
    rows = evaluate_estimates(est, ds, plan, build_models(plan, samples=2000))
    assert [r.step for r in rows] == [1, 2, 3]
    for r in rows:
        assert r.adi_mean == r.adi_stdv == r.mssd_mean == r.mssd_stdv == 0.0
        assert r.time_mean == 0.5 and r.count == 3


def test_single_estimate_has_zero_spread_and_row_shape(desk3):
    ds, plan = desk3.dataset, desk3.plan
    moved = lambda s: compose(RigidTransform.from_translation((0.001, 0, 0)), ds.assembly_ground_truth(s, 2))
    rows = evaluate_estimates([_fake(s, 2, moved(s), plan) for s in (1, 2, 3)], ds, plan, build_models(plan, samples=2000))
    assert np.array([r.numeric() for r in rows]).shape == (3, 9)
    for r in rows:
        assert r.fitness_stdv == r.rmse_stdv == r.adi_stdv == r.mssd_stdv == 0.0
        assert r.mssd_mean == pytest.approx(0.001, abs=1e-12)
        assert 0 < r.adi_mean <= 0.001 + 1e-12


def test_errors_are_scored_per_step(desk3):
    # a perfect step stays at zero next to a bad one: no propagation between steps
    ds, plan = desk3.dataset, desk3.plan
    bad = compose(RigidTransform.from_translation((0.01, 0, 0)), ds.assembly_ground_truth(1, 0))
    est = [_fake(1, 0, bad, plan), _fake(2, 0, ds.assembly_ground_truth(2, 0), plan)]
    rows = evaluate_estimates(est, ds, plan, build_models(plan, samples=2000))
    assert rows[0].mssd_mean > 0.009 and rows[1].mssd_mean == 0.0


def test_unknown_record_is_named(desk3):
    ds, plan = desk3.dataset, desk3.plan
    est = [_fake(2, 99, RigidTransform.identity(), plan)]
    with pytest.raises(DatasetError, match="step 2 image 99"):
        evaluate_estimates(est, ds, plan, build_models(plan, samples=100))


def test_csv_and_table_layout(desk3):
    ds, plan = desk3.dataset, desk3.plan
    rows = evaluate_estimates([_fake(s, 0, ds.assembly_ground_truth(s, 0), plan) for s in (1, 2, 3)], ds, plan,
                              build_models(plan, samples=100))
    lines = rows_to_csv(rows).splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert len(lines) == 4 and all(len(l.split(",")) == 10 for l in lines)
    table = rows_to_table(rows, extra=False).splitlines()
    assert len(table) == 4 and len(table[1].split()) == 10


def test_model_sampling_defaults(desk3):
    models = build_models(desk3.plan)
    assert sorted(models) == [1, 2, 3]
    assert models[1].points.shape == (30_000, 3)
    assert np.array_equal(models[3].vertices, desk3.plan.parts["cone"].mesh.vertices)
    assert len(models[1].symmetries) == 72

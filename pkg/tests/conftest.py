"""Shared fixtures: the desk-scale scenes, their datasets and estimates.

Datasets and estimates are expensive, so they are built once per session.
"""
from __future__ import annotations

import time

import pytest

from asmpose.dataset import generate_dataset, load_dataset, load_plan, plan_sampling
from asmpose.pipeline import estimate_sequence, write_estimates
from asmpose.registration import load_params
from asmpose.scenes import write_desk_scene


def _build(tmp_path_factory, name: str, occlusion: bool):
    root = tmp_path_factory.mktemp(name)
    plan_path = write_desk_scene(root / "scene", occlusion=occlusion)
    plan = load_plan(plan_path)
    params = load_params(root / "scene" / "params.txt")
    generate_dataset(plan, plan_sampling(plan), root / "dataset", seed=0)
    return root, plan_path, plan, params


class Run:
    def __init__(self, root, plan_path, plan, params):
        self.root, self.plan_path, self.plan, self.params = root, plan_path, plan, params
        self.dataset_path = root / "dataset"
        self.dataset = load_dataset(self.dataset_path)
        self._estimates = None

    @property
    def estimates(self):
        if self._estimates is None:
            start = time.perf_counter()
            self._estimates = estimate_sequence(self.dataset, self.plan, params=self.params)
            self.estimate_wall = time.perf_counter() - start
            self.estimates_path = self.root / "estimates.jsonl"
            write_estimates(self._estimates, self.estimates_path, self._estimates.failures)
        return self._estimates


@pytest.fixture(scope="session")
def desk3(tmp_path_factory):
    """Three-step desk assembly, 48 noise-free views per step."""
    start = time.perf_counter()
    run = Run(*_build(tmp_path_factory, "desk3", occlusion=False))
    run.generate_wall = time.perf_counter() - start
    return run


@pytest.fixture(scope="session")
def desk4(tmp_path_factory):
    """The same assembly plus a fourth step with most of the base hidden."""
    return Run(*_build(tmp_path_factory, "desk4", occlusion=True))

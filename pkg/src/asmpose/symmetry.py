"""Global symmetry sets of rigid objects."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .geometry import RigidTransform, axis_angle_matrix, compose

CONTINUOUS_SAMPLES = 36


class SymmetrySet:
    """A finite set of model-frame transforms that leave an object unchanged.

    Always contains the identity. Built from generator specs, each a mapping
    with ``axis`` (3-vector), optional ``center`` (point on the axis, default
    origin) and either ``order`` (n-fold discrete symmetry) or
    ``continuous: true`` (sampled every 360/``samples`` degrees). The set is
    closed under composition of its generators.
    """

    def __init__(self, transforms: Sequence[RigidTransform] | None = None):
        ts = list(transforms or [])
        if not any(_same(t, RigidTransform.identity()) for t in ts):
            ts.insert(0, RigidTransform.identity())
        self.transforms = ts

    def __len__(self) -> int:
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    @classmethod
    def identity(cls) -> "SymmetrySet":
        return cls()

    @classmethod
    def from_spec(cls, specs: Iterable[dict] | None, max_size: int = 512) -> "SymmetrySet":
        gens = []
        for spec in specs or []:
            axis = np.asarray(spec["axis"], dtype=np.float64)
            if np.linalg.norm(axis) == 0:
                raise ValueError("symmetry axis must be non-zero")
            center = np.asarray(spec.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
            if spec.get("continuous", False):
                n = int(spec.get("samples", CONTINUOUS_SAMPLES))
            else:
                n = int(spec.get("order", 1))
            if n < 1:
                raise ValueError("symmetry order must be >= 1")
            for k in range(1, n):
                r = axis_angle_matrix(axis, 2 * np.pi * k / n)
                gens.append(RigidTransform(r, center - r @ center))
        elems = [RigidTransform.identity()]
        frontier = list(elems)
        while frontier:
            nxt = []
            for a in frontier:
                for g in gens:
                    c = compose(g, a)
                    if not any(_same(c, e) for e in elems):
                        elems.append(c)
                        nxt.append(c)
                        if len(elems) > max_size:
                            raise ValueError("symmetry group too large (continuous generators about different axes?)")
            frontier = nxt
        return cls(elems)

    def to_spec_matrices(self) -> list[list[float]]:
        return [t.matrix().reshape(-1).tolist() for t in self.transforms]


def _same(a: RigidTransform, b: RigidTransform, tol: float = 1e-9) -> bool:
    return np.abs(a.rotation - b.rotation).max() < tol and np.abs(a.translation - b.translation).max() < tol

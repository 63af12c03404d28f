"""Assembly pose estimation from depth images by CAD-model registration."""
from .geometry import PointCloud, RigidTransform, TriangleMesh, apply, compose, invert
from .registration import RegistrationParams, RegistrationResult, register
from .symmetry import SymmetrySet

__version__ = "0.1.0"
__all__ = ["PointCloud", "RigidTransform", "TriangleMesh", "apply", "compose", "invert",
           "RegistrationParams", "RegistrationResult", "register", "SymmetrySet"]

"""Implicit surface reconstruction from oriented point clouds with Matérn kernels."""

import os

# Prefer OpenMP so numba does not probe (and warn about) an outdated TBB.
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

from .errors import ReconError  # noqa: E402
from .field import ImplicitField, SimilarityTransform, evaluate, gradient  # noqa: E402
from .kernels import KernelSpec, Taper  # noqa: E402
from .krr import OrientedPointCloud, build_system, solve_dense, solve_sparse  # noqa: E402
from .mesher import TriangleMesh, extract_surface, normalize, reconstruct  # noqa: E402

__all__ = [
    "ImplicitField",
    "KernelSpec",
    "OrientedPointCloud",
    "ReconError",
    "SimilarityTransform",
    "Taper",
    "TriangleMesh",
    "build_system",
    "evaluate",
    "extract_surface",
    "gradient",
    "normalize",
    "reconstruct",
    "solve_dense",
    "solve_sparse",
]

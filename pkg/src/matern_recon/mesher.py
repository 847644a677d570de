"""Normalization, lattice sampling and zero-level-set extraction.

The field is positive outside the surface: normals point along its gradient
and extracted faces are wound toward increasing values.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySurfaceError, InvalidInputError, ReconError, StageError
from .field import GridSpec, ImplicitField, SimilarityTransform
from .kernels import KernelSpec
from .krr import DEFAULT_EPSILON, DEFAULT_LAMBDA, DENSE_LIMIT, OrientedPointCloud, build_system, solve
from .marching_cubes import marching_cubes

log = logging.getLogger(__name__)

DEFAULT_PADDING = 0.05
DEFAULT_RESOLUTION = 128
GRID_HALF_WIDTH = 0.55
MIN_RESOLUTION, MAX_RESOLUTION = 16, 1024


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("mesh vertices contain NaN or Inf")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidInputError(f"face index out of range for {len(v)} vertices")
        if len(f) and not np.all(face_areas(v, f) > 0):
            raise InvalidInputError("mesh contains degenerate (zero-area) faces")
        n = self.vertex_normals
        if n is None:
            n = area_weighted_normals(v, f)
        n = np.ascontiguousarray(np.asarray(n, dtype=np.float64).reshape(-1, 3))
        if n.shape != v.shape:
            raise InvalidInputError("vertex_normals must match vertices in shape")
        for name, a in (("vertices", v), ("faces", f), ("vertex_normals", n)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.faces)

    def is_watertight(self) -> bool:
        """Every edge is shared by exactly two faces with opposite directions."""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        if len(np.unique(directed, axis=0)) != len(directed):
            return False
        return len(self.edges()) * 2 == len(directed)


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    b = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def area_weighted_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Vertex normals as the normalized sum of adjacent face normals weighted by area."""
    out = np.zeros_like(vertices)
    if len(faces):
        fn = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]], vertices[faces[:, 2]] - vertices[faces[:, 0]])
        for c in range(3):
            np.add.at(out, faces[:, c], fn)
    length = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, length, out=np.zeros_like(out), where=length > 0)


def normalize(cloud: OrientedPointCloud, padding: float = DEFAULT_PADDING):
    """Scale and translate the cloud so its bounding box is centered in ``[-0.5+pad, 0.5-pad]^3``.

    A single point is only translated to the origin.

    Returns the normalized cloud and the world-to-normalized transform.
    """
    if not 0 <= padding < 0.5:
        raise InvalidInputError(f"padding must lie in [0, 0.5), got {padding}")
    lo, hi = cloud.points.min(axis=0), cloud.points.max(axis=0)
    extent = float((hi - lo).max())
    if len(cloud) == 1:
        scale = 1.0  # a lone point has no extent; only center it
    elif not extent > 0:
        raise InvalidInputError("degenerate cloud: all points coincide")
    else:
        scale = (1.0 - 2.0 * padding) / extent
    transform = SimilarityTransform(scale, tuple(-scale * (lo + hi) / 2.0))
    return OrientedPointCloud(transform.apply(cloud.points), cloud.normals), transform


def extract_surface(field, resolution: int = DEFAULT_RESOLUTION, iso: float = 0.0) -> TriangleMesh:
    """Mesh the ``iso`` level set of ``field`` sampled over ``[-0.55, 0.55]^3``.

    ``field`` is an :class:`ImplicitField` or anything with the same
    ``eval_grid``, ``gradient`` and ``transform`` members. Vertices are
    returned in world coordinates.
    """
    if not MIN_RESOLUTION <= resolution <= MAX_RESOLUTION:
        raise InvalidInputError(
            f"resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {resolution}"
        )
    grid = GridSpec.cube(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, resolution)
    values = field.eval_grid(grid)
    vol = values.array
    fmin, fmax = float(vol.min()), float(vol.max())
    if not (fmin < iso <= fmax):
        raise EmptySurfaceError(
            f"no sign change of f - {iso:g} on the grid (min {fmin:.4g}, max {fmax:.4g})", fmin, fmax
        )
    verts, faces = marching_cubes(vol, iso, grid.origin, grid.spacing)
    if len(faces) == 0:
        raise EmptySurfaceError(f"marching cubes produced no faces (min {fmin:.4g}, max {fmax:.4g})", fmin, fmax)
    grad = np.asarray(field.gradient(verts, mode="auto"), dtype=np.float64)
    length = np.linalg.norm(grad, axis=1, keepdims=True)
    fallback = area_weighted_normals(verts, faces)
    normals = np.where(length > 0, grad / np.where(length > 0, length, 1.0), fallback)
    return TriangleMesh(field.transform.inverse(verts), faces, normals)


@dataclass
class Reconstruction:
    mesh: TriangleMesh
    field: ImplicitField
    timings: dict[str, float] = field(default_factory=dict)
    solver: str = "dense"


def run_pipeline(
    cloud: OrientedPointCloud,
    spec: KernelSpec,
    epsilon: float = DEFAULT_EPSILON,
    lam: float = DEFAULT_LAMBDA,
    resolution: int = DEFAULT_RESOLUTION,
    padding: float = DEFAULT_PADDING,
    dense_limit: int = DENSE_LIMIT,
    cg_tol: float = 1e-10,
    cg_max_iters: int = 10_000,
) -> Reconstruction:
    """normalize, build the ridge system, solve, extract; each stage timed and labeled on failure."""
    timings: dict[str, float] = {}

    def stage(name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except ReconError as exc:
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - t0
        log.info("%s: %.3f s", name, timings[name])
        return out

    normalized, transform = stage("normalize", normalize, cloud, padding)
    system = stage("assembly", build_system, normalized, epsilon, lam, transform)
    solver = "sparse" if spec.taper is not None else "dense"
    log.info("solver: %s (%d centers)", solver, system.size)
    cg = {"cg_tol": cg_tol, "cg_max_iters": cg_max_iters} if solver == "sparse" else {}
    f = stage("solve", solve, system, spec, dense_limit, **cg)
    mesh = stage("extraction", extract_surface, f, resolution)
    return Reconstruction(mesh, f, timings, solver)


def reconstruct(
    cloud: OrientedPointCloud,
    spec: KernelSpec,
    epsilon: float = DEFAULT_EPSILON,
    lam: float = DEFAULT_LAMBDA,
    resolution: int = DEFAULT_RESOLUTION,
    **options,
) -> TriangleMesh:
    return run_pipeline(cloud, spec, epsilon, lam, resolution, **options).mesh

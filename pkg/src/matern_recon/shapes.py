"""Analytic test shapes: oriented samplers and an exact signed-distance field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import GridSpec, ScalarGrid, SimilarityTransform
from .krr import OrientedPointCloud


def sample_sphere(m: int, radius: float = 1.0, center=(0.0, 0.0, 0.0), seed: int = 0) -> OrientedPointCloud:
    """Uniform samples on a sphere with outward normals."""
    rng = np.random.default_rng(seed)
    n = rng.normal(size=(m, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return OrientedPointCloud(np.asarray(center) + radius * n, n)


def sample_torus(m: int, major: float = 0.3, minor: float = 0.1, seed: int = 0) -> OrientedPointCloud:
    """Area-uniform samples on a torus around the z axis, outward normals.

    The area element is proportional to ``major + minor cos(theta)``, so the
    tube angle is drawn by rejection.
    """
    rng = np.random.default_rng(seed)
    theta = np.empty(0)
    while len(theta) < m:
        t = rng.uniform(0.0, 2 * math.pi, size=2 * m)
        u = rng.uniform(0.0, major + minor, size=2 * m)
        theta = np.concatenate([theta, t[u < major + minor * np.cos(t)]])
    theta = theta[:m]
    phi = rng.uniform(0.0, 2 * math.pi, size=m)
    ring = major + minor * np.cos(theta)
    pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)
    nrm = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)], axis=1)
    return OrientedPointCloud(pts, nrm)


@dataclass(frozen=True)
class SphereSDF:
    """Exact signed distance to a sphere; positive outside.

    Offers the same ``eval_grid``/``gradient``/``transform`` surface as
    :class:`ImplicitField`, so it can stand in for one when meshing.
    """

    radius: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    transform: SimilarityTransform = field(default_factory=SimilarityTransform)

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.linalg.norm(p - np.asarray(self.center), axis=1) - self.radius

    def eval_grid(self, grid: GridSpec) -> ScalarGrid:
        return ScalarGrid(grid.resolution, grid.origin, grid.spacing, self(grid.nodes()))

    def gradient(self, points, mode: str = "auto") -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=np.float64)) - np.asarray(self.center)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class ConstantField:
    """Field with the same value everywhere; has no level set unless ``value == iso``."""

    value: float
    transform: SimilarityTransform = field(default_factory=SimilarityTransform)

    def eval_grid(self, grid: GridSpec) -> ScalarGrid:
        return ScalarGrid(grid.resolution, grid.origin, grid.spacing, np.full(grid.size, float(self.value)))

    def gradient(self, points, mode: str = "auto") -> np.ndarray:
        return np.zeros_like(np.atleast_2d(np.asarray(points, dtype=np.float64)))

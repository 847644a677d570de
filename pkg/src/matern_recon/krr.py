"""Finite-difference kernel ridge regression for oriented point clouds.

Each sample ``x_i`` with normal ``n_i`` contributes two centers,
``x_i + eps n_i`` with target ``+eps`` and ``x_i - eps n_i`` with target
``-eps``. The coefficients solve ``(K + lam I) alpha = y``; the field is
positive on the side the normals point to.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.spatial import cKDTree

from .errors import (
    CapacityError,
    InvalidInputError,
    IterativeFailureError,
    SingularSystemError,
)
from .field import ImplicitField, SimilarityTransform
from .kernels import KernelSpec, eval_kernel, gram_matrix

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.005
DEFAULT_LAMBDA = 1e-10
LAMBDA_SWEEP = (0.0, 1e-13, 1e-12, 1e-11, 1e-10)
DENSE_LIMIT = 20_000
RESIDUAL_WARN = 1e-8


class CoincidentCentersWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    """Points with unit normals; normals are rescaled to unit length on construction."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, ndmin=2)
        nrm = np.array(self.normals, dtype=np.float64, ndmin=2)
        if pts.shape != nrm.shape or pts.ndim != 2 or len(pts) == 0:
            raise InvalidInputError(
                f"points {pts.shape} and normals {nrm.shape} must be matching non-empty m x d arrays"
            )
        bad = ~(np.isfinite(pts).all(axis=1) & np.isfinite(nrm).all(axis=1))
        if bad.any():
            raise InvalidInputError(f"non-finite coordinates at row {int(np.argmax(bad))}")
        length = np.linalg.norm(nrm, axis=1)
        if (length == 0).any():
            raise InvalidInputError(f"normal {int(np.argmax(length == 0))} has zero length")
        nrm = nrm / length[:, None]
        pts.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class RidgeSystem:
    centers: np.ndarray
    targets: np.ndarray
    epsilon: float
    lam: float
    transform: SimilarityTransform = field(default_factory=SimilarityTransform)
    min_center_distance: float = math.nan

    @property
    def size(self) -> int:
        return len(self.centers)


def build_system(
    cloud: OrientedPointCloud,
    epsilon: float = DEFAULT_EPSILON,
    lam: float = DEFAULT_LAMBDA,
    transform: SimilarityTransform | None = None,
) -> RidgeSystem:
    """Offset every point along its normal in both directions.

    Centers are ordered as all ``+`` offsets followed by all ``-`` offsets.
    """
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    if not (math.isfinite(lam) and lam >= 0):
        raise InvalidInputError(f"lambda must be nonnegative, got {lam}")
    length = np.linalg.norm(cloud.normals, axis=1)
    off = np.abs(length - 1.0) > 1e-4
    if off.any():
        i = int(np.argmax(off))
        raise InvalidInputError(f"normal {i} has length {length[i]:.6g}, expected unit length")
    m = len(cloud)
    centers = np.concatenate([cloud.points + epsilon * cloud.normals, cloud.points - epsilon * cloud.normals])
    targets = np.concatenate([np.full(m, epsilon), np.full(m, -epsilon)])
    dmin = _min_pairwise_distance(centers)
    if dmin == 0.0:
        warnings.warn(
            f"coincident augmented centers (minimum pairwise distance {dmin:g}); "
            "the system is singular unless lambda > 0",
            CoincidentCentersWarning,
            stacklevel=2,
        )
    elif dmin < epsilon:
        log.info("closest augmented centers are %.3g apart (epsilon=%g)", dmin, epsilon)
    centers.setflags(write=False)
    targets.setflags(write=False)
    return RidgeSystem(
        centers, targets, float(epsilon), float(lam), transform or SimilarityTransform(), dmin
    )


def _min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    dist, _ = cKDTree(points).query(points, k=2)
    return float(dist[:, 1].min())


def relative_residual(A, alpha: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(A @ alpha - y) / np.linalg.norm(y))


def solve_dense(system: RidgeSystem, spec: KernelSpec, dense_limit: int = DENSE_LIMIT) -> ImplicitField:
    """Cholesky solve of ``(K + lam I) alpha = y`` with one refinement step."""
    n = system.size
    if n > dense_limit:
        raise CapacityError(
            f"{n} centers exceed the dense limit of {dense_limit}; "
            "use a tapered kernel with solve_sparse"
        )
    if system.lam == 0 and system.min_center_distance == 0:
        raise SingularSystemError(
            "coincident centers make K singular; use lambda > 0"
        )
    A = gram_matrix(spec, system.centers)
    A[np.diag_indices(n)] += system.lam
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"K + lambda I is not positive definite (lambda={system.lam:g}); try a larger lambda"
        ) from exc
    diag = np.diag(factor[0])
    if diag.min() ** 2 <= n * np.finfo(float).eps * diag.max() ** 2 * 1e-3:
        raise SingularSystemError(
            f"K + lambda I is numerically singular (lambda={system.lam:g}); try a larger lambda"
        )
    y = system.targets
    alpha = scipy.linalg.cho_solve(factor, y, check_finite=False)
    alpha = alpha + scipy.linalg.cho_solve(factor, y - A @ alpha, check_finite=False)
    res = relative_residual(A, alpha, y)
    log.info("dense solve: n=%d residual=%.3e", n, res)
    if res > RESIDUAL_WARN:
        log.warning(
            "dense solve residual %.3e exceeds %g; K + lambda I is ill-conditioned at lambda=%g",
            res, RESIDUAL_WARN, system.lam,
        )
    return ImplicitField(system.centers, alpha, spec, system.transform, res)


def tapered_matrix(system: RidgeSystem, spec: KernelSpec) -> scipy.sparse.csr_matrix:
    """Sparse ``K * taper + lam I`` keeping pairs closer than the cutoff."""
    if spec.taper is None:
        raise InvalidInputError("sparse assembly needs a tapered kernel (compact support)")
    X = np.ascontiguousarray(system.centers)
    i, j = neighbor_pairs(X, spec.taper.h_prime)
    n = len(X)
    off = np.asarray(eval_kernel(spec, X[i], X[j])) if len(i) else np.empty(0)
    keep = off != 0.0
    i, j, off = i[keep], j[keep], off[keep]
    diag = np.atleast_1d(eval_kernel(spec, X, X)) + system.lam
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([off, off, diag])
    A = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sort_indices()
    return A


def solve_sparse(
    system: RidgeSystem,
    spec: KernelSpec,
    cg_tol: float = 1e-10,
    cg_max_iters: int = 10_000,
) -> ImplicitField:
    """Jacobi-preconditioned conjugate gradients on the tapered system."""
    A = tapered_matrix(system, spec)
    y = np.asarray(system.targets, dtype=np.float64)
    inv_diag = 1.0 / A.diagonal()
    M = scipy.sparse.linalg.LinearOperator(A.shape, matvec=lambda v: inv_diag * v, dtype=np.float64)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    alpha, info = scipy.sparse.linalg.cg(
        A, y, rtol=cg_tol, atol=0.0, maxiter=cg_max_iters, M=M, callback=count
    )
    res = relative_residual(A, alpha, y)
    if info != 0:
        raise IterativeFailureError(
            f"CG stopped after {iterations} iterations at relative residual {res:.3e} "
            f"(tolerance {cg_tol:g})",
            residual=res,
            iterations=iterations,
        )
    log.info("sparse solve: n=%d nnz=%d iterations=%d residual=%.3e", A.shape[0], A.nnz, iterations, res)
    return ImplicitField(system.centers, alpha, spec, system.transform, res)


def solve(system: RidgeSystem, spec: KernelSpec, dense_limit: int = DENSE_LIMIT, **cg) -> ImplicitField:
    """Sparse path for tapered kernels, dense Cholesky otherwise."""
    if spec.taper is not None:
        return solve_sparse(system, spec, **cg)
    return solve_dense(system, spec, dense_limit)


def neighbor_pairs(points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs ``i < j`` with ``||p_i - p_j|| < radius``.

    Uses a uniform hash grid with cell size ``radius``; output is sorted by
    ``(i, j)``.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if len(pts) < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cells = np.floor((pts - pts.min(axis=0)) / radius).astype(np.int64)
    dims = cells.max(axis=0) + 3
    keys = _cell_keys(cells + 1, dims)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=pts.shape[1])), dtype=np.int64)
    nb_keys = np.stack([_cell_keys(cells + 1 + o, dims) for o in offsets], axis=1)
    lo = np.searchsorted(sorted_keys, nb_keys, side="left")
    hi = np.searchsorted(sorted_keys, nb_keys, side="right")
    counts = _count_pairs(pts, order, lo, hi, radius)
    start = np.concatenate([[0], np.cumsum(counts)])
    ii = np.empty(start[-1], np.int64)
    jj = np.empty(start[-1], np.int64)
    _fill_pairs(pts, order, lo, hi, radius, start, ii, jj)
    return ii, jj


def _cell_keys(cells: np.ndarray, dims: np.ndarray) -> np.ndarray:
    key = np.zeros(len(cells), np.int64)
    for k in range(cells.shape[1]):
        key = key * dims[k] + cells[:, k]
    return key


@numba.njit(cache=True)
def _within(pts, i, j, r2max):
    s = 0.0
    for k in range(pts.shape[1]):
        d = pts[i, k] - pts[j, k]
        s += d * d
    return s < r2max


@numba.njit(cache=True, parallel=True)
def _count_pairs(pts, order, lo, hi, radius):
    n = pts.shape[0]
    r2 = radius * radius
    counts = np.zeros(n, np.int64)
    for i in numba.prange(n):
        c = 0
        for o in range(lo.shape[1]):
            for t in range(lo[i, o], hi[i, o]):
                j = order[t]
                if j > i and _within(pts, i, j, r2):
                    c += 1
        counts[i] = c
    return counts


@numba.njit(cache=True, parallel=True)
def _fill_pairs(pts, order, lo, hi, radius, start, ii, jj):
    n = pts.shape[0]
    r2 = radius * radius
    for i in numba.prange(n):
        pos = start[i]
        for o in range(lo.shape[1]):
            for t in range(lo[i, o], hi[i, o]):
                j = order[t]
                if j > i and _within(pts, i, j, r2):
                    ii[pos] = i
                    jj[pos] = j
                    pos += 1
        # neighbours arrive cell by cell; sort this row's columns
        jj[start[i] : pos] = np.sort(jj[start[i] : pos])

"""Kernel expansion ``f(x) = sum_i alpha_i k(x, c_i)`` and its evaluation.

Every evaluation path (single points, point batches, lattices) runs through
the same compiled accumulation loop, so a lattice value is bit-identical to
evaluating its node coordinates one at a time. Each query point is owned by a
single thread and reduces over centers in a fixed order (eight interleaved
partial sums, then combined), so results do not depend on the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import CapacityError, InvalidInputError, UnsupportedGradientError
from .kernels import SQRT3, SQRT5, KernelSpec, pair_grad_scale, pair_value

NODE_BLOCK = 64
DEFAULT_DIFF_STEP = 1e-4
GRID_MEMORY_CAP = 8 * 1024**3  # bytes of float64 grid values


@dataclass(frozen=True)
class SimilarityTransform:
    """Maps world coordinates to normalized ones: ``scale * x + translation``."""

    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"transform scale must be positive, got {self.scale}")
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) + np.asarray(self.translation)

    def inverse(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) / self.scale


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImplicitField:
    centers: np.ndarray
    alpha: np.ndarray
    spec: KernelSpec
    transform: SimilarityTransform = field(default_factory=SimilarityTransform)
    residual: float = math.nan

    def __post_init__(self):
        centers = _frozen(np.atleast_2d(self.centers))
        alpha = _frozen(np.atleast_1d(self.alpha))
        if alpha.ndim != 1 or len(alpha) != len(centers):
            raise InvalidInputError(
                f"alpha has {alpha.shape} entries but there are {len(centers)} centers"
            )
        if not np.all(np.isfinite(alpha)):
            raise InvalidInputError("alpha contains non-finite values")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "alpha", alpha)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def with_alpha(self, alpha) -> ImplicitField:
        return ImplicitField(self.centers, alpha, self.spec, self.transform)

    # duck-typed surface used by the mesher
    def eval_grid(self, grid: GridSpec) -> ScalarGrid:
        return eval_grid(self, grid)

    def gradient(self, points, mode: str = "auto") -> np.ndarray:
        return gradient(self, points, mode=mode)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    spacing: float
    resolution: tuple[int, int, int]

    def __post_init__(self):
        if any(int(n) < 2 for n in self.resolution):
            raise InvalidInputError(f"grid resolution must be >= 2 per axis, got {self.resolution}")
        if not self.spacing > 0:
            raise InvalidInputError("grid spacing must be positive")
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def cube(cls, lo: float, hi: float, n: int) -> GridSpec:
        """``n`` nodes per axis spanning ``[lo, hi]^3``."""
        return cls((lo, lo, lo), (hi - lo) / (n - 1), (n, n, n))

    @property
    def size(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + np.arange(self.resolution[k]) * self.spacing

    def nodes(self) -> np.ndarray:
        """All node coordinates, x fastest."""
        zz, yy, xx = np.meshgrid(self.axis(2), self.axis(1), self.axis(0), indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    resolution: tuple[int, int, int]
    origin: tuple[float, float, float]
    spacing: float
    values: np.ndarray  # flat, x fastest

    def __post_init__(self):
        nx, ny, nz = self.resolution
        if self.values.shape != (nx * ny * nz,):
            raise InvalidInputError("values length must equal nx*ny*nz")

    @property
    def array(self) -> np.ndarray:
        """Values indexed ``[i, j, k]`` along x, y, z."""
        nx, ny, nz = self.resolution
        return self.values.reshape(nz, ny, nx).transpose(2, 1, 0)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.origin, self.spacing, self.resolution)


def _check_points(x, dim: int) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(pts))
    if pts.shape[1] != dim:
        raise InvalidInputError(f"expected {dim}-dimensional points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("query points must be finite")
    return pts, single


def evaluate(f: ImplicitField, x, in_world_coords: bool = False):
    """Field value at one point (returns float) or a batch of points."""
    pts, single = _check_points(x, f.dim)
    if in_world_coords:
        pts = np.ascontiguousarray(f.transform.apply(pts))
    nu_p, h_p = f.spec.taper_args()
    out = _accumulate(f.spec.code, f.spec.param, nu_p, h_p, pts, f.centers, f.alpha)
    return float(out[0]) if single else out


def eval_grid(f: ImplicitField, grid: GridSpec) -> ScalarGrid:
    """Evaluate on every lattice node, one z-slab at a time."""
    if f.dim != 3:
        raise InvalidInputError("grid evaluation needs a 3-D field")
    if grid.size * 8 > GRID_MEMORY_CAP:
        raise CapacityError(
            f"grid of {grid.resolution} nodes exceeds the {GRID_MEMORY_CAP} byte cap"
        )
    nx, ny, nz = grid.resolution
    values = np.empty(grid.size)
    xs, ys, zs = grid.axis(0), grid.axis(1), grid.axis(2)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    slab = np.empty((nx * ny, 3))
    slab[:, 0] = xx.ravel()
    slab[:, 1] = yy.ravel()
    nu_p, h_p = f.spec.taper_args()
    for k in range(nz):
        slab[:, 2] = zs[k]
        values[k * nx * ny : (k + 1) * nx * ny] = _accumulate(
            f.spec.code, f.spec.param, nu_p, h_p, slab, f.centers, f.alpha
        )
    return ScalarGrid(grid.resolution, grid.origin, grid.spacing, values)


def gradient(f: ImplicitField, x, mode: str = "analytic", step: float = DEFAULT_DIFF_STEP):
    """Gradient in normalized coordinates.

    ``mode`` is ``"analytic"``, ``"central"`` (six-point central differences
    with ``step``) or ``"auto"`` (analytic when the kernel allows it).
    """
    pts, single = _check_points(x, f.dim)
    if mode == "auto":
        mode = "analytic" if f.spec.differentiable else "central"
    if mode == "analytic":
        if not f.spec.differentiable:
            raise UnsupportedGradientError(
                f"kernel {f.spec.key} has no analytic gradient; use mode='central'"
            )
        nu_p, h_p = f.spec.taper_args()
        g = _accumulate_grad(f.spec.code, f.spec.param, nu_p, h_p, pts, f.centers, f.alpha)
    elif mode == "central":
        g = np.empty_like(pts)
        for k in range(pts.shape[1]):
            shift = np.zeros(pts.shape[1])
            shift[k] = step
            fp = evaluate(f, pts + shift)
            fm = evaluate(f, pts - shift)
            g[:, k] = (fp - fm) / (2.0 * step)
    else:
        raise InvalidInputError(f"unknown gradient mode {mode!r}")
    return g[0] if single else g


# exp() for nonpositive arguments in a form LLVM can vectorise: Cody-Waite
# reduction, degree-13 Taylor polynomial, exponent assembled from bits in a
# second pass. Relative error below 1e-15; arguments under -708 saturate.
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e00


@numba.njit(cache=True, error_model="numpy", inline="always")
def _exp_reduced(x):
    x = max(x, -708.0)
    k = math.floor(x * _INV_LN2 + 0.5)
    r = (x - k * _LN2_HI) - k * _LN2_LO
    p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6 + r * (1.0 / 24 + r * (1.0 / 120 + r * (
        1.0 / 720 + r * (1.0 / 5040 + r * (1.0 / 40320 + r * (1.0 / 362880 + r * (
            1.0 / 3628800 + r * (1.0 / 39916800 + r * (1.0 / 479001600))))))))))))
    return p, k


# Taylor coefficients of asin: (2k)! / (4^k (k!)^2 (2k+1))
(_A0, _A1, _A2, _A3, _A4, _A5, _A6, _A7, _A8, _A9, _A10, _A11, _A12, _A13) = tuple(
    math.factorial(2 * k) / (4**k * math.factorial(k) ** 2 * (2 * k + 1)) for k in range(14)
)


@numba.njit(cache=True, error_model="numpy", inline="always")
def _acos_sin(c):
    """``(acos(c), sin(acos(c)))`` without libm calls, for ``c`` in [-1, 1].

    Three half-angle reductions bring the argument of asin below sin(pi/16),
    where a 14-term Taylor series is exact to double precision.
    """
    s = math.sqrt(max(0.0, 0.5 * (1.0 - c)))
    co = math.sqrt(max(0.0, 0.5 * (1.0 + c)))
    t = s / math.sqrt(2.0 * (1.0 + co))
    t = t / math.sqrt(2.0 * (1.0 + math.sqrt(1.0 - t * t)))
    t = t / math.sqrt(2.0 * (1.0 + math.sqrt(1.0 - t * t)))
    z = t * t
    p = _A13 * z + _A12
    p = p * z + _A11
    p = p * z + _A10
    p = p * z + _A9
    p = p * z + _A8
    p = p * z + _A7
    p = p * z + _A6
    p = p * z + _A5
    p = p * z + _A4
    p = p * z + _A3
    p = p * z + _A2
    p = p * z + _A1
    p = p * z + _A0
    return 16.0 * t * p, 2.0 * s * co


@numba.njit(cache=True, error_model="numpy")
def _row_sum(code, h, nu_p, h_p, x0, x1, x2, C0, C1, C2, cnorm, alpha, buf, kbuf, scale):
    """``sum_j alpha_j k(x, c_j)`` for one 3-D query point."""
    m = C0.shape[0]
    if code == 4:
        b2 = h * h  # bias coordinate; cnorm already includes it
        pn = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2 + b2)
        for j in range(m):
            nn = pn * cnorm[j]
            safe = nn if nn > 0.0 else 1.0
            c = (x0 * C0[j] + x1 * C1[j] + x2 * C2[j] + b2) / safe
            c = min(1.0, max(-1.0, c))
            theta, sin_theta = _acos_sin(c)
            v = nn / math.pi * (sin_theta + (math.pi - theta) * c)
            buf[j] = alpha[j] * v if nn > 0.0 else 0.0
            scale[j] = 1.0
        _apply_taper(h_p, nu_p, x0, x1, x2, C0, C1, C2, buf)
        return _lane_sum(buf, scale)
    if code == 1:
        s = SQRT3 / h
    elif code == 2:
        s = SQRT5 / h
    else:
        s = 1.0 / h
    for j in range(m):
        d0 = x0 - C0[j]
        d1 = x1 - C1[j]
        d2 = x2 - C2[j]
        a = s * math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if code == 0:
            poly = 1.0
            arg = -a
        elif code == 1:
            poly = 1.0 + a
            arg = -a
        elif code == 2:
            poly = 1.0 + a + a * a / 3.0
            arg = -a
        else:
            poly = 1.0
            arg = -0.5 * a * a
        p, k = _exp_reduced(arg)
        buf[j] = alpha[j] * poly * p
        kbuf[j] = k
    _apply_taper(h_p, nu_p, x0, x1, x2, C0, C1, C2, buf)
    bits = scale.view(np.int64)
    for j in range(m):
        bits[j] = (np.int64(kbuf[j]) + 1023) << 52
    return _lane_sum(buf, scale)


@numba.njit(cache=True, error_model="numpy", inline="always")
def _apply_taper(h_p, nu_p, x0, x1, x2, C0, C1, C2, buf):
    if h_p > 0.0:
        for j in range(C0.shape[0]):
            d0 = x0 - C0[j]
            d1 = x1 - C1[j]
            d2 = x2 - C2[j]
            base = 1.0 - math.sqrt(d0 * d0 + d1 * d1 + d2 * d2) / h_p
            buf[j] = buf[j] * base**nu_p if base > 0.0 else 0.0


@numba.njit(cache=True, error_model="numpy", inline="always")
def _lane_sum(buf, scale):
    """Eight interleaved partial sums, combined in lane order."""
    m = buf.shape[0]
    lanes = np.zeros(8)
    m8 = m - m % 8
    for j in range(0, m8, 8):
        for q in range(8):
            lanes[q] += buf[j + q] * scale[j + q]
    acc = 0.0
    for q in range(8):
        acc += lanes[q]
    for j in range(m8, m):
        acc += buf[j] * scale[j]
    return acc


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _accumulate3(code, h, nu_p, h_p, P, C, alpha):
    n, m = P.shape[0], C.shape[0]
    out = np.zeros(n)
    C0 = np.ascontiguousarray(C[:, 0])
    C1 = np.ascontiguousarray(C[:, 1])
    C2 = np.ascontiguousarray(C[:, 2])
    b2 = h * h if code == 4 else 0.0
    cnorm = np.sqrt(C0 * C0 + C1 * C1 + C2 * C2 + b2)
    nblocks = (n + NODE_BLOCK - 1) // NODE_BLOCK
    for b in numba.prange(nblocks):
        buf = np.empty(m)
        kbuf = np.empty(m)
        scale = np.empty(m)
        for i in range(b * NODE_BLOCK, min((b + 1) * NODE_BLOCK, n)):
            out[i] = _row_sum(code, h, nu_p, h_p, P[i, 0], P[i, 1], P[i, 2],
                              C0, C1, C2, cnorm, alpha, buf, kbuf, scale)
    return out


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _accumulate_nd(code, h, nu_p, h_p, P, C, alpha):
    n, m, d = P.shape[0], C.shape[0], P.shape[1]
    out = np.zeros(n)
    b2 = h * h if code == 4 else 0.0
    cnorm = np.empty(m)
    for j in range(m):
        s = b2
        for k in range(d):
            s += C[j, k] * C[j, k]
        cnorm[j] = math.sqrt(s)
    for i in numba.prange(n):
        pn = b2
        for k in range(d):
            pn += P[i, k] * P[i, k]
        pn = math.sqrt(pn)
        acc = 0.0
        for j in range(m):
            r2 = 0.0
            dot = 0.0
            for k in range(d):
                diff = P[i, k] - C[j, k]
                r2 += diff * diff
                dot += P[i, k] * C[j, k]
            acc += alpha[j] * pair_value(code, h, nu_p, h_p, math.sqrt(r2), pn, cnorm[j], dot + b2)
        out[i] = acc
    return out


def _accumulate(code, h, nu_p, h_p, P, C, alpha):
    if P.shape[1] == 3:
        return _accumulate3(code, h, nu_p, h_p, P, C, alpha)
    return _accumulate_nd(code, h, nu_p, h_p, P, C, alpha)


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _accumulate_grad(code, h, nu_p, h_p, P, C, alpha):
    n, m, d = P.shape[0], C.shape[0], P.shape[1]
    out = np.zeros((n, d))
    for i in numba.prange(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                diff = P[i, k] - C[j, k]
                r2 += diff * diff
            s = alpha[j] * pair_grad_scale(code, h, nu_p, h_p, math.sqrt(r2))
            for k in range(d):
                out[i, k] += s * (P[i, k] - C[j, k])
    return out

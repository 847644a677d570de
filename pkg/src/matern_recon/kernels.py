"""Kernel functions: Matérn (half-integer), Gaussian, first-order arc-cosine.

Stationary kernels are evaluated on the distance ``tau = ||x - y||``. The
arc-cosine kernel depends on the pair ``(x, y)`` itself and is therefore
neither translation invariant nor expressible through ``tau``.

The public functions are vectorised numpy code. Gram matrices and anything
else that loops over many pairs goes through the numba kernels at the bottom
of this module, which the field evaluator reuses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from .errors import InvalidInputError, UnsupportedGradientError, UnsupportedKernelError

SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)

# Integer codes consumed by the compiled kernels.
CODE_MATERN12 = 0
CODE_MATERN32 = 1
CODE_MATERN52 = 2
CODE_GAUSSIAN = 3
CODE_ARCCOS = 4

_MATERN_CODES = {0.5: CODE_MATERN12, 1.5: CODE_MATERN32, 2.5: CODE_MATERN52}


class Family(str, Enum):
    MATERN = "matern"
    GAUSSIAN = "gaussian"
    ARC_COSINE = "arccos"


@dataclass(frozen=True)
class Taper:
    """Compactly supported factor ``max(0, 1 - tau/h_prime) ** nu_prime``."""

    nu_prime: float = 2.0
    h_prime: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.h_prime) and self.h_prime > 0):
            raise InvalidInputError(f"taper cutoff h_prime must be > 0, got {self.h_prime}")
        if not (math.isfinite(self.nu_prime) and self.nu_prime >= 1):
            raise InvalidInputError(f"taper exponent nu_prime must be >= 1, got {self.nu_prime}")


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    nu: float = 0.5
    h: float = 1.0
    taper: Taper | None = None
    bias: float = 0.0  # arc-cosine only: inputs are augmented to (x, bias)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (math.isfinite(self.bias) and self.bias >= 0):
            raise InvalidInputError(f"arc-cosine bias must be finite and >= 0, got {self.bias}")
        if self.bias and self.family is not Family.ARC_COSINE:
            raise InvalidInputError("bias applies to the arc-cosine kernel only")
        if self.family in (Family.MATERN, Family.GAUSSIAN):
            if not (math.isfinite(self.h) and self.h > 0):
                raise InvalidInputError(f"bandwidth h must be > 0, got {self.h}")
        if self.family is Family.MATERN and float(self.nu) not in _MATERN_CODES:
            raise InvalidInputError(f"Matérn smoothness must be one of 1/2, 3/2, 5/2, got {self.nu}")
        if self.family is Family.GAUSSIAN:
            object.__setattr__(self, "nu", math.inf)

    @classmethod
    def matern(cls, nu: float, h: float = 1.0, taper: Taper | None = None) -> KernelSpec:
        return cls(Family.MATERN, float(nu), float(h), taper)

    @classmethod
    def gaussian(cls, h: float = 1.0, taper: Taper | None = None) -> KernelSpec:
        return cls(Family.GAUSSIAN, math.inf, float(h), taper)

    @classmethod
    def arc_cosine(cls, bias: float = 0.0) -> KernelSpec:
        """First-order arc-cosine kernel on ``(x, bias)``; ``bias=0`` is the plain kernel.

        Without a bias every field is positively homogeneous of degree one,
        so its zero set is a cone through the origin and cannot enclose it.
        """
        return cls(Family.ARC_COSINE, 0.0, 1.0, None, float(bias))

    @classmethod
    def from_key(cls, key: str, h: float = 1.0, taper_h: float | None = None) -> KernelSpec:
        """Build a spec from a CLI key such as ``matern32`` or ``arccos``.

        ``arccos`` ignores ``h`` and uses the biased kernel with ``ARC_COSINE_BIAS``.
        """
        try:
            family, nu = KERNEL_KEYS[key]
        except KeyError:
            raise InvalidInputError(
                f"unknown kernel {key!r}; expected one of {sorted(KERNEL_KEYS)}"
            ) from None
        if family is Family.ARC_COSINE:
            spec = cls.arc_cosine(ARC_COSINE_BIAS)
        else:
            spec = cls(family, nu, float(h))
        if taper_h is not None:
            spec = spec.with_taper(taper_h)
        return spec

    def with_taper(self, h_prime: float | None = None, nu_prime: float = 2.0) -> KernelSpec:
        """Return a copy multiplied by the taper; the cutoff defaults to ``4 h``."""
        if h_prime is None:
            h_prime = 4.0 * self.h
        return KernelSpec(self.family, self.nu, self.h, Taper(float(nu_prime), float(h_prime)), self.bias)

    @property
    def code(self) -> int:
        if self.family is Family.MATERN:
            return _MATERN_CODES[float(self.nu)]
        if self.family is Family.GAUSSIAN:
            return CODE_GAUSSIAN
        return CODE_ARCCOS

    @property
    def param(self) -> float:
        """Scalar handed to the compiled kernels: the bias for arc-cosine, else ``h``."""
        return self.bias if self.family is Family.ARC_COSINE else self.h

    @property
    def stationary(self) -> bool:
        return self.family is not Family.ARC_COSINE

    @property
    def differentiable(self) -> bool:
        return self.code in (CODE_MATERN32, CODE_MATERN52, CODE_GAUSSIAN)

    @property
    def key(self) -> str:
        for k, (fam, nu) in KERNEL_KEYS.items():
            if fam is self.family and (fam is not Family.MATERN or nu == self.nu):
                return k
        raise AssertionError("unreachable")

    def taper_args(self) -> tuple[float, float]:
        """``(nu_prime, h_prime)`` for the compiled kernels; ``h_prime = 0`` disables."""
        if self.taper is None:
            return 0.0, 0.0
        return float(self.taper.nu_prime), float(self.taper.h_prime)


KERNEL_KEYS: dict[str, tuple[Family, float]] = {
    "matern12": (Family.MATERN, 0.5),
    "matern32": (Family.MATERN, 1.5),
    "matern52": (Family.MATERN, 2.5),
    "gaussian": (Family.GAUSSIAN, math.inf),
    "arccos": (Family.ARC_COSINE, 0.0),
}
ARC_COSINE_BIAS = 1.0


def _as_tau(tau) -> np.ndarray:
    t = np.asarray(tau, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("tau must be finite")
    if np.any(t < 0):
        raise InvalidInputError("tau must be nonnegative")
    return t


def _out(values: np.ndarray):
    return float(values) if values.ndim == 0 else values


def eval_matern(spec: KernelSpec, tau):
    """Half-integer Matérn profile at distance ``tau`` (scalar or array)."""
    if spec.family is not Family.MATERN:
        raise InvalidInputError(f"eval_matern needs a Matérn spec, got {spec.family.value}")
    t = _as_tau(tau)
    h = spec.h
    if spec.nu == 0.5:
        val = np.exp(-t / h)
    elif spec.nu == 1.5:
        a = SQRT3 * t / h
        val = np.exp(-a) * (1.0 + a)
    else:
        a = SQRT5 * t / h
        val = np.exp(-a) * (1.0 + a + a * a / 3.0)
    return _out(val)


def eval_gaussian(h: float, tau):
    if not h > 0:
        raise InvalidInputError(f"bandwidth h must be > 0, got {h}")
    t = _as_tau(tau)
    return _out(np.exp(-(t * t) / (2.0 * h * h)))


def eval_arc_cosine(x, y, bias: float = 0.0):
    """First-order arc-cosine kernel; zero when either argument is the origin.

    ``x`` and ``y`` broadcast over leading axes, the last axis holds coordinates.
    A nonzero ``bias`` evaluates the kernel on ``(x, bias)`` and ``(y, bias)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("arc-cosine arguments must be finite")
    if bias:
        x = np.concatenate([x, np.full(x.shape[:-1] + (1,), float(bias))], axis=-1)
        y = np.concatenate([y, np.full(y.shape[:-1] + (1,), float(bias))], axis=-1)
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    nn = nx * ny
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.clip(np.sum(x * y, axis=-1) / nn, -1.0, 1.0)
    theta = np.arccos(cos)
    val = nn / np.pi * (np.sin(theta) + (np.pi - theta) * cos)
    val = np.where(nn > 0, val, 0.0)
    return _out(np.asarray(val))


def eval_taper(nu_prime: float, h_prime: float, tau):
    Taper(nu_prime, h_prime)  # validates
    t = _as_tau(tau)
    base = np.maximum(0.0, 1.0 - t / h_prime)
    return _out(base**nu_prime)


def _radial_profile(spec: KernelSpec, tau):
    if spec.family is Family.GAUSSIAN:
        return eval_gaussian(spec.h, tau)
    return eval_matern(spec, tau)


def eval_kernel(spec: KernelSpec, x, y):
    """``k(x, y)`` for any spec, including the optional taper factor."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1:] != y.shape[-1:]:
        raise InvalidInputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if spec.family is Family.ARC_COSINE:
        val = np.asarray(eval_arc_cosine(x, y, spec.bias))
        tau = np.linalg.norm(x - y, axis=-1)
    else:
        tau = np.linalg.norm(x - y, axis=-1)
        val = np.asarray(_radial_profile(spec, tau))
    if spec.taper is not None:
        val = val * eval_taper(spec.taper.nu_prime, spec.taper.h_prime, tau)
    return _out(np.asarray(val))


def radial_derivative_over_tau(spec: KernelSpec, tau):
    """``Phi'(tau) / tau``, which stays finite at ``tau = 0`` for smooth kernels."""
    if not spec.differentiable:
        raise UnsupportedGradientError(
            f"{spec.key} is not differentiable at the origin; use finite differences"
        )
    t = _as_tau(tau)
    h = spec.h
    if spec.code == CODE_MATERN32:
        return -3.0 / (h * h) * np.exp(-SQRT3 * t / h)
    if spec.code == CODE_MATERN52:
        a = SQRT5 * t / h
        return -5.0 / (3.0 * h * h) * (1.0 + a) * np.exp(-a)
    return -1.0 / (h * h) * np.exp(-(t * t) / (2.0 * h * h))


def kernel_gradient(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` with respect to ``x``.

    Zero at ``x == y``. With a taper the cone tip at ``x == y`` contributes
    nothing (the taper's one-sided derivative is dropped there).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1:] != y.shape[-1:]:
        raise InvalidInputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    tau = np.linalg.norm(diff, axis=-1)
    g = np.asarray(radial_derivative_over_tau(spec, tau))
    if spec.taper is None:
        return g[..., None] * diff
    nu_p, h_p = spec.taper.nu_prime, spec.taper.h_prime
    phi = np.asarray(_radial_profile(spec, tau))
    base = np.maximum(0.0, 1.0 - tau / h_p)
    taper = base**nu_p
    with np.errstate(divide="ignore", invalid="ignore"):
        dtaper = np.where(
            (tau > 0) & (base > 0), -nu_p / h_p * base ** (nu_p - 1.0) / tau, 0.0
        )
    return (g * taper + phi * dtaper)[..., None] * diff


@dataclass(frozen=True)
class SpectralParams:
    d: int
    nu: float
    h: float
    c_dnu: float = field(default=float("nan"))

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInputError("dimension must be a positive integer")
        if not (self.nu > 0 and self.h > 0):
            raise InvalidInputError("nu and h must be positive")
        expected = matern_spectral_constant(self.d, self.nu) if math.isfinite(self.nu) else math.nan
        if math.isnan(self.c_dnu):
            object.__setattr__(self, "c_dnu", expected)
        elif math.isfinite(self.nu) and not math.isclose(self.c_dnu, expected, rel_tol=1e-12):
            raise InvalidInputError(f"c_dnu={self.c_dnu} inconsistent with d, nu (expected {expected})")


def matern_spectral_constant(d: int, nu: float) -> float:
    """Normalising constant of the Matérn spectral density."""
    log_c = (
        d * math.log(2.0)
        + 0.5 * d * math.log(math.pi)
        + math.lgamma(nu + 0.5 * d)
        + nu * math.log(2.0 * nu)
        - math.lgamma(nu)
    )
    return math.exp(log_c)


def _omega_norm(params: SpectralParams, omega) -> np.ndarray:
    w = np.asarray(omega, dtype=np.float64)
    if params.d == 1 and (w.ndim == 0 or w.shape[-1] != 1):
        return np.abs(w)
    if w.shape[-1] != params.d:
        raise InvalidInputError(f"omega must have {params.d} components, got shape {w.shape}")
    return np.linalg.norm(w, axis=-1)


def spectral_density(params: SpectralParams, omega):
    """Matérn spectral density; Fourier pair with ``exp(2 pi i omega.tau)``.

    For ``d == 1`` a plain scalar or 1-D array of frequencies is accepted.
    """
    if not math.isfinite(params.nu):
        raise UnsupportedKernelError(
            "infinite smoothness has no Matérn spectral density; use gaussian_spectral_density"
        )
    r = _omega_norm(params, omega)
    nu, h, d = params.nu, params.h, params.d
    val = h ** (-2.0 * nu) * params.c_dnu * (2.0 * nu / (h * h) + (2.0 * math.pi * r) ** 2) ** (
        -(nu + 0.5 * d)
    )
    return _out(np.asarray(val))


def gaussian_spectral_density(d: int, h: float, omega):
    params = SpectralParams(d, math.inf, h, math.nan)
    r = _omega_norm(params, omega)
    val = np.exp(-2.0 * math.pi**2 * h * h * r * r) * (2.0 * math.pi) ** (0.5 * d) * h**d
    return _out(np.asarray(val))


def gram_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Pairwise kernel matrix; exactly symmetric when ``Y`` is omitted."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("gram_matrix: non-finite coordinates")
    nu_p, h_p = spec.taper_args()
    if Y is None:
        return _gram_sym(spec.code, spec.param, nu_p, h_p, X)
    Y = np.ascontiguousarray(np.atleast_2d(np.asarray(Y, dtype=np.float64)))
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("gram_matrix: non-finite coordinates")
    return _gram_cross(spec.code, spec.param, nu_p, h_p, X, Y)


# --------------------------------------------------------------------------
# compiled kernels

@numba.njit(cache=True, error_model="numpy", inline="always")
def pair_value(code, h, nu_p, h_p, r, nx, ny, dot):
    """Kernel value from distance, norms and inner product of the pair.

    For arc-cosine (code 4) ``h`` is the bias; norms and ``dot`` must already include it.
    """
    if code == 0:
        v = math.exp(-r / h)
    elif code == 1:
        a = SQRT3 * r / h
        v = math.exp(-a) * (1.0 + a)
    elif code == 2:
        a = SQRT5 * r / h
        v = math.exp(-a) * (1.0 + a + a * a / 3.0)
    elif code == 3:
        q = r / h
        v = math.exp(-0.5 * q * q)
    else:
        nn = nx * ny
        if nn > 0.0:
            c = dot / nn
            if c > 1.0:
                c = 1.0
            elif c < -1.0:
                c = -1.0
            theta = math.acos(c)
            v = nn / math.pi * (math.sin(theta) + (math.pi - theta) * c)
        else:
            v = 0.0
    if h_p > 0.0:
        if r >= h_p:
            return 0.0
        v *= (1.0 - r / h_p) ** nu_p
    return v


@numba.njit(cache=True, error_model="numpy", inline="always")
def pair_grad_scale(code, h, nu_p, h_p, r):
    """Scalar ``s`` with ``grad_x k(x, y) = s * (x - y)`` (stationary, smooth kernels)."""
    if code == 1:
        g = -3.0 / (h * h) * math.exp(-SQRT3 * r / h)
        phi = 0.0
        if h_p > 0.0:
            a = SQRT3 * r / h
            phi = math.exp(-a) * (1.0 + a)
    elif code == 2:
        a = SQRT5 * r / h
        e = math.exp(-a)
        g = -5.0 / (3.0 * h * h) * (1.0 + a) * e
        phi = e * (1.0 + a + a * a / 3.0)
    else:
        q = r / h
        phi = math.exp(-0.5 * q * q)
        g = -phi / (h * h)
    if h_p > 0.0:
        if r >= h_p:
            return 0.0
        base = 1.0 - r / h_p
        t = base**nu_p
        dt = 0.0
        if r > 0.0:
            dt = -nu_p / h_p * base ** (nu_p - 1.0) / r
        return g * t + phi * dt
    return g


@numba.njit(cache=True, error_model="numpy")
def _row_value(code, h, nu_p, h_p, X, i, Y, j, nx, ny):
    d = X.shape[1]
    r2 = 0.0
    dot = 0.0
    for k in range(d):
        diff = X[i, k] - Y[j, k]
        r2 += diff * diff
        dot += X[i, k] * Y[j, k]
    if code == 4:
        dot += h * h  # bias coordinate
    return pair_value(code, h, nu_p, h_p, math.sqrt(r2), nx, ny, dot)


@numba.njit(cache=True, error_model="numpy")
def _norms(X, b2):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        s = b2
        for k in range(X.shape[1]):
            s += X[i, k] * X[i, k]
        out[i] = math.sqrt(s)
    return out


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _gram_sym(code, h, nu_p, h_p, X):
    n = X.shape[0]
    K = np.empty((n, n))
    norms = _norms(X, h * h if code == 4 else 0.0)
    for i in numba.prange(n):
        for j in range(i, n):
            K[i, j] = _row_value(code, h, nu_p, h_p, X, i, X, j, norms[i], norms[j])
    for i in numba.prange(n):
        for j in range(i):
            K[i, j] = K[j, i]
    return K


@numba.njit(cache=True, error_model="numpy", parallel=True)
def _gram_cross(code, h, nu_p, h_p, X, Y):
    n, m = X.shape[0], Y.shape[0]
    K = np.empty((n, m))
    b2 = h * h if code == 4 else 0.0
    nxs = _norms(X, b2)
    nys = _norms(Y, b2)
    for i in numba.prange(n):
        for j in range(m):
            K[i, j] = _row_value(code, h, nu_p, h_p, X, i, Y, j, nxs[i], nys[j])
    return K

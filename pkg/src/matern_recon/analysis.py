"""Numerical checks of Matérn kernel theory.

Eigenvalue decay of Gram matrices, random Fourier feature estimates of the
kernel, RKHS norms of solved fields, and the bandwidth bound
``||f||^2 <= h^-d C1 + h^(2 nu) C2`` with its minimizer ``h*``.

Fourier conventions: ``F[f](w) = int f(x) exp(-2 pi i w.x) dx`` and the
spectral density ``p`` satisfies ``k(tau) = int p(w) cos(2 pi w.tau) dw``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import InvalidInputError, ReconError, UnsupportedKernelError
from .field import ImplicitField
from .kernels import (
    Family,
    KernelSpec,
    SpectralParams,
    gram_matrix,
    matern_spectral_constant,
    spectral_density,
)

H_SEARCH_RANGE = (1e-3, 1e3)
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
WINDOW_TRIGGER = 1e-3  # boundary magnitude relative to peak that triggers a Hann window


class NumericError(ReconError):
    pass


def spectrum_table(params: SpectralParams, omega_max: float, steps: int) -> list[tuple[float, float]]:
    """``(||w||, p(w))`` rows along a radial axis starting at 0."""
    if steps < 2:
        raise InvalidInputError(f"steps must be >= 2, got {steps}")
    if not omega_max > 0:
        raise InvalidInputError("omega_max must be positive")
    r = np.linspace(0.0, omega_max, steps)
    w = np.zeros((steps, params.d))
    w[:, 0] = r
    p = np.atleast_1d(spectral_density(params, w))
    return [(float(a), float(b)) for a, b in zip(r, p)]


# ---------------------------------------------------------------- eigenvalues


@dataclass(frozen=True)
class EdrFit:
    """Least-squares fit of ``log lambda_s = slope log s + intercept``.

    ``eigenvalues_used`` is the half-open range of 1-based indices ``s``.
    """

    slope: float
    intercept: float
    r_squared: float
    eigenvalues_used: tuple[int, int]
    eigenvalues: np.ndarray = field(repr=False, compare=False, default=None)


def default_tail_window(n: int) -> tuple[int, int]:
    return n // 10, n // 2


def gram_eigenvalues(spec: KernelSpec, n: int, d: int, seed: int = 0) -> np.ndarray:
    """Eigenvalues of ``K / n`` on ``n`` uniform points in ``[0,1]^d``, descending."""
    if n < 2 or d < 1:
        raise InvalidInputError("need n >= 2 and d >= 1")
    X = np.random.default_rng(seed).random((n, d))
    K = gram_matrix(spec, X) / n
    try:
        ev = np.linalg.eigvalsh(K)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    return ev[::-1]


def fit_decay(eigenvalues: np.ndarray, window: tuple[int, int]) -> EdrFit:
    start, stop = window
    if not 1 <= start < stop <= len(eigenvalues) + 1 or stop - start < 2:
        raise InvalidInputError(f"bad eigenvalue window {window} for {len(eigenvalues)} eigenvalues")
    s = np.arange(start, stop)
    lam = eigenvalues[start - 1 : stop - 1]
    if np.any(lam <= 0):
        raise NumericError(
            f"nonpositive eigenvalue in window {window}; the spectrum is below roundoff there"
        )
    x, y = np.log(s), np.log(lam)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return EdrFit(float(slope), float(intercept), min(1.0, max(0.0, r2)), (start, stop), eigenvalues)


def empirical_edr(
    spec: KernelSpec, n: int, d: int, seed: int = 0, tail_window: tuple[int, int] | None = None
) -> EdrFit:
    """Fitted log-log decay slope of the normalized Gram spectrum."""
    if n < 256:
        raise InvalidInputError(f"n must be >= 256, got {n}")
    if d not in (1, 2, 3):
        raise InvalidInputError(f"d must be 1, 2 or 3, got {d}")
    ev = gram_eigenvalues(spec, n, d, seed)
    return fit_decay(ev, tail_window or default_tail_window(n))


def theoretical_edr_slope(spec: KernelSpec, d: int) -> float:
    if spec.family is Family.ARC_COSINE:
        return -(1.0 + d) / d
    if spec.family is Family.MATERN:
        return -(1.0 + 2.0 * spec.nu / d)
    raise UnsupportedKernelError("the Gaussian spectrum decays faster than any polynomial")


# ----------------------------------------------------------- random features


def sample_frequencies(d: int, nu: float, h: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` frequencies from the Matérn spectral density.

    A standard multivariate Student-t vector with ``2 nu`` degrees of freedom
    scaled by ``1 / (2 pi h)`` has exactly this density.
    """
    z = rng.standard_normal((n, d))
    chi2 = rng.chisquare(2.0 * nu, size=n)
    t = z * np.sqrt(2.0 * nu / chi2)[:, None]
    return t / (2.0 * math.pi * h)


def rff_kernel_estimate(spec: KernelSpec, x, y, num_features: int, seed: int = 0) -> float:
    """Monte Carlo estimate ``mean 2 cos(2 pi w.x + b) cos(2 pi w.y + b)``."""
    if spec.family is not Family.MATERN or not math.isfinite(spec.nu):
        raise UnsupportedKernelError(
            f"random features need a finite-smoothness Matérn kernel, got {spec.key}; "
            "use gaussian_rff_estimate for the Gaussian kernel"
        )
    if spec.taper is not None:
        raise UnsupportedKernelError("tapered kernels have no random feature expansion here")
    if num_features < 1:
        raise InvalidInputError("num_features must be >= 1")
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    rng = np.random.default_rng(seed)
    w = sample_frequencies(len(x), spec.nu, spec.h, num_features, rng)
    b = rng.uniform(0.0, 2.0 * math.pi, size=num_features)
    return _feature_mean(w, b, x, y)


def gaussian_rff_estimate(h: float, x, y, num_features: int, seed: int = 0) -> float:
    """Random feature estimate of ``exp(-tau^2 / 2h^2)`` with normal frequencies."""
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((num_features, len(x))) / (2.0 * math.pi * h)
    b = rng.uniform(0.0, 2.0 * math.pi, size=num_features)
    return _feature_mean(w, b, x, y)


def _feature_mean(w, b, x, y) -> float:
    two_pi = 2.0 * math.pi
    return float(np.mean(2.0 * np.cos(two_pi * (w @ x) + b) * np.cos(two_pi * (w @ y) + b)))


def frequency_quantile_check(
    nu: float, h: float = 1.0, levels=QUANTILE_LEVELS, n: int = 200_000, seed: int = 0
) -> list[tuple[float, float, float]]:
    """Compare sampled 1-D frequency quantiles with quantiles of the integrated density.

    Returns ``(level, integrated quantile, sampled quantile)`` rows.
    """
    params = SpectralParams(1, nu, h)

    def cdf(q):
        tail, _ = scipy.integrate.quad(lambda w: float(spectral_density(params, w)), -np.inf, q)
        return tail

    sampled = sample_frequencies(1, nu, h, n, np.random.default_rng(seed))[:, 0]
    scale = 1.0 / (2.0 * math.pi * h)
    rows = []
    for level in levels:
        hi = scale
        while not cdf(-hi) < level < cdf(hi):
            hi *= 2.0
        lo = -hi
        q = scipy.optimize.brentq(lambda t: cdf(t) - level, lo, hi, xtol=1e-12 * scale)
        rows.append((float(level), float(q), float(np.quantile(sampled, level))))
    return rows


# ------------------------------------------------------------------ RKHS norm


def rkhs_norm(f: ImplicitField) -> float:
    """``alpha^T K alpha`` with ``K`` rebuilt from the field's centers."""
    K = gram_matrix(f.spec, f.centers)
    return float(f.alpha @ (K @ f.alpha))


# ------------------------------------------------------------ bandwidth bound


@dataclass(frozen=True)
class BoundReport:
    """Bound and spectral norm of one sampled function across bandwidths.

    ``bound_holds`` compares the two with a relative slack of ``rtol`` for
    summation roundoff; the bound is exact when ``nu + d/2 == 1``.
    """

    c1: float
    c2: float
    h_star_closed: float
    h_star_numeric: float
    bound_values: list[tuple[float, float]]
    norm_values: list[tuple[float, float]]
    nu: float = 0.5
    d: int = 1
    windowed: bool = False

    def bound_holds(self, rtol: float = 1e-12) -> bool:
        return all(b >= n * (1.0 - rtol) for (_, b), (_, n) in zip(self.bound_values, self.norm_values))

    def rows(self) -> list[tuple[float, float, float]]:
        return [(h, b, n) for (h, b), (_, n) in zip(self.bound_values, self.norm_values)]


@dataclass(frozen=True)
class _Spectrum:
    power: np.ndarray  # |F[f]|^2 on the frequency lattice
    radius: np.ndarray  # ||w|| on the same lattice
    cell: float  # volume of one lattice cell
    d: int


def _spectrum(values: np.ndarray, spacing: float, pad_factor: int) -> _Spectrum:
    d = values.ndim
    n = values.shape[0] * pad_factor
    F = np.fft.fftn(values, s=(n,) * d, axes=tuple(range(d))) * spacing**d
    freqs = np.fft.fftfreq(n, spacing)
    grids = np.meshgrid(*([freqs] * d), indexing="ij")
    radius = np.sqrt(sum(g * g for g in grids))
    return _Spectrum(np.abs(F) ** 2, radius, (1.0 / (n * spacing)) ** d, d)


def _hann(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for axis, n in enumerate(values.shape):
        w = np.hanning(n).reshape([-1 if k == axis else 1 for k in range(values.ndim)])
        out = out * w
    return out


def spectral_norm(spec: _Spectrum, nu: float, h: float) -> float:
    """Squared Matérn RKHS norm by a Riemann sum over the frequency lattice.

    Carries the ``((2 pi)^(d/2) C)^-1`` prefactor shared with the bound
    constants, so it equals ``(2 pi)^(-d/2)`` times ``int |F[f]|^2 / p``; for
    ``f = k(., c)`` it returns ``(2 pi)^(-d/2)`` rather than ``k(c, c)``.
    """
    d = spec.d
    c = matern_spectral_constant(d, nu)
    weight = (2.0 * nu / h**2 + (2.0 * math.pi * spec.radius) ** 2) ** (nu + 0.5 * d)
    return h ** (2 * nu) / ((2 * math.pi) ** (0.5 * d) * c) * float(np.sum(weight * spec.power)) * spec.cell


def bound_constants(spec: _Spectrum, nu: float) -> tuple[float, float]:
    d = spec.d
    c = (2.0 * math.pi) ** (0.5 * d) * matern_spectral_constant(d, nu)
    c_prime = float(np.sum(spec.power)) * spec.cell
    c_prime_nu = float(np.sum((2.0 * math.pi * spec.radius) ** (2 * nu + d) * spec.power)) * spec.cell
    return (2.0 * nu) ** (nu + 0.5 * d) * c_prime / c, c_prime_nu / c


def norm_bound(h, c1: float, c2: float, nu: float, d: int):
    h = np.asarray(h, dtype=np.float64)
    return h ** (-d) * c1 + h ** (2 * nu) * c2


def h_star_closed_form(c1: float, c2: float, nu: float, d: int) -> float:
    return (d / (2.0 * nu) * c1 / c2) ** (1.0 / (2.0 * nu + d))


def h_star_golden(c1: float, c2: float, nu: float, d: int, search=H_SEARCH_RANGE) -> float:
    """Minimize the bound over ``log h`` by golden-section search."""
    u = np.linspace(math.log(search[0]), math.log(search[1]), 121)
    vals = np.log(norm_bound(np.exp(u), c1, c2, nu, d))
    i = int(np.argmin(vals))
    if i in (0, len(u) - 1):
        raise NumericError(f"bound minimum lies outside h in {search}")
    res = scipy.optimize.minimize_scalar(
        lambda t: math.log(float(norm_bound(math.exp(t), c1, c2, nu, d))),
        bracket=(u[i - 1], u[i], u[i + 1]),
        method="golden",
        tol=1e-12,
    )
    return math.exp(res.x)


def norm_bound_report(
    f_samples: np.ndarray,
    nu: float,
    h_values,
    spacing: float | None = None,
    pad_factor: int = 1,
) -> BoundReport:
    """Compare the bandwidth bound with the exact spectral norm of a sampled function.

    Parameters
    ----------
    f_samples : 1-D or 2-D array sampled at ``j * spacing`` on ``[0, 1)^d``;
        each axis length must be a power of two and at least 64.
    spacing : defaults to ``1 / N``.
    pad_factor : zero-padding factor for a finer frequency lattice.
    """
    values = np.asarray(f_samples, dtype=np.float64)
    if values.ndim not in (1, 2):
        raise InvalidInputError(f"samples must be 1-D or 2-D, got {values.ndim}-D")
    n = values.shape[0]
    if any(s != n for s in values.shape) or n < 64 or n & (n - 1):
        raise InvalidInputError(f"grid must be square with a power-of-two size >= 64, got {values.shape}")
    if not (nu > 0 and math.isfinite(nu)):
        raise InvalidInputError("nu must be positive and finite")
    spacing = 1.0 / n if spacing is None else spacing
    peak = float(np.abs(values).max())
    boundary = max(float(np.abs(np.take(values, [0, -1], axis=a)).max()) for a in range(values.ndim))
    windowed = peak > 0 and boundary > WINDOW_TRIGGER * peak
    if windowed:
        values = _hann(values)
    spec = _spectrum(values, spacing, pad_factor)
    d = values.ndim
    c1, c2 = bound_constants(spec, nu)
    hs = [float(h) for h in h_values]
    return BoundReport(
        c1=c1,
        c2=c2,
        h_star_closed=h_star_closed_form(c1, c2, nu, d),
        h_star_numeric=h_star_golden(c1, c2, nu, d),
        bound_values=[(h, float(norm_bound(h, c1, c2, nu, d))) for h in hs],
        norm_values=[(h, spectral_norm(spec, nu, h)) for h in hs],
        nu=nu,
        d=d,
        windowed=windowed,
    )


def gaussian_bump(n: int = 256, width: float = 50.0, d: int = 1) -> np.ndarray:
    """``exp(-width ||x - 0.5||^2)`` sampled at ``j / n`` on ``[0,1)^d``."""
    x = np.arange(n) / n
    grids = np.meshgrid(*([x] * d), indexing="ij")
    return np.exp(-width * sum((g - 0.5) ** 2 for g in grids))


def two_bumps(n: int = 256, d: int = 1) -> np.ndarray:
    """Sum of a wide and a narrow Gaussian bump at different centers."""
    x = np.arange(n) / n
    grids = np.meshgrid(*([x] * d), indexing="ij")
    r1 = sum((g - 0.35) ** 2 for g in grids)
    r2 = sum((g - 0.7) ** 2 for g in grids)
    return np.exp(-80.0 * r1) + 0.5 * np.exp(-400.0 * r2)


def windowed_sine(n: int = 256, cycles: int = 8, d: int = 1) -> np.ndarray:
    """Band-limited sinusoid under a smooth bump window."""
    x = np.arange(n) / n
    grids = np.meshgrid(*([x] * d), indexing="ij")
    carrier = np.prod([np.sin(2 * math.pi * cycles * g) for g in grids], axis=0)
    return carrier * gaussian_bump(n, 60.0, d)


TEST_FUNCTIONS = {"bump": gaussian_bump, "two-bumps": two_bumps, "sine": windowed_sine}

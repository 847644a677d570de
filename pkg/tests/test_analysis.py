import math

import numpy as np
import pytest

from matern_recon.analysis import (
    TEST_FUNCTIONS,
    NumericError,
    default_tail_window,
    empirical_edr,
    fit_decay,
    frequency_quantile_check,
    gaussian_bump,
    gaussian_rff_estimate,
    gram_eigenvalues,
    norm_bound,
    norm_bound_report,
    rff_kernel_estimate,
    rkhs_norm,
    spectrum_table,
    theoretical_edr_slope,
)
from matern_recon.errors import InvalidInputError, UnsupportedKernelError
from matern_recon.field import ImplicitField
from matern_recon.kernels import KernelSpec, SpectralParams, eval_kernel, eval_matern, spectral_density
from matern_recon.krr import build_system, solve_dense
from matern_recon.shapes import sample_sphere

H_GRID = np.logspace(-2, 2, 30)


def test_spectrum_table_examples():
    params = SpectralParams(3, 1.5, 1.0)
    rows = spectrum_table(params, 5.0, 50)
    assert rows[0] == (0.0, pytest.approx(float(spectral_density(params, np.zeros(3)))))
    values = [p for _, p in rows]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_rougher_kernel_has_heavier_tail():
    rough = dict(spectrum_table(SpectralParams(3, 0.5, 1.0), 50.0, 101))
    smooth = dict(spectrum_table(SpectralParams(3, 2.5, 1.0), 50.0, 101))
    assert smooth[50.0] < rough[50.0]


@pytest.mark.parametrize("nu,d,target", [(0.5, 1, -2.0), (1.5, 1, -4.0)])
def test_edr_examples(nu, d, target):
    fit = empirical_edr(KernelSpec.matern(nu, 1.0), 2000, d)
    assert abs(fit.slope - target) <= 0.15 * abs(target)
    assert fit.eigenvalues_used == default_tail_window(2000)
    assert fit.r_squared > 0.99


def test_edr_ordering_in_smoothness():
    rough = empirical_edr(KernelSpec.matern(0.5, 1.0), 600, 1, seed=4)
    smooth = empirical_edr(KernelSpec.matern(1.5, 1.0), 600, 1, seed=4)
    assert smooth.slope < rough.slope < 0


def test_edr_eigenvalues_fall_faster_with_larger_h():
    narrow = gram_eigenvalues(KernelSpec.matern(0.5, 0.5), 600, 1, seed=2)
    wide = gram_eigenvalues(KernelSpec.matern(0.5, 2.0), 600, 1, seed=2)
    s = np.arange(60, 300)
    ratio_narrow = narrow[s] / narrow[0]
    ratio_wide = wide[s] / wide[0]
    assert np.all(ratio_wide <= ratio_narrow)


def test_edr_validation():
    with pytest.raises(InvalidInputError):
        empirical_edr(KernelSpec.matern(0.5), 100, 1)
    with pytest.raises(InvalidInputError):
        empirical_edr(KernelSpec.matern(0.5), 300, 4)
    with pytest.raises(NumericError):
        fit_decay(np.array([1.0, 0.5, 0.0, -1e-17]), (1, 5))
    with pytest.raises(UnsupportedKernelError):
        theoretical_edr_slope(KernelSpec.gaussian(), 1)


def test_rff_examples():
    spec = KernelSpec.matern(0.5, 1.0)
    x = np.array([0.3, -0.1, 0.2])
    assert abs(rff_kernel_estimate(spec, x, x, 100_000) - 1.0) <= 0.05
    y = x + np.array([0.6, 0.8, 0.0])
    assert abs(rff_kernel_estimate(spec, x, y, 100_000) - math.exp(-1)) <= 0.02
    assert rff_kernel_estimate(spec, x, y, 1, seed=5) == rff_kernel_estimate(spec, x, y, 1, seed=5)


def test_rff_rejects_non_matern():
    with pytest.raises(UnsupportedKernelError):
        rff_kernel_estimate(KernelSpec.gaussian(), [0.0], [1.0], 10)
    with pytest.raises(UnsupportedKernelError):
        rff_kernel_estimate(KernelSpec.matern(1.5).with_taper(0.5), [0.0], [1.0], 10)
    with pytest.raises(InvalidInputError):
        rff_kernel_estimate(KernelSpec.matern(1.5), [0.0], [1.0], 0)


def test_gaussian_rff():
    assert abs(gaussian_rff_estimate(1.0, [0.0, 0.0], [1.0, 0.0], 100_000) - math.exp(-0.5)) <= 0.02


@pytest.mark.parametrize("nu", [0.5, 1.5])
@pytest.mark.parametrize("n_features", [1_000, 10_000, 100_000])
def test_rff_error_envelope(nu, n_features):
    # 5 / sqrt(N) is about 2.5 standard deviations of a single estimate
    rng = np.random.default_rng(int(nu * 10) + n_features)
    spec = KernelSpec.matern(nu, 1.0)
    misses = 0
    for seed in range(100):
        x, y = rng.normal(size=(2, 3)) * 0.5
        err = abs(rff_kernel_estimate(spec, x, y, n_features, seed=seed) - eval_kernel(spec, x, y))
        misses += err > 5 / math.sqrt(n_features)
    assert misses <= 3


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_frequency_quantiles(nu):
    for level, integrated, sampled in frequency_quantile_check(nu, 0.7, n=200_000, seed=1):
        assert sampled == pytest.approx(integrated, abs=0.02 * abs(integrated) + 2e-3)


def test_rkhs_norm_examples():
    spec = KernelSpec.matern(1.5, 1.0)
    centers = np.random.default_rng(0).normal(size=(5, 3))
    assert rkhs_norm(ImplicitField(centers, np.zeros(5), spec)) == 0.0
    assert rkhs_norm(ImplicitField([[0.0, 0, 0]], [3.0], spec)) == 9.0
    f = solve_dense(build_system(sample_sphere(40, 0.3, seed=1), 0.005, 1e-10), spec)
    double_sum = math.fsum(
        float(a * b * eval_kernel(spec, c, d)) for a, c in zip(f.alpha, f.centers) for b, d in zip(f.alpha, f.centers)
    )
    assert rkhs_norm(f) == pytest.approx(double_sum, rel=1e-10)
    assert rkhs_norm(f) >= 0


@pytest.mark.parametrize("name", sorted(TEST_FUNCTIONS))
def test_bound_and_minimizer(name):
    report = norm_bound_report(TEST_FUNCTIONS[name](256), 0.5, H_GRID)
    assert report.bound_holds()
    assert report.h_star_numeric == pytest.approx(report.h_star_closed, rel=1e-6)
    assert len(report.rows()) == 30


def test_bound_is_u_shaped_for_bump():
    r = norm_bound_report(gaussian_bump(256, 50.0), 0.5, [1e-2, 1e2])
    at_star = float(norm_bound(r.h_star_closed, r.c1, r.c2, 0.5, 1))
    assert r.bound_values[0][1] > at_star
    assert r.bound_values[1][1] > at_star
    assert not r.windowed


def test_spectral_norm_of_kernel_section():
    # f = k(., c) has int |F[f]|^2 / p = k(c, c) = 1; the norm's prefactor
    # scales that by (2 pi)^(-d/2)
    n, spacing = 1024, 1.0 / 64
    x = (np.arange(n) - n // 2) * spacing
    for nu in (0.5, 1.5):
        f = eval_matern(KernelSpec.matern(nu, 0.5), np.abs(x))
        rows = norm_bound_report(f, nu, [0.5], spacing=spacing).rows()
        assert math.sqrt(2 * math.pi) * rows[0][2] == pytest.approx(1.0, rel=2e-2)


@pytest.mark.parametrize("nu,d", [(0.5, 2), (1.5, 1), (1.5, 2), (2.5, 1)])
def test_bound_needs_factor_above_unit_exponent(nu, d):
    # (a + b)^p <= a^p + b^p only for p <= 1; for p > 1 the sharp constant
    # is 2^(p - 1), so the plain bound fails and the scaled one holds
    p = nu + d / 2
    n = 256 if d == 1 else 128
    report = norm_bound_report(gaussian_bump(n, 50.0, d), nu, H_GRID)
    assert not report.bound_holds()
    assert all(2 ** (p - 1) * b >= norm for _, b, norm in report.rows())


def test_windowing_applied_to_nonvanishing_boundary():
    ramp = np.linspace(0.0, 1.0, 64)
    assert norm_bound_report(ramp, 0.5, [1.0]).windowed


@pytest.mark.parametrize("shape", [(100,), (32,), (64, 128), (8, 8, 8)])
def test_bound_report_rejects_bad_grids(shape):
    with pytest.raises(InvalidInputError):
        norm_bound_report(np.ones(shape), 0.5, [1.0])

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from matern_recon.errors import (
    CapacityError,
    InvalidInputError,
    IterativeFailureError,
    SingularSystemError,
)
from matern_recon.field import evaluate
from matern_recon.kernels import KernelSpec, eval_kernel, gram_matrix
from matern_recon.krr import (
    CoincidentCentersWarning,
    OrientedPointCloud,
    build_system,
    neighbor_pairs,
    solve,
    solve_dense,
    solve_sparse,
    tapered_matrix,
)
from matern_recon.shapes import sample_sphere

EPS = 0.005


def test_single_point_system():
    cloud = OrientedPointCloud([[0.0, 0, 0]], [[0, 0, 1.0]])
    s = build_system(cloud, EPS)
    np.testing.assert_array_equal(s.centers, [[0, 0, EPS], [0, 0, -EPS]])
    np.testing.assert_array_equal(s.targets, [EPS, -EPS])


def test_two_point_targets():
    cloud = OrientedPointCloud([[0.0, 0, 0], [1, 0, 0]], [[0, 0, 1.0], [1, 0, 0]])
    s = build_system(cloud, EPS)
    assert s.size == 4
    np.testing.assert_array_equal(s.targets, [EPS, EPS, -EPS, -EPS])


def test_duplicate_point_with_opposite_normals_builds():
    cloud = OrientedPointCloud([[0.0, 0, 0], [0, 0, 0]], [[0, 0, 1.0], [0, 0, -1.0]])
    with pytest.warns(CoincidentCentersWarning):
        s = build_system(cloud, EPS, lam=0.0)
    assert s.size == 4
    assert s.min_center_distance == 0.0
    with pytest.raises(SingularSystemError):
        solve_dense(s, KernelSpec.matern(0.5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoincidentCentersWarning)
        f = solve_dense(build_system(cloud, EPS, lam=1e-6), KernelSpec.matern(0.5))
    assert np.all(np.isfinite(f.alpha))


def test_cloud_validation():
    with pytest.raises(InvalidInputError, match="row 1"):
        OrientedPointCloud([[0.0, 0, 0], [np.nan, 0, 0]], [[1.0, 0, 0], [1, 0, 0]])
    with pytest.raises(InvalidInputError, match="zero length"):
        OrientedPointCloud([[0.0, 0, 0]], [[0.0, 0, 0]])
    with pytest.raises(InvalidInputError):
        OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    cloud = OrientedPointCloud([[0.0, 0, 0]], [[0.0, 2.0, 0]])
    np.testing.assert_array_equal(cloud.normals, [[0, 1, 0]])


def test_system_parameter_validation():
    cloud = sample_sphere(5)
    with pytest.raises(InvalidInputError):
        build_system(cloud, epsilon=0.0)
    with pytest.raises(InvalidInputError):
        build_system(cloud, lam=-1.0)


def test_two_by_two_closed_form():
    cloud = OrientedPointCloud([[0.0, 0, 0]], [[0, 0, 1.0]])
    f = solve_dense(build_system(cloud, EPS, lam=0.0), KernelSpec.matern(0.5, 1.0))
    k = math.exp(-0.01)
    # [[1,k],[k,1]]^-1 [e,-e] = e/(1-k^2) [1+k, -(1+k)] = e/(1-k) [1,-1]
    expected = EPS / (1 - k) * np.array([1.0, -1.0])
    np.testing.assert_allclose(f.alpha, expected, rtol=1e-10)
    assert f.residual <= 1e-8


@pytest.mark.parametrize(
    "key,lam",
    [("matern12", 1e-10), ("matern32", 1e-10), ("matern52", 1e-10), ("gaussian", 1e-6), ("arccos", 1e-6)],
)
def test_dense_residual(key, lam):
    cloud = sample_sphere(150, 0.3, seed=3)
    f = solve_dense(build_system(cloud, EPS, lam), KernelSpec.from_key(key, 1.0))
    assert f.residual <= 1e-8


def test_ill_conditioned_residual_is_reported(caplog):
    # the smallest eigenvalue of the arc-cosine system is lambda itself, so at
    # lambda = 1e-10 double precision cannot reach a 1e-8 residual
    cloud = sample_sphere(150, 0.3, seed=3)
    with caplog.at_level("WARNING", logger="matern_recon.krr"):
        f = solve_dense(build_system(cloud, EPS, 1e-10), KernelSpec.arc_cosine())
    assert f.residual > 1e-8
    assert "ill-conditioned" in caplog.text


def test_dense_limit():
    s = build_system(sample_sphere(20, seed=0), EPS)
    with pytest.raises(CapacityError):
        solve_dense(s, KernelSpec.matern(1.5), dense_limit=39)


def test_interpolation():
    cloud = sample_sphere(500, 1.0, seed=5)
    f = solve_dense(build_system(cloud, EPS, 1e-10), KernelSpec.matern(1.5, 1.0))
    x, n = cloud.points, cloud.normals
    assert np.max(np.abs(evaluate(f, x + EPS * n) - EPS)) <= 1e-3 * EPS
    assert np.max(np.abs(evaluate(f, x - EPS * n) + EPS)) <= 1e-3 * EPS
    assert np.max(np.abs(evaluate(f, x))) <= 1e-2 * EPS


def test_norm_identity_double_sum():
    cloud = sample_sphere(60, 0.3, seed=8)
    spec = KernelSpec.matern(2.5, 0.5)
    f = solve_dense(build_system(cloud, EPS, 1e-10), spec)
    quad = float(f.alpha @ gram_matrix(spec, f.centers) @ f.alpha)
    double_sum = math.fsum(
        float(a * b * eval_kernel(spec, c, d))
        for a, c in zip(f.alpha, f.centers)
        for b, d in zip(f.alpha, f.centers)
    )
    assert quad == pytest.approx(double_sum, rel=1e-10)


def test_norm_nonincreasing_in_lambda():
    cloud = sample_sphere(100, 0.3, seed=2)
    spec = KernelSpec.matern(1.5, 1.0)
    norms = []
    for lam in 10.0 ** np.arange(-13, -6):
        f = solve_dense(build_system(cloud, EPS, lam), spec)
        norms.append(f.alpha @ gram_matrix(spec, f.centers) @ f.alpha)
    assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))


@pytest.mark.parametrize("m,h_prime", [(50, 5.0), (120, 0.4), (250, 0.25)])
def test_sparse_matches_dense(m, h_prime):
    cloud = sample_sphere(m, 0.3, seed=m)
    spec = KernelSpec.matern(1.5, 0.5).with_taper(h_prime)
    s = build_system(cloud, EPS, 1e-8)
    dense = solve_dense(s, spec)
    sparse = solve_sparse(s, spec, cg_tol=1e-12)
    err = np.max(np.abs(sparse.alpha - dense.alpha))
    assert err <= 1e-6 * np.max(np.abs(dense.alpha))


def test_sparse_diagonal_when_cutoff_below_spacing():
    cloud = sample_sphere(40, 0.3, seed=1)
    s = build_system(cloud, EPS, 0.25)
    spec = KernelSpec.matern(0.5, 1.0).with_taper(s.min_center_distance * 0.99)
    f = solve_sparse(s, spec)
    np.testing.assert_allclose(f.alpha, s.targets / 1.25, rtol=1e-12)


def test_sparse_iteration_failure():
    cloud = sample_sphere(200, 0.3, seed=4)
    s = build_system(cloud, EPS, 1e-10)
    with pytest.raises(IterativeFailureError) as info:
        solve_sparse(s, KernelSpec.matern(1.5, 1.0).with_taper(0.5), cg_max_iters=1)
    assert info.value.iterations == 1
    assert info.value.residual > 1e-10


def test_solve_dispatch():
    s = build_system(sample_sphere(30, 0.3), EPS, 1e-8)
    f = solve(s, KernelSpec.matern(1.5).with_taper(0.2))
    assert f.spec.taper is not None
    with pytest.raises(InvalidInputError):
        tapered_matrix(s, KernelSpec.matern(1.5))


def test_tapered_matrix_matches_dense_gram():
    s = build_system(sample_sphere(80, 0.3, seed=9), EPS, 1e-7)
    spec = KernelSpec.matern(0.5, 1.0).with_taper(0.15)
    A = tapered_matrix(s, spec).toarray()
    B = gram_matrix(spec, s.centers) + 1e-7 * np.eye(s.size)
    np.testing.assert_allclose(A, B, rtol=1e-14, atol=0)


@given(
    n=st.integers(2, 150),
    radius=st.floats(0.01, 0.8),
    d=st.integers(1, 3),
    seed=st.integers(0, 2**31),
)
def test_neighbor_pairs_match_brute_force(n, radius, d, seed):
    pts = np.random.default_rng(seed).random((n, d))
    i, j = neighbor_pairs(pts, radius)
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    bi, bj = np.nonzero(np.triu(dist < radius, k=1))
    assert sorted(zip(i.tolist(), j.tolist())) == sorted(zip(bi.tolist(), bj.tolist()))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoperturb.core_math import (SeededRng, cosine, derive_seed, gaussian_sample, l2_normalize,
                                    l2_normalize_rows, pca_project_2d, principal_directions)
from protoperturb.errors import ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
scales = st.floats(1e-3, 1e3)


def nonzero_vectors(d=4):
    return arrays(np.float64, d, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


def jacobi_eigen(a, sweeps=100, tol=1e-15):
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix (test oracle)."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                for k in range(n):
                    akp, akq = a[k, p], a[k, q]
                    a[k, p], a[k, q] = c * akp - s * akq, s * akp + c * akq
                for k in range(n):
                    apk, aqk = a[p, k], a[q, k]
                    a[p, k], a[q, k] = c * apk - s * aqk, s * apk + c * aqk
                for k in range(n):
                    vkp, vkq = v[k, p], v[k, q]
                    v[k, p], v[k, q] = c * vkp - s * vkq, s * vkp + c * vkq
    vals = np.diag(a).copy()
    order = np.argsort(-vals)
    return vals[order], v[:, order]


class TestCosine:
    def test_identical(self):
        assert cosine([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        assert abs(cosine([1, 1], [1, 0]) - 0.70710678) < 1e-8
        assert abs(cosine([1, 1], [1, 0]) - math.sqrt(2) / 2) < 1e-9

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            cosine([0, 0], [1, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cosine([1, 0], [1, 0, 0])

    @given(nonzero_vectors(), nonzero_vectors(), scales, scales)
    def test_scale_invariant(self, u, v, a, b):
        assert abs(cosine(u, v) - cosine(a * u, b * v)) < 1e-12

    @given(nonzero_vectors(), nonzero_vectors())
    def test_bounded(self, u, v):
        assert -1.0 <= cosine(u, v) <= 1.0


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8], rtol=0, atol=1e-15)

    def test_unit_is_fixed_point(self):
        v = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(l2_normalize(v), v)

    def test_zero(self):
        with pytest.raises(ZeroVector):
            l2_normalize([0.0, 0.0])

    @given(nonzero_vectors(6))
    def test_idempotent(self, v):
        once = l2_normalize(v)
        assert np.max(np.abs(l2_normalize(once) - once)) < 1e-12

    def test_rows_reports_bad_row(self):
        with pytest.raises(ZeroVector) as info:
            l2_normalize_rows([[1.0, 0.0], [0.0, 0.0]])
        assert info.value.index == 1


class TestSeededRng:
    def test_equal_seeds_agree(self):
        a, b = SeededRng(123), SeededRng(123)
        np.testing.assert_array_equal(a.random_raw(10_000), b.random_raw(10_000))

    def test_different_seeds_differ(self):
        assert not np.array_equal(SeededRng(1).random_raw(8), SeededRng(2).random_raw(8))

    def test_children_are_independent_of_parent_state(self):
        a = SeededRng(9)
        a.normal(100)
        c1 = a.child("stage").normal(5)
        c2 = SeededRng(9).child("stage").normal(5)
        np.testing.assert_array_equal(c1, c2)

    def test_labels_matter(self):
        assert derive_seed(3, "a") != derive_seed(3, "b")
        assert derive_seed(3, "a", 1) != derive_seed(3, "a", 2)
        assert derive_seed(3, "a") == derive_seed(3, "a")


class TestGaussianSample:
    def test_zero_sigma_is_mean(self):
        mean = np.array([0.25, -1.0, 3.0])
        np.testing.assert_array_equal(gaussian_sample(SeededRng(0), mean, 0.0), mean)

    def test_deterministic(self):
        a = gaussian_sample(SeededRng(4), np.zeros(3), 0.5, 10)
        b = gaussian_sample(SeededRng(4), np.zeros(3), 0.5, 10)
        np.testing.assert_array_equal(a, b)

    def test_law_of_large_numbers(self):
        mean, sigma = np.array([1.0, -2.0, 0.5, 0.0]), 0.3
        x = gaussian_sample(SeededRng(11), mean, sigma, 100_000)
        assert np.all(np.abs(x.mean(axis=0) - mean) < 0.02)
        assert np.all(np.abs(x.var(axis=0) / sigma ** 2 - 1) < 0.05)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_sample(SeededRng(0), np.zeros(2), -1.0)


class TestPca:
    def test_rank_one_line(self):
        rng = np.random.default_rng(0)
        direction = rng.standard_normal(8)
        rows = np.outer(rng.standard_normal(40), direction) + rng.standard_normal(8)
        xy = pca_project_2d(rows)
        s = np.sqrt((xy ** 2).sum(axis=0))
        assert s[1] < 1e-8 * s[0]

    def test_axis_aligned(self):
        # a symmetric grid has an exactly diagonal covariance
        rows = np.array([(x, y) for x in (-3.0, -1.0, 1.0, 3.0) for y in (-0.5, 0.5)])
        dirs, _, _ = principal_directions(rows)
        assert abs(abs(dirs[0, 0]) - 1.0) < 1e-6
        assert abs(dirs[0, 1]) < 1e-6

    def test_against_jacobi(self):
        rng = np.random.default_rng(7)
        rows = rng.standard_normal((50, 8)) @ rng.standard_normal((8, 8))
        xc = rows - rows.mean(axis=0)
        cov = xc.T @ xc / rows.shape[0]
        vals, vecs = jacobi_eigen(cov)
        xy = pca_project_2d(rows)
        proj_var = float((xy ** 2).sum() / rows.shape[0])
        assert abs(proj_var - (vals[0] + vals[1])) < 1e-6
        dirs, got_vals, _ = principal_directions(rows)
        np.testing.assert_allclose(got_vals, vals[:2], rtol=1e-9)
        for k in range(2):
            assert abs(abs(float(dirs[k] @ vecs[:, k])) - 1.0) < 1e-6

    def test_directions_orthonormal(self):
        rows = np.random.default_rng(3).standard_normal((30, 5))
        dirs, _, _ = principal_directions(rows, k=3)
        np.testing.assert_allclose(dirs @ dirs.T, np.eye(3), atol=1e-9)

    def test_constant_rows(self):
        xy = pca_project_2d(np.ones((5, 3)))
        np.testing.assert_array_equal(xy, np.zeros((5, 2)))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            pca_project_2d(np.ones((1, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_projection_is_centered(self, seed):
        rows = np.random.default_rng(seed).standard_normal((20, 4))
        xy = pca_project_2d(rows)
        assert np.all(np.abs(xy.mean(axis=0)) < 1e-10)

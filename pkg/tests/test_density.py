import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdcount.density import (
    DotAnnotation,
    downsample_sum,
    drop_annotations,
    gaussian_kernel,
    kernel_radius,
    render_density,
)


def brute_force_kernel(sigma, radius):
    # independent double loop, normalized the same way
    size = 2 * radius + 1
    out = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            dy, dx = i - radius, j - radius
            out[i, j] = math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    return out / out.sum()


class TestGaussianKernel:
    def test_matches_brute_force(self):
        for sigma, radius in [(1.0, 3), (7.0, 21), (2.5, 8)]:
            k = gaussian_kernel(sigma, radius)
            np.testing.assert_allclose(k, brute_force_kernel(sigma, radius),
                                       rtol=0, atol=1e-14)

    def test_center_value_sigma1(self):
        k = gaussian_kernel(1.0, 3)
        assert k[3, 3] == pytest.approx(0.15924112569070248, abs=1e-12)

    def test_normalized_and_symmetric(self):
        k = gaussian_kernel(3.0, 9)
        assert k.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(k, k[::-1, :])
        np.testing.assert_array_equal(k, k[:, ::-1])
        np.testing.assert_array_equal(k, k.T)

    def test_radius_rule(self):
        assert kernel_radius(7.0) == 21
        assert kernel_radius(1.0) == 3
        assert kernel_radius(2.5) == 8  # ceil(7.5)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kernel(0.0, 3)
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0, 3)


class TestRenderDensity:
    def test_single_center_dot_mass(self):
        dots = DotAnnotation(np.array([[32.0, 32.0]]), "a")
        d = render_density(dots, 64, 64, 7.0)
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        assert d.min() >= 0.0

    def test_corner_dot_renormalized(self):
        # the clipped window must still integrate to one per head
        dots = DotAnnotation(np.array([[0.0, 0.0]]), "a")
        d = render_density(dots, 64, 64, 7.0)
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        # mass concentrates at the corner
        assert d[0, 0] == d.max()

    def test_count_conservation_many(self):
        rng = np.random.default_rng(123)
        for _ in range(50):
            n = int(rng.integers(0, 51))
            pts = np.stack([rng.uniform(0, 64, n), rng.uniform(0, 64, n)], axis=1)
            d = render_density(DotAnnotation(pts.reshape(-1, 2), "x"), 64, 64, 7.0)
            assert abs(d.sum() - n) <= 1e-6 * max(n, 1)

    def test_empty_annotation_gives_zero_map(self):
        d = render_density(DotAnnotation(np.empty((0, 2)), "e"), 32, 32, 7.0)
        assert d.shape == (32, 32)
        assert d.sum() == 0.0

    def test_dot_lands_in_containing_pixel(self):
        # dot at (10.9, 20.1) belongs to pixel column 10, row 20
        dots = DotAnnotation(np.array([[10.9, 20.1]]), "a")
        d = render_density(dots, 64, 64, 1.0)
        assert np.unravel_index(d.argmax(), d.shape) == (20, 10)

    def test_rejects_out_of_bounds(self):
        dots = DotAnnotation(np.array([[64.0, 5.0]]), "bad")
        with pytest.raises(ValueError, match="64"):
            render_density(dots, 64, 64, 7.0)

    def test_interior_rendering_matches_direct_sum(self):
        # far from edges the map is exactly a sum of shifted kernels
        dots = DotAnnotation(np.array([[30.0, 25.0], [35.5, 28.2]]), "a")
        d = render_density(dots, 64, 64, 2.0)
        r = kernel_radius(2.0)
        k = gaussian_kernel(2.0, r)
        expect = np.zeros((64, 64))
        for x, y in dots.points:
            c, rw = int(x), int(y)
            expect[rw - r : rw + r + 1, c - r : c + r + 1] += k
        np.testing.assert_allclose(d, expect, atol=1e-14)


class TestDownsampleSum:
    def test_matches_nested_loop_bitwise(self):
        rng = np.random.default_rng(7)
        d = rng.random((48, 48))
        got = downsample_sum(d, 4)
        expect = np.zeros((12, 12))
        for i in range(12):
            for j in range(12):
                acc = 0.0
                for di in range(4):
                    for dj in range(4):
                        acc += d[4 * i + di, 4 * j + dj]
                expect[i, j] = acc
        np.testing.assert_array_equal(got, expect)

    def test_preserves_shape_rule(self):
        assert downsample_sum(np.ones((8, 12)), 4).shape == (2, 3)

    def test_rejects_indivisible(self):
        with pytest.raises(ValueError):
            downsample_sum(np.ones((9, 8)), 4)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_total_mass_invariant(self, seed):
        d = np.random.default_rng(seed).random((16, 16))
        assert downsample_sum(d, 4).sum() == pytest.approx(d.sum(), rel=1e-12)


class TestDropAnnotations:
    def test_worked_example_ten_dots(self):
        pts = np.stack([np.arange(10.0), np.arange(10.0)], axis=1)
        kept = drop_annotations(DotAnnotation(pts, "a"), 0.3, seed=5)
        assert len(kept) == 7

    def test_single_dot_survives(self):
        kept = drop_annotations(DotAnnotation(np.array([[1.0, 1.0]]), "a"), 0.3, seed=0)
        assert len(kept) == 1

    def test_fraction_zero_identity(self):
        pts = np.random.default_rng(3).uniform(0, 10, (6, 2))
        kept = drop_annotations(DotAnnotation(pts, "a"), 0.0, seed=9)
        np.testing.assert_array_equal(kept.points, pts)

    def test_same_seed_same_survivors(self):
        pts = np.random.default_rng(4).uniform(0, 10, (20, 2))
        a = drop_annotations(DotAnnotation(pts, "a"), 0.3, seed=42)
        b = drop_annotations(DotAnnotation(pts, "a"), 0.3, seed=42)
        np.testing.assert_array_equal(a.points, b.points)

    def test_different_seed_usually_differs(self):
        pts = np.random.default_rng(4).uniform(0, 10, (30, 2))
        a = drop_annotations(DotAnnotation(pts, "a"), 0.5, seed=1)
        b = drop_annotations(DotAnnotation(pts, "a"), 0.5, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_survivors_preserve_order(self):
        pts = np.stack([np.arange(30.0), np.zeros(30)], axis=1)
        kept = drop_annotations(DotAnnotation(pts, "a"), 0.4, seed=11)
        xs = kept.points[:, 0]
        assert np.all(np.diff(xs) > 0)

    def test_rejects_bad_fraction(self):
        dots = DotAnnotation(np.array([[1.0, 1.0]]), "a")
        with pytest.raises(ValueError):
            drop_annotations(dots, -0.1, seed=0)
        with pytest.raises(ValueError):
            drop_annotations(dots, 1.5, seed=0)

    @given(st.integers(0, 60), st.floats(0.0, 1.0), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_survivor_count_rule(self, n, fraction, seed):
        pts = np.random.default_rng(0).uniform(0, 50, (n, 2))
        kept = drop_annotations(DotAnnotation(pts.reshape(-1, 2), "a"), fraction, seed)
        assert len(kept) == n - int(np.rint(fraction * n))
        # survivors are a subset of the originals
        orig = {tuple(p) for p in pts.reshape(-1, 2)}
        assert all(tuple(p) in orig for p in kept.points)


class TestDotAnnotation:
    def test_validates_shape(self):
        with pytest.raises(ValueError):
            DotAnnotation(np.zeros((3, 3)), "a")

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            DotAnnotation(np.array([[np.nan, 1.0]]), "a")

    def test_bounds_error_names_offender(self):
        dots = DotAnnotation(np.array([[1.0, 1.0], [99.0, 2.0]]), "a")
        with pytest.raises(ValueError, match="99"):
            dots.validate_bounds(10, 10)

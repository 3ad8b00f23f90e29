import numpy as np
import pytest

from convfisher import ConfigurationError
from convfisher.tensors import (
    descriptor_positions,
    descriptors_to_maps,
    maps_to_descriptors,
    max_abs_normalize,
    occlude,
)


class TestDescriptorExtraction:
    def test_large_map_counts(self):
        maps = np.zeros((14, 14, 384))
        desc = maps_to_descriptors(maps)
        assert desc.shape == (196, 384)

    def test_single_position_is_the_fiber(self):
        fiber = np.array([3.0, -1.0, 0.5, 2.0])
        desc = maps_to_descriptors(fiber.reshape(1, 1, 4))
        np.testing.assert_array_equal(desc, fiber[None, :])

    def test_row_major_layout(self):
        maps = np.arange(12, dtype=float).reshape(2, 2, 3)
        desc = maps_to_descriptors(maps)
        np.testing.assert_array_equal(
            desc, [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]]
        )

    def test_positions_follow_row_order(self):
        pos = descriptor_positions(2, 3)
        np.testing.assert_array_equal(
            pos, [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]
        )

    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(0)
        maps = rng.standard_normal((5, 7, 6))
        back = descriptors_to_maps(maps_to_descriptors(maps), 5, 7)
        assert np.array_equal(back, maps)


class TestMaxAbsNormalize:
    def test_direct_example(self):
        np.testing.assert_allclose(max_abs_normalize([2.0, -4.0, 1.0]), [0.5, -1.0, 0.25])

    def test_all_zero_unchanged(self):
        np.testing.assert_array_equal(max_abs_normalize([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])

    def test_single_component(self):
        np.testing.assert_array_equal(max_abs_normalize([-3.0]), [-1.0])

    def test_range_and_peak(self):
        rng = np.random.default_rng(1)
        d = rng.standard_normal(32) * 7.5
        out = max_abs_normalize(d)
        assert np.all(np.abs(out) <= 1.0)
        assert np.isclose(np.abs(out).max(), 1.0)

    def test_idempotent_exactly(self):
        rng = np.random.default_rng(2)
        d = rng.standard_normal(16)
        once = max_abs_normalize(d)
        assert np.array_equal(max_abs_normalize(once), once)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(3)
        d = rng.standard_normal(12)
        for c in (1e-6, 0.5, 3.0, 1e7):
            np.testing.assert_allclose(
                max_abs_normalize(c * d), max_abs_normalize(d), atol=1e-12
            )

    def test_rowwise_matches_per_vector(self):
        rng = np.random.default_rng(4)
        mat = rng.standard_normal((9, 5))
        rows = max_abs_normalize(mat)
        for i in range(9):
            np.testing.assert_array_equal(rows[i], max_abs_normalize(mat[i]))


class TestOcclude:
    def test_full_image_fill_zero(self):
        rng = np.random.default_rng(5)
        img = rng.random((6, 6, 3))
        out = occlude(img, (0, 0, 6, 6), 0.0)
        assert np.array_equal(out, np.zeros_like(img))

    def test_empty_rectangle_identity(self):
        rng = np.random.default_rng(6)
        img = rng.random((6, 6, 3))
        out = occlude(img, (2, 2, 2, 5), 1.0)
        assert np.array_equal(out, img)

    def test_top_left_quadrant(self):
        img = np.ones((4, 4, 1))
        out = occlude(img, (0, 0, 2, 2), 0.0)
        assert np.array_equal(out[:2, :2, 0], np.zeros((2, 2)))
        assert np.array_equal(out[2:, :, 0], np.ones((2, 4)))
        assert np.array_equal(out[:2, 2:, 0], np.ones((2, 2)))

    def test_does_not_mutate_input(self):
        img = np.ones((4, 4, 2))
        occlude(img, (1, 1, 3, 3), 0.0)
        assert np.array_equal(img, np.ones((4, 4, 2)))

    @pytest.mark.parametrize("rect", [(-1, 0, 2, 2), (0, 0, 5, 2), (2, 2, 1, 3), (0, 3, 1, 7)])
    def test_out_of_bounds_rejected(self, rect):
        with pytest.raises(ConfigurationError):
            occlude(np.zeros((4, 4, 1)), rect, 0.0)

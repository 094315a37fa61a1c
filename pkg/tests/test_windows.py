from __future__ import annotations

import math

import numpy as np
import pytest

from tilesr.errors import ParameterError
from tilesr.geometry import Extent3, plan_tiles
from tilesr.volume import LatentVolume, divide_elementwise, paste_accumulate
from tilesr.windows import gaussian_window, valid_mask, windows_for_plan


class TestGaussianWindow:
    def test_single_cell(self):
        window = gaussian_window(Extent3(1, 1, 1), 0.33)
        assert window.weights.shape == (1, 1, 1)
        assert float(window.weights[0, 0, 0]) == 1.0

    def test_odd_axis_symmetric_peak(self):
        window = gaussian_window(Extent3(1, 5, 1), 0.33)
        line = window.weights[0, :, 0]
        assert float(line[2]) == pytest.approx(1.0)
        assert float(line.max()) == float(line[2])
        np.testing.assert_allclose(line, line[::-1])

    def test_corner_matches_defining_formula(self):
        # Direct evaluation of the separable definition as the oracle:
        # sigma = 0.25 * 4 = 1 per axis, corner offset 1.5 cells on each,
        # relative to the analytic center value of 1.
        window = gaussian_window(Extent3(1, 4, 4), 0.25)
        corner = float(window.weights[0, 0, 0])
        assert corner == pytest.approx(math.exp(-(1.5**2 + 1.5**2) / 2.0), rel=1e-6)
        # Sampled cells stay symmetric around that center.
        np.testing.assert_allclose(window.weights[0], window.weights[0, ::-1, ::-1])

    def test_strictly_positive(self):
        window = gaussian_window(Extent3(3, 9, 7), 0.1)
        assert (window.weights > 0).all()

    def test_invalid_sigma(self):
        with pytest.raises(ParameterError):
            gaussian_window(Extent3(1, 4, 4), 0.0)
        with pytest.raises(ParameterError):
            gaussian_window(Extent3(1, 4, 4), 1.5)


class TestValidMask:
    def test_zero_margin_all_ones(self):
        window = valid_mask(Extent3(1, 4, 4), ((0, 0), (0, 0), (0, 0)))
        np.testing.assert_array_equal(window.weights, np.ones((1, 4, 4), dtype=np.float32))

    def test_interior_tile_margins(self):
        window = valid_mask(
            Extent3(1, 8, 8),
            ((0, 0), (2, 2), (2, 2)),
        )
        weights = window.weights[0]
        assert (weights[2:6, 2:6] == 1).all()
        assert weights.sum() == 16
        assert set(np.unique(weights)) == {0.0, 1.0}

    def test_boundary_side_margin_dropped(self):
        window = valid_mask(
            Extent3(1, 8, 8),
            ((0, 0), (2, 2), (2, 2)),
            is_boundary=((False, False), (False, False), (True, False)),
        )
        weights = window.weights[0]
        assert (weights[2:6, 0:6] == 1).all()
        assert (weights[:, 6:] == 0).all()

    def test_margins_consume_tile(self):
        with pytest.raises(ParameterError, match="consume"):
            valid_mask(Extent3(1, 4, 4), ((0, 0), (2, 2), (0, 0)))


def normalized_weight_field(plan, kind=None, sigma_frac=0.33):
    """Rasterize sum-of-normalized-weights and the raw weight sum."""
    windows = windows_for_plan(plan, kind=kind, sigma_frac=sigma_frac)
    weight_sum = LatentVolume.zeros(plan.input_extent, 1, dtype=np.float64)
    unit = LatentVolume.full(plan.tile_size, 1, 1.0)
    for region, window in zip(plan.regions, windows):
        paste_accumulate(weight_sum, unit, region, window)
    normalized_total = np.zeros((*plan.input_extent.as_tuple(), 1))
    for region, window in zip(plan.regions, windows):
        num = LatentVolume.zeros(plan.input_extent, 1, dtype=np.float64)
        paste_accumulate(num, unit, region, window)
        share = divide_elementwise(num, weight_sum, eps_policy="zero-fill")
        normalized_total += share.data
    return normalized_total, weight_sum.data


class TestPlanWindows:
    def test_partition_of_unity_gaussian(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            t = int(rng.integers(1, 4))
            h = int(rng.integers(4, 33))
            w = int(rng.integers(4, 33))
            th = int(rng.integers(1, t + 1))
            hh = int(rng.integers(2, h + 1))
            ww = int(rng.integers(2, w + 1))
            overlap = (
                int(rng.integers(0, th)),
                int(rng.integers(0, hh)),
                int(rng.integers(0, ww)),
            )
            plan = plan_tiles(Extent3(t, h, w), Extent3(th, hh, ww), overlap)
            total, weight_sum = normalized_weight_field(plan)
            assert (weight_sum > 0).all()
            np.testing.assert_allclose(total, 1.0, atol=1e-6)

    def test_valid_region_exactly_one_owner(self):
        plan = plan_tiles(
            Extent3(1, 16, 16), Extent3(1, 6, 6), (0, 2, 2), mode="valid_region"
        )
        windows = windows_for_plan(plan)
        counts = LatentVolume.zeros(plan.input_extent, 1, dtype=np.float64)
        unit = LatentVolume.full(plan.tile_size, 1, 1.0)
        for region, window in zip(plan.regions, windows):
            paste_accumulate(counts, unit, region, window)
        np.testing.assert_array_equal(counts.data, np.ones_like(counts.data))

    def test_valid_region_partition_with_clamped_tiles(self):
        # Flush clamping makes the last overlap wider than nominal; midpoint
        # margins must still partition.
        plan = plan_tiles(
            Extent3(1, 11, 11), Extent3(1, 4, 4), (0, 1, 1), mode="valid_region"
        )
        windows = windows_for_plan(plan)
        counts = LatentVolume.zeros(plan.input_extent, 1, dtype=np.float64)
        unit = LatentVolume.full(plan.tile_size, 1, 1.0)
        for region, window in zip(plan.regions, windows):
            paste_accumulate(counts, unit, region, window)
        np.testing.assert_array_equal(counts.data, np.ones_like(counts.data))

    def test_explicit_margin_is_honored(self):
        plan = plan_tiles(
            Extent3(1, 8, 8),
            Extent3(1, 5, 5),
            (0, 2, 2),
            mode="valid_region",
            valid_margin=(0, 1, 1),
        )
        windows = windows_for_plan(plan)
        # Interior-side margins are 1 everywhere, boundary sides 0.
        first = windows[0].weights[0]
        assert (first[:4, :4] == 1).all()
        assert (first[4, :] == 0).all()

    def test_gaussian_windows_shared_instance(self):
        plan = plan_tiles(Extent3(1, 8, 8), Extent3(1, 4, 4), (0, 2, 2))
        windows = windows_for_plan(plan)
        assert all(w is windows[0] for w in windows)

import numpy as np
import pytest

from hemascreen import preprocess
from hemascreen.preprocess import ClaheConfig


def global_hist_eq(plane):
    """Independent global histogram equalization oracle (classic cdf formula)."""
    bins = np.clip(plane, 0, 255).astype(int)
    hist = [0] * 256
    for v in bins.ravel():
        hist[v] += 1
    cdf, total = [], 0
    for c in hist:
        total += c
        cdf.append(total)
    n = cdf[-1]
    cdf_min = next(c for c in cdf if c > 0)
    if cdf_min == n:
        return bins.astype(float)
    lut = [min(255.0, max(0.0, round((c - cdf_min) / (n - cdf_min) * 255))) for c in cdf]
    return np.array([lut[v] for v in bins.ravel()]).reshape(plane.shape)


class TestClahe:
    def test_constant_plane_unchanged(self):
        plane = np.full((32, 32), 37.0)
        out = preprocess.clahe(plane, ClaheConfig(4, 4, 4.0))
        assert np.array_equal(out, plane)

    def test_degenerate_grid_equals_global_equalization(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            plane = rng.integers(0, 256, size=(64, 64)).astype(float)
            out = preprocess.clahe(plane, ClaheConfig(1, 1, clip_limit=1e9))
            assert np.array_equal(out, global_hist_eq(plane))

    def test_two_value_clipped_mapping_by_hand(self):
        # 8x8 plane, half 10s and half 200s, 1x1 grid, clip_limit 2.0.
        # ceiling = max(1, int(2.0 * 64 / 256)) = 1, so both bins clip to 1 and
        # the excess 62 lands in bin 0.  cdf: 62 below 10, 63 from 10, 64 from
        # 200; lut(10) = round(1/2 * 255) = 128, lut(200) = round(2/2 * 255) = 255.
        plane = np.zeros((8, 8))
        plane[:4] = 10.0
        plane[4:] = 200.0
        out = preprocess.clahe(plane, ClaheConfig(1, 1, clip_limit=2.0))
        assert np.all(out[:4] == 128.0)
        assert np.all(out[4:] == 255.0)

    def test_output_range_and_monotone_mapping(self):
        rng = np.random.default_rng(4)
        plane = rng.integers(0, 256, size=(64, 64)).astype(float)
        out = preprocess.clahe(plane, ClaheConfig(1, 1, 4.0))
        assert out.min() >= 0 and out.max() <= 255
        # single tile: mapping of values must be monotone
        order = np.argsort(plane.ravel())
        assert np.all(np.diff(out.ravel()[order]) >= 0)

    def test_clipped_histogram_respects_ceiling_and_mass(self):
        rng = np.random.default_rng(5)
        values = rng.integers(0, 256, size=(16, 16))
        clipped = preprocess._clipped_histogram(values, 2.0)
        n = values.size
        ceiling = max(1, int(2.0 * n / 256))
        raw = np.bincount(values.ravel(), minlength=256)
        assert np.all(np.minimum(raw, ceiling) <= ceiling)
        assert clipped.sum() == n  # redistribution conserves mass

    def test_tile_grid_too_large_rejected(self):
        with pytest.raises(ValueError):
            preprocess.clahe(np.zeros((8, 8)), ClaheConfig(8, 8, 4.0))

    def test_clip_limit_below_one_rejected(self):
        with pytest.raises(ValueError):
            ClaheConfig(8, 8, 0.5)


class TestAdaptiveThreshold:
    def test_constant_plane_positive_offset_all_background(self):
        mask = preprocess.adaptive_threshold(np.full((10, 10), 90.0), 3, 5.0)
        assert not mask.any()

    def test_constant_plane_negative_offset_all_foreground(self):
        mask = preprocess.adaptive_threshold(np.full((10, 10), 90.0), 3, -5.0)
        assert mask.all()

    def test_step_edge_boundary_within_one_pixel(self):
        plane = np.zeros((8, 8))
        plane[:, 4:] = 200.0
        mask = preprocess.adaptive_threshold(plane, 3, 10.0)
        # direct windowed-mean oracle
        expected = np.zeros_like(mask)
        for y in range(8):
            for x in range(8):
                ys = [min(max(y + d, 0), 7) for d in (-1, 0, 1)]
                xs = [min(max(x + d, 0), 7) for d in (-1, 0, 1)]
                mean = np.mean([plane[a, b] for a in ys for b in xs])
                expected[y, x] = plane[y, x] > mean + 10.0
        assert np.array_equal(mask, expected)
        fg_cols = np.where(mask.any(axis=0))[0]
        assert abs(fg_cols.min() - 4) <= 1

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            preprocess.adaptive_threshold(np.zeros((8, 8)), 4, 0.0)


class TestMorph:
    def test_open_removes_isolated_pixel(self):
        mask = np.zeros((7, 7), dtype=bool)
        mask[3, 3] = True
        assert not preprocess.morph(mask, "open", "square3").any()

    def test_open_preserves_solid_square(self):
        mask = np.zeros((12, 12), dtype=bool)
        mask[1:11, 1:11] = True
        assert np.array_equal(preprocess.morph(mask, "open", "square3"), mask)

    def test_close_fills_one_pixel_gap(self):
        # two vertical bars one pixel apart in a 5x5 raster
        mask = np.zeros((5, 5), dtype=bool)
        mask[:, 1] = True
        mask[:, 3] = True
        expected = np.zeros((5, 5), dtype=bool)
        expected[:, 1:4] = True
        assert np.array_equal(preprocess.morph(mask, "close", "square3"), expected)

    def test_open_close_idempotent(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            mask = rng.random((16, 16)) > 0.5
            for op in ("open", "close"):
                for se in ("cross3", "square3"):
                    once = preprocess.morph(mask, op, se)
                    twice = preprocess.morph(once, op, se)
                    assert np.array_equal(once, twice), (op, se)

    def test_close_is_extensive(self):
        rng = np.random.default_rng(7)
        mask = rng.random((16, 16)) > 0.5
        closed = preprocess.morph(mask, "close", "square3")
        assert np.all(closed[mask])

    def test_erode_dilate_duality_on_cross(self):
        mask = np.zeros((9, 9), dtype=bool)
        mask[3:6, 3:6] = True
        eroded = preprocess.morph(mask, "erode", "cross3")
        assert eroded.sum() == 1 and eroded[4, 4]


class TestIlluminationCorrection:
    def _img(self, color, shape=(10, 10)):
        return np.full(shape + (3,), color, dtype=np.uint8)

    def test_unit_gains_leave_image_unchanged(self):
        img = self._img((230, 230, 230))
        sclera = np.ones((10, 10), dtype=bool)
        assert np.array_equal(preprocess.correct_illumination(img, sclera, 230.0), img)

    def test_gains_computed_from_sclera_means(self):
        img = np.zeros((10, 10, 3), dtype=np.uint8)
        img[:5] = (200, 180, 160)  # sclera patch
        img[5:] = (100, 100, 100)
        sclera = np.zeros((10, 10), dtype=bool)
        sclera[:5] = True
        out = preprocess.correct_illumination(img, sclera, 216.0)
        # gains (1.08, 1.20, 1.35), none clamped
        assert tuple(out[0, 0]) == (216, 216, 216)
        assert tuple(out[9, 9]) == (108, 120, 135)

    def test_gain_clamped_at_two(self):
        img = self._img((50, 50, 50))
        sclera = np.ones((10, 10), dtype=bool)
        out = preprocess.correct_illumination(img, sclera, 230.0)
        assert tuple(out[0, 0]) == (100, 100, 100)

    def test_empty_sclera_raises(self):
        img = self._img((100, 100, 100))
        with pytest.raises(preprocess.IlluminationReferenceError):
            preprocess.correct_illumination(img, np.zeros((10, 10), dtype=bool))


class TestCrfRefine:
    def test_zero_weight_is_pixelwise_argmax(self):
        rng = np.random.default_rng(8)
        unary = rng.random((12, 12))
        mask = preprocess.crf_refine(unary, 0.0, max_iters=5)
        assert np.array_equal(mask, unary > 0.5)

    def test_dissenting_pixel_flips_to_background(self):
        unary = np.full((5, 5), 0.05)
        unary[2, 2] = 0.6
        mask = preprocess.crf_refine(unary, 1.0, max_iters=5)
        assert not mask.any()

    def test_uniform_half_is_all_background(self):
        mask = preprocess.crf_refine(np.full((6, 6), 0.5), 1.0)
        assert not mask.any()

    def test_energy_never_increases(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            unary = rng.random((10, 10))
            _, energies = preprocess.crf_refine(unary, 0.8, max_iters=8, return_energies=True)
            assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))

    def test_out_of_range_unary_rejected(self):
        with pytest.raises(ValueError):
            preprocess.crf_refine(np.full((4, 4), 1.5), 1.0)

    def test_extreme_probabilities_are_floored(self):
        unary = np.zeros((4, 4))
        unary[1:3, 1:3] = 1.0
        mask = preprocess.crf_refine(unary, 0.0)
        assert mask.sum() == 4

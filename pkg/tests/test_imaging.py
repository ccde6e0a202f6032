import colorsys

import numpy as np
import pytest

from hemascreen import imaging


def _one_px(r, g, b):
    return np.array([[[r, g, b]]], dtype=np.uint8)


def lab_reference(r, g, b):
    """Scalar sRGB(D65) -> CIELab, straight from the textbook formulas."""

    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(x / 0.95047), f(y / 1.0), f(z / 1.08883)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


class TestConvertColor:
    def test_white_is_achromatic_in_lab(self):
        L, a, b = imaging.convert_color(_one_px(255, 255, 255), "CIELab")
        assert L[0, 0] == pytest.approx(100.0, abs=0.01)
        assert a[0, 0] == pytest.approx(0.0, abs=0.01)
        assert b[0, 0] == pytest.approx(0.0, abs=0.01)

    def test_gray_has_zero_saturation(self):
        h, s, v = imaging.convert_color(_one_px(128, 128, 128), "HSV")
        assert s[0, 0] == 0.0
        assert v[0, 0] == pytest.approx(128 / 255)

    def test_red_lab_matches_reference(self):
        L, a, b = imaging.convert_color(_one_px(255, 0, 0), "CIELab")
        assert (L[0, 0], a[0, 0], b[0, 0]) == pytest.approx((53.24, 80.09, 67.20), abs=0.1)

    def test_lab_matches_scalar_reference_on_random_colors(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 256, size=(20, 1, 3), dtype=np.uint8)
        L, a, b = imaging.convert_color(img, "CIELab")
        for i in range(20):
            exp = lab_reference(*img[i, 0].astype(float))
            assert (L[i, 0], a[i, 0], b[i, 0]) == pytest.approx(exp, abs=1e-9)

    def test_hsv_matches_colorsys(self):
        rng = np.random.default_rng(12)
        img = rng.integers(0, 256, size=(30, 1, 3), dtype=np.uint8)
        h, s, v = imaging.convert_color(img, "HSV")
        for i in range(30):
            r, g, b = img[i, 0] / 255.0
            eh, es, ev = colorsys.rgb_to_hsv(r, g, b)
            assert h[i, 0] == pytest.approx(eh * 360.0, abs=1e-9)
            assert s[i, 0] == pytest.approx(es, abs=1e-12)
            assert v[i, 0] == pytest.approx(ev, abs=1e-12)

    def test_rgb_target_is_passthrough(self):
        img = _one_px(10, 20, 30)
        r, g, b = imaging.convert_color(img, "RGB")
        assert (r[0, 0], g[0, 0], b[0, 0]) == (10.0, 20.0, 30.0)

    def test_gray_axis_invariants(self):
        for val in (0, 1, 77, 128, 254, 255):
            img = _one_px(val, val, val)
            _, a, b = imaging.convert_color(img, "CIELab")
            assert abs(a[0, 0]) < 0.01 and abs(b[0, 0]) < 0.01
            _, s, _ = imaging.convert_color(img, "HSV")
            assert s[0, 0] == 0.0
            _, cb, cr = imaging.convert_color(img, "YCbCr")
            assert cb[0, 0] == pytest.approx(128.0, abs=0.5)
            assert cr[0, 0] == pytest.approx(128.0, abs=0.5)

    def test_unknown_space_rejected(self):
        with pytest.raises(ValueError):
            imaging.convert_color(_one_px(0, 0, 0), "XYZ")


class TestConvertBack:
    def test_lab_white_round_trip(self):
        one = np.ones((1, 1))
        img = imaging.convert_back((100.0 * one, 0.0 * one, 0.0 * one), "CIELab")
        assert tuple(img[0, 0]) == (255, 255, 255)

    def test_ycbcr_black(self):
        one = np.ones((1, 1))
        img = imaging.convert_back((0.0 * one, 128.0 * one, 128.0 * one), "YCbCr")
        assert tuple(img[0, 0]) == (0, 0, 0)

    def test_round_trip_audit(self):
        rng = np.random.default_rng(42)
        img = rng.integers(0, 256, size=(100, 100, 3), dtype=np.uint8)
        for space in ("CIELab", "YCbCr", "HSV"):
            back = imaging.convert_back(imaging.convert_color(img, space), space)
            err = np.abs(back.astype(int) - img.astype(int)).max()
            assert err <= 1, f"{space} round-trip error {err}"

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            imaging.convert_back((np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2))), "YCbCr")


class TestGeometric:
    def _img(self, seed=0, h=13, w=17):
        return np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)

    def test_flip_h_involution(self):
        img = self._img(1)
        assert np.array_equal(imaging.flip_h(imaging.flip_h(img)), img)

    def test_flip_v_involution(self):
        img = self._img(2)
        assert np.array_equal(imaging.flip_v(imaging.flip_v(img)), img)

    def test_rot90_has_order_four(self):
        img = self._img(3)
        out = img
        for _ in range(4):
            out = imaging.rot90(out)
        assert np.array_equal(out, img)

    def test_identity_affine_is_exact(self):
        img = self._img(4)
        identity = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        assert np.array_equal(imaging.affine(img, identity), img)

    def test_flips_preserve_pixel_multiset(self):
        img = self._img(5)
        flat = np.sort(img.reshape(-1, 3), axis=0)
        for op in ("flip_h", "flip_v", "rot90"):
            out = imaging.transform_geometric(img, op)
            assert np.array_equal(np.sort(out.reshape(-1, 3), axis=0), flat)

    def test_singular_affine_rejected(self):
        img = self._img(6)
        with pytest.raises(ValueError):
            imaging.affine(img, np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]]))

    def test_translation_shifts_content(self):
        img = self._img(7, h=8, w=8)
        shift = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])
        out = imaging.affine(img, shift)
        assert np.array_equal(out[:, 2:], img[:, :-2])


class TestValidation:
    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            imaging.ensure_rgb8(np.zeros((4, 4), dtype=np.uint8))

    def test_wrong_dtype_rejected(self):
        with pytest.raises(ValueError):
            imaging.ensure_rgb8(np.zeros((4, 4, 3), dtype=np.float32))

import numpy as np
import pytest

from hemascreen import dataset, imaging
from hemascreen.dataset import AugmentPlanError


def in_triangle(q, a, b, c, eps=1e-9):
    def cross(o, p1, p2):
        return (p1[0] - o[0]) * (p2[1] - o[1]) - (p1[1] - o[1]) * (p2[0] - o[0])

    d1, d2, d3 = cross(q, a, b), cross(q, b, c), cross(q, c, a)
    has_neg = (d1 < -eps) or (d2 < -eps) or (d3 < -eps)
    has_pos = (d1 > eps) or (d2 > eps) or (d3 > eps)
    return not (has_neg and has_pos)


def in_convex_hull(q, points):
    """Brute force via Caratheodory: q must lie in some triangle of the points."""
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if in_triangle(q, points[i], points[j], points[k]):
                    return True
    return False


class TestAugment:
    def _img(self):
        return np.random.default_rng(51).integers(0, 256, (8, 8, 3), dtype=np.uint8)

    def test_plan_produces_one_image_per_entry(self):
        img = self._img()
        out = dataset.augment_images(img, ["flip_h", "flip_v", "rot90"])
        assert len(out) == 3
        flat = np.sort(img.reshape(-1, 3), axis=0)
        for o in out:
            assert np.array_equal(np.sort(o.reshape(-1, 3), axis=0), flat)

    def test_identity_affine_is_bit_exact(self):
        img = self._img()
        out = dataset.augment_images(img, [{"affine": [[1, 0, 0], [0, 1, 0]]}])
        assert np.array_equal(out[0], img)

    def test_blur_directive_rejected_at_parse(self):
        with pytest.raises(AugmentPlanError, match="intensities"):
            dataset.parse_augment_plan(["flip_h", "gaussian_blur"])

    def test_unknown_op_rejected(self):
        with pytest.raises(AugmentPlanError):
            dataset.parse_augment_plan(["rot45"])

    def test_empty_plan_rejected(self):
        with pytest.raises(AugmentPlanError):
            dataset.parse_augment_plan([])


class TestSmote:
    def test_two_points_interpolate_on_segment(self):
        pts = np.array([[0.0, 0.0], [2.0, 4.0]])
        out = dataset.smote(pts, k=1, n_new=50, seed=1)
        for q in out:
            # q = (1 - t) * p0 + t * p1 for t in [0, 1]
            t = q[0] / 2.0
            assert 0.0 <= t <= 1.0
            assert q[1] == pytest.approx(4.0 * t, abs=1e-9)

    def test_zero_requested_returns_empty(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert dataset.smote(pts, 1, 0, seed=2).shape == (0, 2)

    def test_hull_membership_of_planted_points(self):
        pts = np.array([[0.0, 0.0], [4.0, 0.5], [5.0, 3.0], [1.5, 4.0], [-1.0, 2.0]])
        out = dataset.smote(pts, k=2, n_new=200, seed=42)
        for q in out:
            assert in_convex_hull(q, pts)

    def test_too_small_minority_rejected(self):
        with pytest.raises(ValueError):
            dataset.smote(np.array([[1.0, 2.0]]), 1, 5, seed=3)

    def test_seeded_determinism(self):
        pts = np.random.default_rng(4).normal(size=(6, 3))
        a = dataset.smote(pts, 2, 10, seed=9)
        b = dataset.smote(pts, 2, 10, seed=9)
        assert np.array_equal(a, b)


class TestRose:
    def test_zero_bandwidth_copies_input_rows(self):
        rows = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = dataset.rose(rows, 0.0, 20, seed=5)
        for q in out:
            assert any(np.array_equal(q, r) for r in rows)

    def test_constant_column_stays_constant(self):
        rows = np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]])
        out = dataset.rose(rows, 0.5, 100, seed=6)
        assert np.all(out[:, 1] == 7.0)

    def test_sample_mean_matches_input_mean(self):
        rng = np.random.default_rng(7)
        rows = rng.normal(5.0, 2.0, size=(40, 3))
        out = dataset.rose(rows, 0.2, 10_000, seed=8)
        total_var = rows.var(axis=0) + (0.2 * rows.std(axis=0, ddof=1)) ** 2
        se = np.sqrt(total_var / len(out))
        assert np.all(np.abs(out.mean(axis=0) - rows.mean(axis=0)) < 3 * se)


class TestBalance:
    def test_counts_equal_after_balancing(self):
        rng = np.random.default_rng(9)
        rows = rng.normal(size=(30, 4))
        labels = ["a"] * 18 + ["b"] * 8 + ["c"] * 4
        for method in ("smote", "rose"):
            out_rows, out_labels = dataset.balance_classes(rows, labels, method, seed=10)
            counts = {c: out_labels.count(c) for c in "abc"}
            assert max(counts.values()) - min(counts.values()) <= 1
            assert len(out_rows) == len(out_labels)

    def test_min_count_floor(self):
        rows = np.random.default_rng(11).normal(size=(9, 2))
        labels = ["a"] * 3 + ["b"] * 3 + ["c"] * 3
        _, out_labels = dataset.balance_classes(rows, labels, "smote", seed=12, min_count=11)
        assert all(out_labels.count(c) == 11 for c in "abc")


class TestSplit:
    def test_disjoint_and_stratified(self):
        ids = [f"p{i}" for i in range(50)]
        classes = ["severe"] * 10 + ["mild"] * 15 + ["non_anaemic"] * 25
        train, test = dataset.stratified_patient_split(ids, classes, 0.2, seed=13)
        assert not set(train) & set(test)
        assert len(train) + len(test) == 50
        assert 8 <= len(test) <= 12
        test_classes = [classes[ids.index(p)] for p in test]
        assert set(test_classes) == {"severe", "mild", "non_anaemic"}

    def test_deterministic(self):
        ids = [f"p{i}" for i in range(20)]
        classes = ["a", "b"] * 10
        assert dataset.stratified_patient_split(ids, classes, 0.25, seed=14) == \
            dataset.stratified_patient_split(ids, classes, 0.25, seed=14)


class TestSynthCorpus:
    def test_same_seed_is_bit_identical(self):
        a = dataset.synth_corpus(3, seed=15)
        b = dataset.synth_corpus(3, seed=15)
        for pa, pb in zip(a, b):
            assert pa.hb == pb.hb
            for region in pa.images:
                assert np.array_equal(pa.images[region], pb.images[region])

    def test_high_hb_has_higher_roi_redness(self):
        patients = dataset.synth_corpus(40, seed=16)
        lo = min(patients, key=lambda p: p.hb)
        hi = max(patients, key=lambda p: p.hb)
        def roi_a_mean(p):
            _, a, _ = imaging.rgb_to_lab(p.images["nailbed"])
            return a[p.roi_masks["nailbed"]].mean()
        assert roi_a_mean(hi) > roi_a_mean(lo)

    def test_planted_signal_correlates(self):
        patients = dataset.synth_corpus(100, seed=17)
        hbs, a_means = [], []
        for p in patients:
            _, a, _ = imaging.rgb_to_lab(p.images["conjunctiva"])
            hbs.append(p.hb)
            a_means.append(a[p.roi_masks["conjunctiva"]].mean())
        r = np.corrcoef(hbs, a_means)[0, 1]
        assert r >= 0.95

    def test_write_read_round_trip(self, tmp_path):
        patients = dataset.synth_corpus(2, seed=18)
        dataset.write_corpus(patients, tmp_path / "corpus")
        loaded = dataset.read_corpus(tmp_path / "corpus")
        assert [p.patient_id for p in loaded] == [p.patient_id for p in patients]
        for orig, back in zip(patients, loaded):
            assert back.hb == pytest.approx(orig.hb)
            assert back.sex == orig.sex and back.pregnant == orig.pregnant
            for region in orig.images:
                assert np.array_equal(back.images[region], orig.images[region])

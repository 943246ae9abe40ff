import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unimix.cloud import (
    CloudError,
    LabelArray,
    PointCloud,
    concat,
    filter_by_mask,
    normalize_axis,
    to_cylinder,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def random_pair(rng, n, num_classes=6):
    cloud = PointCloud(rng.normal(size=(n, 4)))
    labels = LabelArray(rng.integers(0, num_classes, n), num_classes)
    return cloud, labels


class TestPointCloud:
    def test_rejects_non_finite(self):
        pts = np.zeros((3, 4))
        pts[1, 2] = np.nan
        with pytest.raises(CloudError, match="point 1"):
            PointCloud(pts)

    def test_rejects_wrong_shape(self):
        with pytest.raises(CloudError):
            PointCloud(np.zeros((3, 3)))

    def test_views_agree_on_length(self):
        cloud = PointCloud(np.arange(20.0).reshape(5, 4))
        assert len(cloud) == len(cloud.x) == len(cloud.intensity) == cloud.xyz.shape[0] == 5

    def test_empty(self):
        assert len(PointCloud.empty()) == 0
        assert len(PointCloud([])) == 0

    def test_immutable(self):
        cloud = PointCloud(np.zeros((2, 4)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0


class TestLabelArray:
    def test_out_of_range(self):
        with pytest.raises(CloudError, match="index 2"):
            LabelArray([1, 2, 9], num_classes=6)

    def test_ignore_outside_range_is_allowed(self):
        lab = LabelArray([0, 1, 255], num_classes=2, ignore_id=255)
        assert lab.valid().tolist() == [True, True, False]


class TestToCylinder:
    @pytest.mark.parametrize(
        "point, expected",
        [
            ((3, 4, 1, 0.2), (5.0, math.atan2(4, 3), 1.0)),
            ((0, 0, 2, 0.2), (0.0, 0.0, 2.0)),
            ((-1, 0, 0, 0.2), (1.0, math.pi, 0.0)),
        ],
    )
    def test_examples(self, point, expected):
        cyl = to_cylinder(PointCloud([point]))
        np.testing.assert_allclose([cyl.rho[0], cyl.theta[0], cyl.z[0]], expected, atol=1e-12)

    def test_three_four_five(self):
        assert to_cylinder(PointCloud([(3, 4, 1, 0)])).theta[0] == pytest.approx(0.927295218, abs=1e-9)

    def test_negative_zero_origin(self):
        cyl = to_cylinder(PointCloud([(-0.0, -0.0, 0, 0)]))
        assert cyl.theta[0] == 0.0

    @given(arrays(np.float64, (20, 4), elements=finite))
    def test_roundtrip_and_ranges(self, pts):
        cloud = PointCloud(pts)
        cyl = to_cylinder(cloud)
        assert (cyl.rho >= 0).all()
        assert (np.abs(cyl.theta) <= math.pi).all()
        np.testing.assert_allclose(cyl.to_cartesian()[:, :2], pts[:, :2], atol=1e-9)


class TestNormalizeAxis:
    def test_examples(self):
        n = normalize_axis([2, 4, 6])
        np.testing.assert_allclose(n.values, [0, 0.5, 1])
        assert (n.min_raw, n.max_raw) == (2, 6)
        np.testing.assert_array_equal(normalize_axis([5, 5, 5]).values, [0, 0, 0])
        np.testing.assert_allclose(normalize_axis([-1, 0, 3]).values, [0, 0.25, 1])

    def test_empty(self):
        n = normalize_axis([])
        assert n.values.size == 0 and (n.min_raw, n.max_raw) == (0.0, 0.0)

    @given(st.lists(finite, min_size=2, max_size=50))
    def test_inverse_and_monotone(self, values):
        v = np.array(values)
        n = normalize_axis(v)
        if n.max_raw > n.min_raw:
            np.testing.assert_allclose(n.denormalize(), v, rtol=1e-9, atol=1e-9 * np.abs(v).max())
        order = np.argsort(v, kind="stable")
        assert (np.diff(n.values[order]) >= 0).all()
        assert ((n.values >= 0) & (n.values <= 1)).all()


class TestFilterAndConcat:
    def test_filter_example(self):
        rng = np.random.default_rng(0)
        cloud, labels = random_pair(rng, 5)
        sub, sub_lab = filter_by_mask(cloud, labels, np.array([1, 0, 1, 0, 0]), keep=True)
        np.testing.assert_array_equal(sub.points, cloud.points[[0, 2]])
        np.testing.assert_array_equal(sub_lab.labels, labels.labels[[0, 2]])

    def test_all_false_mask(self):
        cloud, labels = random_pair(np.random.default_rng(1), 7)
        sub, _ = filter_by_mask(cloud, labels, np.zeros(7, bool), keep=True)
        assert len(sub) == 0

    def test_length_mismatch(self):
        cloud, labels = random_pair(np.random.default_rng(1), 4)
        with pytest.raises(CloudError):
            filter_by_mask(cloud, labels, np.zeros(3, bool))

    def test_partition_over_random_masks(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(0, 40))
            cloud, labels = random_pair(rng, n)
            mask = rng.random(n) < 0.4
            kept, kept_lab = filter_by_mask(cloud, labels, mask, keep=True)
            rest, rest_lab = filter_by_mask(cloud, labels, mask, keep=False)
            assert len(kept) + len(rest) == n
            np.testing.assert_array_equal(kept.points, cloud.points[mask])
            np.testing.assert_array_equal(rest.points, cloud.points[~mask])
            np.testing.assert_array_equal(rest_lab.labels, labels.labels[~mask])

    def test_concat_identity(self):
        x = random_pair(np.random.default_rng(3), 6)
        empty = (PointCloud.empty(), LabelArray([], 6))
        for out in (concat(empty, x), concat(x, empty)):
            np.testing.assert_array_equal(out[0].points, x[0].points)
            np.testing.assert_array_equal(out[1].labels, x[1].labels)

    def test_concat_lengths_and_order(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            a = random_pair(rng, int(rng.integers(0, 30)))
            b = random_pair(rng, int(rng.integers(0, 30)))
            cloud, labels = concat(a, b)
            assert len(cloud) == len(labels) == len(a[0]) + len(b[0])
            np.testing.assert_array_equal(cloud.points[: len(a[0])], a[0].points)
            np.testing.assert_array_equal(labels.labels[len(a[0]):], b[1].labels)

    def test_concat_num_classes_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(CloudError, match="num_classes"):
            concat(random_pair(rng, 3, 6), random_pair(rng, 3, 20))


@settings(max_examples=50)
@given(st.integers(0, 60), st.integers(0, 2**31 - 1))
def test_filter_partition_is_order_preserving(n, seed):
    rng = np.random.default_rng(seed)
    cloud, labels = random_pair(rng, n)
    mask = rng.random(n) < 0.5
    kept, _ = filter_by_mask(cloud, labels, mask, True)
    rest, _ = filter_by_mask(cloud, labels, mask, False)
    merged = np.empty_like(cloud.points)
    merged[mask] = kept.points
    merged[~mask] = rest.points
    np.testing.assert_array_equal(merged, cloud.points)

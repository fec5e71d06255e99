"""Normalization and distance-matrix behaviour against scalar-loop oracles."""

import math

import numpy as np
import pytest

from heatcluster.heatspace import (
    DistanceMatrix,
    RectDistanceMatrix,
    distance_matrix,
    heatmap_distance,
    improvement_distance_matrix,
    normalize_layer,
)


def random_maps(n, shape=(4, 4), seed=0, scale=1.0, shift=0.0):
    rng = np.random.default_rng(seed)
    return {f"h{i}": shift + scale * rng.normal(size=shape) for i in range(n)}


class TestNormalizeLayer:
    def test_three_values(self):
        maps = {"a": np.array([[2.0]]), "b": np.array([[4.0]]), "c": np.array([[6.0]])}
        normed, stats = normalize_layer(maps, layer=1)
        assert (stats.min, stats.max, stats.layer) == (2.0, 6.0, 1)
        assert normed["a"][0, 0] == 0.0
        assert normed["b"][0, 0] == 0.5
        assert normed["c"][0, 0] == 1.0

    def test_degenerate_layer_maps_to_zero(self):
        maps = {"a": np.full((2, 2), 7.0), "b": np.full((2, 2), 7.0)}
        normed, stats = normalize_layer(maps)
        assert (stats.min, stats.max) == (7.0, 7.0)
        for v in normed.values():
            assert np.array_equal(v, np.zeros((2, 2)))

    def test_stats_match_linear_scan_oracle(self):
        maps = random_maps(2, seed=3)
        _, stats = normalize_layer(maps)
        lo = math.inf
        hi = -math.inf
        for v in maps.values():
            for x in v.ravel():
                lo = min(lo, x)
                hi = max(hi, x)
        assert stats.min == lo and stats.max == hi

    def test_entries_in_unit_interval_and_order_preserved(self):
        maps = random_maps(5, seed=4)
        normed, _ = normalize_layer(maps)
        raw = np.concatenate([maps[k].ravel() for k in maps])
        out = np.concatenate([normed[k].ravel() for k in maps])
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.array_equal(np.argsort(raw, kind="stable"), np.argsort(out, kind="stable"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_layer({})


class TestHeatmapDistance:
    def test_identical_is_zero(self):
        a = np.arange(6.0).reshape(2, 3)
        assert heatmap_distance(a, a.copy()) == 0.0

    def test_three_four_five(self):
        assert heatmap_distance(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 5.0

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        acc = 0.0
        for i in range(4):
            for j in range(4):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(heatmap_distance(a, b) - math.sqrt(acc)) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            heatmap_distance(np.zeros((2, 2)), np.zeros((2, 3)))


class TestDistanceMatrix:
    def test_three_images_pairs(self):
        maps = random_maps(3, seed=2)
        dm = distance_matrix(maps)
        assert dm.condensed.shape == (3,)
        assert dm.ids == list(maps)

    def test_square_equals_transpose(self):
        dm = distance_matrix(random_maps(6, seed=5))
        sq = dm.square()
        assert np.array_equal(sq, sq.T)
        assert np.array_equal(np.diag(sq), np.zeros(6))

    def test_matches_double_loop_oracle(self):
        maps = random_maps(10, seed=6)
        dm = distance_matrix(maps)
        ids = dm.ids
        for i in range(10):
            for j in range(10):
                expected = heatmap_distance(maps[ids[i]], maps[ids[j]])
                assert abs(dm.value(i, j) - expected) < 1e-12

    def test_needs_two(self):
        with pytest.raises(ValueError):
            distance_matrix(random_maps(1))

    def test_from_square_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            DistanceMatrix.from_square(np.array([[0.0, 1.0], [2.0, 0.0]]))
        bad = np.array([[0.0, np.nan], [np.nan, 0.0]])
        with pytest.raises(ValueError, match="NaN"):
            DistanceMatrix.from_square(bad)

    def test_normalized_distances_invariant_under_affine_rescale(self):
        base = random_maps(6, seed=7)
        scaled = {k: 3.5 * v + 11.0 for k, v in base.items()}
        dm1 = distance_matrix(normalize_layer(base)[0])
        dm2 = distance_matrix(normalize_layer(scaled)[0])
        np.testing.assert_allclose(dm1.condensed, dm2.condensed, atol=1e-9)

    def test_save_load_round_trip(self, tmp_path):
        dm = distance_matrix(random_maps(5, seed=8), layer=3)
        path = tmp_path / "dm.bin"
        dm.save(path)
        loaded = DistanceMatrix.load(path)
        assert loaded.ids == dm.ids
        assert loaded.layer == 3 and loaded.normalized
        assert np.array_equal(loaded.condensed, dm.condensed)


class TestImprovementDistanceMatrix:
    def test_duplicate_image_has_zero_column(self):
        test_maps = random_maps(3, seed=9)
        imp = {"dup": test_maps["h1"].copy(), "other": test_maps["h0"] + 1.0}
        rect = improvement_distance_matrix(imp, test_maps)
        assert rect.values[0, 1] == 0.0
        assert np.argmin(rect.values[0]) == 1

    def test_shape(self):
        rect = improvement_distance_matrix(random_maps(2, seed=10), random_maps(3, seed=11))
        assert rect.values.shape == (2, 3)

    def test_uses_raw_not_normalized_heatmaps(self):
        test_maps = random_maps(4, seed=12, scale=5.0, shift=2.0)
        imp = random_maps(3, seed=13, scale=5.0, shift=2.0)
        rect = improvement_distance_matrix(imp, test_maps)
        # Raw-heatmap oracle agrees...
        for i, rid in enumerate(rect.row_ids):
            for j, cid in enumerate(rect.col_ids):
                assert abs(rect.values[i, j] - heatmap_distance(imp[rid], test_maps[cid])) < 1e-12
        # ...while distances over normalized heatmaps would differ.
        normed_test, stats = normalize_layer(test_maps)
        assert (stats.min, stats.max) != (0.0, 1.0)
        span = stats.max - stats.min
        normed_imp = {k: (v - stats.min) / span for k, v in imp.items()}
        normed_d = heatmap_distance(
            normed_imp[rect.row_ids[0]], normed_test[rect.col_ids[0]]
        )
        assert abs(rect.values[0, 0] - normed_d) > 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            improvement_distance_matrix(
                {"a": np.zeros((2, 2))}, {"b": np.zeros((3, 2))}
            )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            improvement_distance_matrix({}, random_maps(2))

    def test_save_load_round_trip(self, tmp_path):
        rect = improvement_distance_matrix(random_maps(3, seed=14), random_maps(4, seed=15))
        path = tmp_path / "rect.bin"
        rect.save(path)
        loaded = RectDistanceMatrix.load(path)
        assert loaded.row_ids == rect.row_ids
        assert loaded.col_ids == rect.col_ids
        assert np.array_equal(loaded.values, rect.values)

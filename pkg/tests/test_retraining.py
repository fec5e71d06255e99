"""Bootstrap balancing and warm-start retraining."""

import numpy as np
import pytest

from heatcluster.micronet import (
    Dense,
    LabeledDataset,
    Network,
    ReLU,
    TrainConfig,
    evaluate,
    train,
)
from heatcluster.micronet.network import CLASSIFICATION
from heatcluster.retraining import (
    BalancedUnsafeSet,
    balance,
    build_union_dataset,
    read_labels_csv,
    retrain,
)
from heatcluster.selection import Selected, UnsafeSet


def make_unsafe(sizes: dict[int, int]) -> UnsafeSet:
    selected = {
        c: [Selected(f"c{c}_i{k}", 1, 0.1 * k) for k in range(n)] for c, n in sizes.items()
    }
    return UnsafeSet({c: n for c, n in sizes.items()}, selected)


class TestBalance:
    def test_three_five_becomes_five_five(self):
        balanced = balance(make_unsafe({0: 3, 1: 5}), seed=0)
        assert {c: len(v) for c, v in balanced.clusters.items()} == {0: 5, 1: 5}
        # Duplicates come from the cluster's own members.
        assert set(balanced.clusters[0]) == {f"c0_i{k}" for k in range(3)}

    def test_equal_sizes_identity(self):
        unsafe = make_unsafe({0: 4, 1: 4})
        balanced = balance(unsafe, seed=1)
        for c in (0, 1):
            assert sorted(balanced.clusters[c]) == sorted(unsafe.image_ids(c))

    def test_singleton_duplicated_to_max(self):
        balanced = balance(make_unsafe({0: 1, 1: 4}), seed=2)
        assert balanced.clusters[0] == ["c0_i0"] * 4

    def test_originals_retained_at_least_once(self):
        unsafe = make_unsafe({0: 2, 1: 7, 2: 3})
        balanced = balance(unsafe, seed=3)
        for c in (0, 1, 2):
            assert set(unsafe.image_ids(c)) <= set(balanced.clusters[c])
            assert len(balanced.clusters[c]) == 7

    def test_empty_cluster_skipped_with_warning(self, caplog):
        unsafe = make_unsafe({0: 0, 1: 3})
        with caplog.at_level("WARNING"):
            balanced = balance(unsafe, seed=4)
        assert 0 not in balanced.clusters
        assert "skipped" in caplog.text

    def test_all_empty_rejected(self):
        with pytest.raises(ValueError):
            balance(make_unsafe({0: 0, 1: 0}))

    def test_deterministic(self):
        unsafe = make_unsafe({0: 2, 1: 6})
        assert balance(unsafe, seed=5).clusters == balance(unsafe, seed=5).clusters


def two_blob_dataset(n_main=40, n_rare=6, seed=0):
    """Class 1 has a rare subpopulation far from its main blob."""
    rng = np.random.default_rng(seed)
    main0 = rng.normal((-2.0, 0.0), 0.3, size=(n_main, 2))
    main1 = rng.normal((2.0, 0.0), 0.3, size=(n_main, 2))
    rare1 = rng.normal((0.0, 3.0), 0.2, size=(n_rare, 2))
    images = np.concatenate([main0, main1, rare1])
    labels = np.array([0] * n_main + [1] * (n_main + n_rare))
    ids = [f"d{i}" for i in range(len(labels))]
    return LabeledDataset(ids, images, labels)


def make_net(seed=0):
    net = Network([Dense(2, 12), ReLU(), Dense(12, 2)], CLASSIFICATION, (2,), ["a", "b"])
    net.init_params(np.random.default_rng(seed))
    return net


class TestRetrain:
    def test_empty_set_zero_epochs_unchanged(self):
        data = two_blob_dataset()
        net = train(make_net(), data, TrainConfig(3, 0.1, 8))
        balanced = BalancedUnsafeSet({})
        out = retrain(net, data, balanced, {}, {}, TrainConfig(0, 0.1, 8))
        for a, b in zip(net.layers, out.layers):
            if hasattr(a, "weight"):
                assert np.array_equal(a.weight, b.weight)

    def test_union_contains_original_exactly_once(self):
        data = two_blob_dataset()
        balanced = BalancedUnsafeSet({0: ["x0", "x1", "x0"]})
        images = {"x0": np.array([0.0, 3.0]), "x1": np.array([0.1, 2.9])}
        labels = {"x0": 1, "x1": 1}
        union = build_union_dataset(data, balanced, images, labels)
        assert len(union) == len(data) + 3
        assert union.ids[: len(data)] == data.ids
        assert union.ids.count("x0") == 2  # the balanced duplicates only

    def test_missing_label_rejected(self):
        data = two_blob_dataset()
        balanced = BalancedUnsafeSet({0: ["x0"]})
        with pytest.raises(ValueError, match="label missing"):
            build_union_dataset(data, balanced, {"x0": np.zeros(2)}, {})

    def test_retraining_lifts_rare_subgroup_accuracy(self):
        # Train without the rare subpopulation, then retrain on unsafe images
        # drawn from it: the subgroup accuracy must improve.
        train_data = two_blob_dataset(n_main=40, n_rare=0, seed=1)
        rng = np.random.default_rng(2)
        rare_imgs = {f"u{i}": rng.normal((0.0, 3.0), 0.2, size=2) for i in range(8)}
        rare_eval = LabeledDataset(
            list(rare_imgs), np.stack(list(rare_imgs.values())), np.full(8, 1, dtype=np.int64)
        )
        base = train(make_net(), train_data, TrainConfig(40, 0.1, 8, seed=0))
        before = evaluate(base, rare_eval).accuracy
        balanced = BalancedUnsafeSet({0: list(rare_imgs)})
        labels = {i: 1 for i in rare_imgs}
        after_net = retrain(
            base, train_data, balanced, rare_imgs, labels, TrainConfig(40, 0.1, 8, seed=3)
        )
        after = evaluate(after_net, rare_eval).accuracy
        assert after >= before
        assert after == 1.0
        # The original blobs stay learned.
        assert evaluate(after_net, train_data).accuracy >= 0.95

    def test_seeded_determinism_end_to_end(self):
        data = two_blob_dataset()
        base = train(make_net(), data, TrainConfig(5, 0.1, 8, seed=0))
        unsafe = make_unsafe({0: 2, 1: 5})
        images = {
            s.image_id: np.random.default_rng(hash(s.image_id) % 2**32).normal(size=2)
            for c in unsafe.selected.values()
            for s in c
        }
        labels = {i: 0 for i in images}
        nets = []
        for _ in range(2):
            balanced = balance(unsafe, seed=7)
            nets.append(
                retrain(base, data, balanced, images, labels, TrainConfig(4, 0.1, 8, seed=9))
            )
        for a, b in zip(nets[0].layers, nets[1].layers):
            if hasattr(a, "weight"):
                assert np.array_equal(a.weight, b.weight)
                assert np.array_equal(a.bias, b.bias)


def test_read_labels_csv(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("image_id,label\nimg_a,3\nimg_b,0\n")
    assert read_labels_csv(path) == {"img_a": 3, "img_b": 0}

import numpy as np
import pytest

from ensemble_forge import lab
from ensemble_forge.errors import ForgeError, InsufficientData, MalformedFile, NonFiniteLoss
from ensemble_forge.lab import (
    BlobSpec,
    TrainConfig,
    build_pool,
    class_distances,
    fit_nngk,
    fold_splits,
    generate_blobs,
    predict_nngk,
    ring_means,
    train_embeddings,
)
from ensemble_forge.losses import CenterSet, EmbeddingBatch, nngk_neighbor_prob


def blobs(separation=10.0, classes=3, per_class=40, seed=0, stddev=1.0):
    return generate_blobs(BlobSpec(ring_means(classes, 2, separation), stddev, per_class, seed))


def test_zero_stddev_gives_means():
    means = ring_means(3)
    b = generate_blobs(BlobSpec(means, 0.0, 5, seed=1))
    np.testing.assert_array_equal(b.vectors, np.repeat(means, 5, axis=0))


def test_per_class_counts():
    b = blobs(per_class=50)
    assert len(b) == 150
    assert np.bincount(b.labels).tolist() == [50, 50, 50]


def test_sample_means_within_clt_bound():
    n, sd = 400, 2.0
    means = ring_means(4, 3)
    b = generate_blobs(BlobSpec(means, sd, n, seed=7))
    for c in range(4):
        err = np.abs(b.vectors[b.labels == c].mean(axis=0) - means[c])
        assert np.all(err <= 4 * sd / np.sqrt(n))


def test_generation_is_deterministic():
    assert np.array_equal(blobs(seed=3).vectors, blobs(seed=3).vectors)
    assert not np.array_equal(blobs(seed=3).vectors, blobs(seed=4).vectors)


def test_blob_spec_validation():
    with pytest.raises(ForgeError):
        BlobSpec([[0.0, 0.0]], 1.0, 5)
    with pytest.raises(ForgeError):
        TrainConfig(loss="hinge")
    with pytest.raises(ForgeError):
        TrainConfig(batch_size=1)


@pytest.mark.parametrize("loss", lab.LOSSES)
def test_zero_learning_rate_is_identity(loss):
    data = blobs(per_class=10)
    out = train_embeddings(data, TrainConfig(loss=loss, learning_rate=0.0, steps=3))
    np.testing.assert_array_equal(out.embeddings.vectors, data.vectors)
    held = blobs(per_class=5, seed=9)
    np.testing.assert_array_equal(out.transform(held).vectors, held.vectors)
    assert len(out.loss_trace) == 3


def test_triplet_pulls_classes_together():
    # overlapping blobs, so the hinge has active triplets to work on
    data = blobs(separation=4.0, per_class=30, seed=1)
    before, _ = class_distances(data)
    after, _ = class_distances(train_embeddings(data, TrainConfig(loss="triplet", seed=1)).embeddings)
    assert after < before


def test_contrastive_improves_ratio():
    data = blobs(separation=3.0, classes=2, per_class=30, seed=2)
    intra0, inter0 = class_distances(data)
    out = train_embeddings(data, TrainConfig(loss="contrastive", seed=2)).embeddings
    intra1, inter1 = class_distances(out)
    assert intra1 / inter1 < intra0 / inter0


def test_divergence_raises_with_trace():
    data = blobs(separation=3.0, per_class=10)
    with pytest.raises(NonFiniteLoss) as info:
        train_embeddings(data, TrainConfig(loss="contrastive", learning_rate=1e200, steps=20))
    assert len(info.value.trace) >= 1


def test_fit_nngk_all_points_is_training_set():
    data = blobs(per_class=10)
    cs = fit_nngk(data, len(data), phi=1.0)
    assert sorted(map(tuple, cs.centers.tolist())) == sorted(map(tuple, data.vectors.tolist()))
    assert np.all(cs.weights == 1.0)


def test_fit_nngk_stratifies_and_validates():
    data = blobs(per_class=20)
    cs = fit_nngk(data, 7, phi=1.0, seed=3)
    assert set(np.bincount(cs.labels).tolist()) <= {2, 3} and len(cs) == 7
    with pytest.raises(InsufficientData):
        fit_nngk(data, 2, phi=1.0)
    with pytest.raises(InsufficientData):
        fit_nngk(data, 61, phi=1.0)


def test_class_mean_centers_classify_held_out_blobs():
    means = ring_means(3)
    cs = CenterSet(means, [0, 1, 2], np.ones(3), phi=1.0)
    held = generate_blobs(BlobSpec(means, 1.0, 100, seed=11))
    assert np.mean(predict_nngk(cs, 1, held) == held.labels) >= 0.95
    assert np.mean(predict_nngk(cs, None, held) == held.labels) >= 0.95


def test_weight_training_keeps_weights_nonnegative():
    data = blobs(separation=3.0, per_class=15, seed=5)
    cs = fit_nngk(data, 12, phi=1.0, k=4, weight_steps=15, seed=5, learning_rate=5.0)
    assert np.all(cs.weights >= 0)
    assert not np.all(cs.weights == 1.0)


def test_predict_at_center_and_tie_rule():
    cs = CenterSet([[0.0, 0.0], [2.0, 0.0]], [1, 0], [1.0, 1.0], phi=1.0)
    at_center = EmbeddingBatch([[0.0, 0.0], [2.0, 0.0]], [1, 0])
    assert predict_nngk(cs, 1, at_center).tolist() == [1, 0]
    midpoint = EmbeddingBatch([[1.0, 0.0]], [0])
    assert predict_nngk(cs, 2, midpoint).tolist() == [0]


def test_predict_matches_probability_oracle():
    rng = np.random.default_rng(8)
    cs = CenterSet(rng.normal(size=(12, 2)) * 3, rng.integers(0, 3, 12), rng.uniform(0.1, 2, 12), phi=1.2)
    batch = generate_blobs(BlobSpec(ring_means(3, 2, 3.0), 1.5, 50, seed=8))
    for k in (None, 3):
        expected = [max(range(3), key=lambda r: (nngk_neighbor_prob(x, cs, k or 12, r), -r))
                    for x in batch.vectors]
        assert predict_nngk(cs, k, batch).tolist() == expected


def test_predictions_invariant_to_weight_scale():
    rng = np.random.default_rng(9)
    cs = CenterSet(rng.normal(size=(9, 2)), np.arange(9) % 3, rng.uniform(0.1, 1, 9), phi=0.7)
    batch = blobs(separation=2.0, per_class=20)
    for s in (0.01, 3.0, 1e4):
        assert np.array_equal(predict_nngk(cs, 4, batch), predict_nngk(cs.with_weights(cs.weights * s), 4, batch))


def test_fold_splits_proportions():
    labels = np.repeat(np.arange(4), 50)
    splits = fold_splits(labels, 5, seed=1)
    assert len(splits) == 5
    train_counts = np.zeros(200, dtype=int)
    for s in splits:
        parts = [s["train"], s["validation"], s["test"]]
        assert sorted(np.concatenate(parts).tolist()) == list(range(200))
        assert [p.size for p in parts] == [40, 40, 120]
        assert np.bincount(labels[s["train"]]).tolist() == [10] * 4
        train_counts[s["train"]] += 1
    assert np.all(train_counts == 1)
    with pytest.raises(ForgeError):
        fold_splits(labels, 2)


def _splits(seed=0):
    data = blobs(separation=5.0, per_class=25, seed=seed)
    idx = fold_splits(data.labels, 5, seed)[0]
    return {k: data.take(v) for k, v in idx.items()}, idx


def test_build_pool_single_spec():
    splits, _ = _splits()
    pool = build_pool([TrainConfig(loss="triplet", steps=5)], splits)
    assert set(pool) == {"train", "validation", "test"}
    assert all(t.num_classifiers == 1 for t in pool.values())


def test_build_pool_six_losses_aligned_and_deterministic():
    splits, ids = _splits(1)
    specs = lab.default_specs(seed=1, steps=10)
    a = build_pool(specs, splits, ids)
    b = build_pool(specs, splits, ids)
    for split, table in a.items():
        assert table.classifier_names == lab.LOSSES
        assert table.sample_ids.tolist() == ids[split].tolist()
        assert np.array_equal(table.truth, splits[split].labels)
        assert table == b[split]
    assert np.mean(a["test"].hits()) > 0.8


def test_build_pool_deduplicates_names():
    splits, _ = _splits()
    pool = build_pool([TrainConfig(steps=2), TrainConfig(steps=2)], splits)
    assert pool["test"].classifier_names == ("triplet", "triplet_2")
    with pytest.raises(ForgeError):
        build_pool([], splits)


def test_embedding_csv_round_trip(tmp_path):
    b = blobs(per_class=4, seed=12)
    path = tmp_path / "emb.csv"
    lab.save_embeddings(b, path)
    back = lab.load_embeddings(path)
    np.testing.assert_array_equal(back.vectors, b.vectors)
    np.testing.assert_array_equal(back.labels, b.labels)
    path.write_text("x,y\n1,2\n")
    with pytest.raises(MalformedFile):
        lab.load_embeddings(path)

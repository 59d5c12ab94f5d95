import json

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from classavg.cluster import (
    InvalidKError,
    assign_only,
    d2_sample_index,
    fit,
    kmeanspp_init,
    load_run,
    save_run,
)
from classavg.cluster import _update_centroids
from classavg.metrics import RotationGrid, StackSet, rotinv_w1

from conftest import make_three_blob_dataset


def test_toy_groups_are_separated_under_the_metric(three_blob):
    # oracle for the clustering tests: brute-force rotation-invariant
    # distances must separate groups by a wide margin
    images, labels = three_blob
    intra, inter = [], []
    for i in range(0, 30, 4):
        for j in range(i + 1, 30, 4):
            d = rotinv_w1(images[i].astype(np.float64), images[j].astype(np.float64), m=8, pixel_size=2 / 16)
            (intra if labels[i] == labels[j] else inter).append(d)
    assert max(intra) * 3 < min(inter)


@pytest.mark.parametrize("metric", ["l2", "wemd"])
def test_three_blob_ari_perfect_over_seeds(metric, three_blob):
    images, labels = three_blob
    for seed in range(10):
        model = fit(images, k=3, metric=metric, m=8, seed=seed)
        assert adjusted_rand_score(labels, model.cluster_ids) == 1.0
        diffs = np.diff(model.loss_trace)
        assert np.all(diffs <= 1e-9)


def test_k_equals_n_gives_zero_loss(three_blob):
    images, _ = three_blob
    sub = images[:6]
    model = fit(sub, k=6, metric="l2", m=4, seed=1)
    assert model.iterations == 1
    assert model.loss == 0.0
    assert sorted(model.cluster_ids.tolist()) == list(range(6))


def test_k1_m1_centroid_is_dataset_mean(three_blob):
    images, _ = three_blob
    model = fit(images, k=1, metric="l2", m=1, seed=0)
    mean = images.astype(np.float64).mean(axis=0)
    assert np.max(np.abs(model.centroids[0] - mean)) < 1e-12
    assert np.all(model.cluster_ids == 0)


def test_invalid_k(three_blob):
    images, _ = three_blob
    with pytest.raises(InvalidKError):
        fit(images, k=31, metric="l2", m=4, seed=0)
    with pytest.raises(InvalidKError):
        kmeanspp_init(images, k=0, metric="l2", m=4, seed=0)


def test_fit_deterministic_across_threads(three_blob):
    images, _ = three_blob
    a = fit(images, k=3, metric="wemd", m=8, seed=5, threads=1)
    b = fit(images, k=3, metric="wemd", m=8, seed=5, threads=2)
    assert np.array_equal(a.cluster_ids, b.cluster_ids)
    assert np.array_equal(a.rotation_ids, b.rotation_ids)
    assert np.array_equal(a.distances, b.distances)
    assert a.loss_trace == b.loss_trace
    assert np.array_equal(a.centroids, b.centroids)


def test_assign_only_matches_fit_last_pass(three_blob):
    images, _ = three_blob
    model = fit(images, k=3, metric="wemd", m=8, seed=2)
    ids, rots, dists, loss = assign_only(images, model.centroids, metric="wemd", m=8)
    assert np.array_equal(ids, model.cluster_ids)
    assert np.array_equal(rots, model.rotation_ids)
    assert np.array_equal(dists, model.distances)
    assert loss == model.loss


def test_assign_only_single_centroid_and_permutation(three_blob):
    images, _ = three_blob
    model = fit(images, k=3, metric="l2", m=8, seed=3)
    ids, _, _, _ = assign_only(images, model.centroids[:1], metric="l2", m=8)
    assert np.all(ids == 0)
    perm = model.centroids[::-1].copy()
    ids_p, _, dists_p, loss_p = assign_only(images, perm, metric="l2", m=8)
    assert np.array_equal(2 - ids_p, model.cluster_ids)
    assert loss_p == pytest.approx(model.loss, rel=1e-12)


def test_update_step_reproduces_member_means(three_blob):
    images, _ = three_blob
    ss = StackSet(images, RotationGrid(8), "l2", 2 / 16)
    ids, rots, dists, _ = assign_only(images, images[:3].astype(np.float64), metric="l2", m=8)
    cents, new_ids, new_rots = _update_centroids(ss, ids, rots, dists, 3)
    for j in range(3):
        members = np.flatnonzero(new_ids == j)
        acc = np.zeros((16, 16))
        for i in members:
            acc += ss.rotated(int(i), (8 - int(new_rots[i])) % 8).astype(np.float64)
        assert np.max(np.abs(cents[j] - acc / members.size)) < 1e-9


def test_empty_cluster_reseeded_with_worst_fit(three_blob):
    images, _ = three_blob
    ss = StackSet(images, RotationGrid(4), "l2", 2 / 16)
    ids = np.zeros(30, dtype=np.int64)  # cluster 1 and 2 empty
    rots = np.zeros(30, dtype=np.int64)
    dists = np.linspace(0, 1, 30)
    cents, new_ids, _ = _update_centroids(ss, ids, rots, dists, 3)
    assert np.all(np.bincount(new_ids, minlength=3) >= 1)
    assert new_ids[29] == 1  # worst fit moved to the first empty cluster
    assert new_ids[28] == 2
    assert np.max(np.abs(cents[1] - images[29].astype(np.float64))) < 1e-12


def test_d2_sampling_frequencies():
    # one existing center, candidates at distances d, 2d, 0: draw
    # probabilities (1/5, 4/5, 0); 99% binomial intervals for 10000 draws
    d = 0.7
    weights = np.array([d**2, (2 * d) ** 2, 0.0])
    rng = np.random.default_rng(99)
    counts = np.zeros(3, dtype=int)
    for _ in range(10000):
        counts[d2_sample_index(rng, weights)] += 1
    assert counts[2] == 0
    assert 1897 <= counts[0] <= 2103
    assert 7897 <= counts[1] <= 8103


def test_kmeanspp_exhausts_distinct_images(three_blob):
    images, _ = three_blob
    sub = images[:8]
    _, chosen = kmeanspp_init(sub, k=8, metric="l2", m=4, seed=7)
    assert sorted(chosen) == list(range(8))


def test_kmeanspp_duplicate_fallback():
    base = np.zeros((16, 16), dtype=np.float32)
    base[4:8, 4:8] = 1.0
    other = np.zeros((16, 16), dtype=np.float32)
    other[10:12, 3:9] = 2.0
    images = np.stack([base, base.copy(), other])
    _, chosen = kmeanspp_init(images, k=3, metric="l2", m=4, seed=11)
    assert sorted(chosen) == [0, 1, 2]


def test_kmeanspp_k1_uniform(three_blob):
    images, _ = three_blob
    seen = set()
    for seed in range(30):
        _, chosen = kmeanspp_init(images[:5], k=1, metric="l2", m=4, seed=seed)
        assert len(chosen) == 1
        seen.add(chosen[0])
    assert len(seen) >= 3  # actually uniform over the five images


def test_run_directory_roundtrip(tmp_path, three_blob):
    images, _ = three_blob
    model = fit(images, k=3, metric="wemd", m=8, seed=4)
    save_run(model, tmp_path / "run")
    again = load_run(tmp_path / "run")
    assert np.array_equal(again.cluster_ids, model.cluster_ids)
    assert np.array_equal(again.rotation_ids, model.rotation_ids)
    assert again.loss_trace == model.loss_trace
    assert again.metric == model.metric and again.m == model.m
    # determinism of the serialized artifacts themselves
    save_run(model, tmp_path / "run2")
    assert (tmp_path / "run/assignments.csv").read_bytes() == (tmp_path / "run2/assignments.csv").read_bytes()
    assert (tmp_path / "run/centroids.f32").read_bytes() == (tmp_path / "run2/centroids.f32").read_bytes()
    meta1 = json.loads((tmp_path / "run/model.json").read_text())
    meta2 = json.loads((tmp_path / "run2/model.json").read_text())
    meta1.pop("timing"), meta2.pop("timing")
    assert meta1 == meta2


def test_centroids_finite_and_loss_recorded(three_blob):
    images, _ = three_blob
    for seed in (0, 1):
        model = fit(images, k=4, metric="wemd", m=8, seed=seed)
        assert np.all(np.isfinite(model.centroids))
        assert model.iterations == len(model.loss_trace) >= 1
        assert len(model.assign_seconds) >= model.iterations

import json

import numpy as np
import pytest

from classavg.cluster import ClusterModel, fit
from classavg.evalrep import (
    DataError,
    angular_coherence,
    centroid_panel,
    evaluate,
    noise_scatter,
    occupancy_curve,
    read_pgm16,
    timing_report,
    write_pgm16,
    write_scatter,
)
from classavg.phantom import Orientation, generate_dataset, load_phantom


def toy_model(cluster_ids, k, n, size=8, metric="l2", distances=None):
    rng = np.random.default_rng(0)
    return ClusterModel(
        k=k, metric=metric, m=4, seed=0,
        centroids=rng.normal(size=(k, size, size)),
        cluster_ids=np.asarray(cluster_ids, dtype=np.int64),
        rotation_ids=np.zeros(n, dtype=np.int64),
        distances=np.zeros(n) if distances is None else np.asarray(distances, float),
        loss_trace=[1.0], iterations=1, pixel_size=2 / size,
        assign_seconds=[0.5], update_seconds=[0.25],
    )


def orientations_from_dirs(dirs):
    """Build orientations whose viewing directions equal the given unit
    vectors (rotate e_z onto v with an axis-angle quaternion)."""
    out = []
    for v in dirs:
        v = np.asarray(v, float)
        v = v / np.linalg.norm(v)
        ez = np.array([0.0, 0.0, 1.0])
        c = float(np.dot(ez, v))
        if c > 1 - 1e-12:
            out.append(Orientation.identity())
            continue
        if c < -1 + 1e-12:
            out.append(Orientation.from_quaternion([0, 1, 0, 0]))
            continue
        axis = np.cross(v, ez)  # rotation taking viewing v: R^T e_z = v
        axis /= np.linalg.norm(axis)
        half = np.arccos(np.clip(c, -1, 1)) / 2
        q = [np.cos(half), *(np.sin(half) * axis)]
        out.append(Orientation.from_quaternion(q))
    for o, v in zip(out, dirs):
        assert np.allclose(o.viewing_direction, np.asarray(v) / np.linalg.norm(v), atol=1e-9)
    return out


def test_singleton_clusters_give_empty_histogram():
    model = toy_model(cluster_ids=np.arange(5), k=5, n=5)
    orients = orientations_from_dirs(np.eye(3).tolist() + [[0, 1, 1], [1, 0, 1]])
    counts, edges, median, pairs = angular_coherence(model, orients)
    assert counts.sum() == 0
    assert median is None
    assert pairs == 0


def test_identical_viewing_pair_lands_in_first_bin():
    model = toy_model(cluster_ids=[0, 0], k=1, n=2)
    orients = orientations_from_dirs([[0, 0, 1], [0, 0, 1]])
    counts, edges, median, pairs = angular_coherence(model, orients)
    assert pairs == 1
    assert counts[0] == 1 and counts[1:].sum() == 0
    assert median == 0.0


def test_perfect_oracle_clustering_concentrates_mass():
    # three viewing directions, all images of a group share one direction
    dirs = [[0, 0, 1]] * 4 + [[1, 0, 0]] * 4 + [[0, 1, 0]] * 4
    model = toy_model(cluster_ids=[0] * 4 + [1] * 4 + [2] * 4, k=3, n=12)
    counts, _, median, pairs = angular_coherence(model, orientations_from_dirs(dirs))
    assert pairs == 3 * 6
    assert counts[0] == pairs
    assert median == 0.0


def test_histogram_mass_matches_pair_count():
    rng = np.random.default_rng(1)
    ids = rng.integers(0, 4, size=40)
    model = toy_model(cluster_ids=ids, k=4, n=40)
    from classavg.phantom import sample_orientation

    orients = [sample_orientation(rng) for _ in range(40)]
    counts, _, _, pairs = angular_coherence(model, orients)
    sizes = np.bincount(ids, minlength=4)
    expected = int(sum(s * (s - 1) // 2 for s in sizes))
    assert counts.sum() == pairs == expected


def test_missing_orientations_is_data_error():
    model = toy_model(cluster_ids=[0, 0, 1], k=2, n=3)
    with pytest.raises(DataError):
        angular_coherence(model, orientations_from_dirs([[0, 0, 1]]))


def test_occupancy_closed_forms():
    model = toy_model(cluster_ids=[0] * 100, k=4, n=100)
    sizes, cv = occupancy_curve(model)
    assert sizes.tolist() == [100, 0, 0, 0]
    assert cv == pytest.approx(np.sqrt(3))
    model = toy_model(cluster_ids=np.repeat(np.arange(4), 25), k=4, n=100)
    _, cv = occupancy_curve(model)
    assert cv == 0.0


def test_pgm_roundtrip_and_constant_guard(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.normal(size=(9, 7))
    path = tmp_path / "x.pgm"
    write_pgm16(path, img)
    back = read_pgm16(path)
    expected = np.round((img - img.min()) / (img.max() - img.min()) * 65535).astype(">u2")
    assert np.array_equal(back, expected)
    write_pgm16(path, np.full((4, 4), 3.3))
    assert np.all(read_pgm16(path) == 32768)


def test_centroid_panel_top_k(tmp_path):
    model = toy_model(cluster_ids=[0, 0, 0, 1, 1, 2], k=3, n=6)
    paths = centroid_panel(model, 3, tmp_path)
    assert [p.name for p in paths] == ["centroid_000.pgm", "centroid_001.pgm", "centroid_002.pgm"]
    with pytest.raises(ValueError):
        centroid_panel(model, 4, tmp_path)


def test_timing_report_two_runs_and_ratio():
    a = toy_model(cluster_ids=[0, 1], k=2, n=2, metric="l2")
    b = toy_model(cluster_ids=[0, 1], k=2, n=2, metric="l2")
    b.assign_seconds = [0.7]
    rep = timing_report([a, b])
    assert rep["l2"]["runs"] == 2
    assert rep["l2"]["assign_mean_overall_s"] == pytest.approx(0.6)
    w = toy_model(cluster_ids=[0, 1], k=2, n=2, metric="wemd")
    w.assign_seconds = [1.2]
    rep = timing_report([a, w])
    assert rep["wemd_over_l2_assign_ratio"] == pytest.approx(1.2 / 0.5)


@pytest.fixture(scope="module")
def small_dataset():
    vol = load_phantom("phantoms/ribo-like.json", side=16)
    return generate_dataset(vol, n=16, size=16, snr=0.0, seed=5)


def test_noise_scatter_self_reference_is_zero(small_dataset):
    table = noise_scatter(small_dataset, 3, m=8)
    assert table["angle_deg"][3] == 0.0
    assert table["d_l2"][3] == 0.0
    assert table["d_wemd"][3] == 0.0
    assert np.all(table["d_l2"] >= 0) and np.all(table["d_wemd"] >= 0)


def test_noise_scatter_clean_correlations_positive(small_dataset):
    from scipy.stats import spearmanr

    table = noise_scatter(small_dataset, 0, m=16)
    keep = table["angle_deg"] <= 90.0
    assert keep.sum() > 4
    for key in ("d_l2", "d_wemd"):
        rho = spearmanr(table["angle_deg"][keep], table[key][keep]).statistic
        assert rho > 0


def test_noise_scatter_requires_clean_stack(small_dataset):
    import dataclasses

    stripped = dataclasses.replace(small_dataset, clean=None)
    with pytest.raises(DataError):
        noise_scatter(stripped, 0)


def test_evaluate_artifacts_and_determinism(tmp_path, small_dataset):
    model = fit(small_dataset, k=3, metric="wemd", m=8, seed=0)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    rep1 = evaluate(model, small_dataset, out1, top=3)
    evaluate(model, small_dataset, out2, top=3)
    for name in ("report.json", "angular_histogram.csv", "occupancy.csv",
                 "timing.csv", "centroid_000.pgm", "angular_histogram.png",
                 "occupancy.png", "centroids.png"):
        assert (out1 / name).exists()
    for name in ("report.json", "angular_histogram.csv", "occupancy.csv", "centroid_000.pgm"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    payload = json.loads((out1 / "report.json").read_text())
    sizes = np.array(payload["occupancy"])
    assert sizes.sum() == small_dataset.n
    expected_pairs = int(sum(s * (s - 1) // 2 for s in sizes))
    assert sum(payload["histogram_counts"]) == expected_pairs
    assert rep1.occupancy_cv == pytest.approx(payload["occupancy_cv"])


def test_evaluate_rejects_mismatched_n(tmp_path, small_dataset):
    model = fit(small_dataset, k=3, metric="l2", m=8, seed=0)
    model.cluster_ids = model.cluster_ids[:-1]
    with pytest.raises(DataError):
        evaluate(model, small_dataset, tmp_path / "bad")


def test_write_scatter_roundtrip(tmp_path, small_dataset):
    table = noise_scatter(small_dataset, 1, m=8)
    write_scatter(table, tmp_path / "s" / "scatter.csv")
    assert (tmp_path / "s" / "scatter.csv").exists()
    assert (tmp_path / "s" / "scatter.png").exists()
    import csv

    with open(tmp_path / "s" / "scatter.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == small_dataset.n
    re_angle = np.array([float(r["angle_deg"]) for r in rows])
    assert np.array_equal(re_angle, table["angle_deg"])

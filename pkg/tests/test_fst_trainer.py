"""Clustering, candidate-set sampling, and the training loop."""

import numpy as np
import pytest

from fewshot_testing.errors import ConfigError
from fewshot_testing.fst_trainer import (
    TrainConfig,
    certified_loss,
    cluster_features,
    kmeans,
    sample_fst_set,
    train,
    write_clusters_csv,
    write_loss_csv,
)
from fewshot_testing.similarity_net import NetConfig

from conftest import MASTER_SEED


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(n_train=0)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(outcome_feature_scale=-1.0)
    assert TrainConfig().k == 10
    assert TrainConfig(n_train=7, k_clusters=3).k == 3


def test_cluster_features_layout(grid, vertex_data):
    _, outcomes, _ = vertex_data
    X = cluster_features(grid, outcomes, outcome_scale=2.0)
    assert X.shape == (grid.size, 2 + outcomes.shape[0])
    assert X[:, 0].min() == 0.0 and X[:, 0].max() == 1.0
    np.testing.assert_array_equal(X[:, 2], 2.0 * outcomes[0])


def test_kmeans_k_equals_one_and_n():
    rng = np.random.default_rng(0)
    X = rng.random((30, 3))
    assign, centers = kmeans(X, 1, np.random.default_rng(1))
    assert np.all(assign == 0)
    np.testing.assert_allclose(centers[0], X.mean(axis=0), atol=1e-12)
    assign_n, centers_n = kmeans(X, 30, np.random.default_rng(2))
    assert sorted(assign_n) == list(range(30))  # every point its own cluster
    with pytest.raises(ConfigError):
        kmeans(X, 31, np.random.default_rng(3))
    with pytest.raises(ConfigError):
        kmeans(X, 0, np.random.default_rng(3))


def test_kmeans_separates_obvious_blobs():
    rng = np.random.default_rng(5)
    blob_a = rng.normal(0.0, 0.05, size=(40, 2))
    blob_b = rng.normal(5.0, 0.05, size=(40, 2))
    X = np.vstack([blob_a, blob_b])
    assign, _ = kmeans(X, 2, np.random.default_rng(6))
    assert len(set(assign[:40])) == 1
    assert len(set(assign[40:])) == 1
    assert assign[0] != assign[40]


def test_kmeans_repairs_empty_clusters():
    """Duplicated points force ties; every cluster must still end nonempty."""
    X = np.zeros((12, 2))
    X[6:] = 1.0
    assign, centers = kmeans(X, 4, np.random.default_rng(7))
    assert np.bincount(assign, minlength=4).min() >= 1


def test_sample_fst_set_distinct_when_n_at_most_k(trained):
    rng = np.random.default_rng(11)
    for _ in range(20):
        cells = sample_fst_set(trained.assignments, 10, 8, rng)
        clusters = trained.assignments[cells]
        assert len(set(clusters.tolist())) == 8
    with pytest.raises(ConfigError):
        sample_fst_set(trained.assignments, 10, 0, rng)


def test_sample_fst_set_cycles_when_n_exceeds_k(trained):
    rng = np.random.default_rng(12)
    cells = sample_fst_set(trained.assignments, 10, 23, rng)
    clusters = trained.assignments[cells]
    np.testing.assert_array_equal(clusters, np.arange(23) % 10)


def test_sample_fst_set_covers_every_cluster_once_when_n_equals_k(trained):
    rng = np.random.default_rng(13)
    for _ in range(25):
        cells = sample_fst_set(trained.assignments, 10, 10, rng)
        assert sorted(trained.assignments[cells].tolist()) == list(range(10))


def test_sample_fst_set_members_are_uniform_within_cluster():
    """On a tiny synthetic clustering, member pick frequencies are uniform
    to 4 sigma (seeded, so the check is deterministic)."""
    assignments = np.arange(6) % 3  # 3 clusters, 2 members each
    rng = np.random.default_rng(14)
    draws = 3000
    counts = np.zeros(6, dtype=int)
    for _ in range(draws):
        for cell in sample_fst_set(assignments, 3, 3, rng):
            counts[cell] += 1
    sigma = np.sqrt(draws * 0.5 * 0.5)
    assert np.all(np.abs(counts - draws / 2) <= 4 * sigma)


def test_certified_loss_argmax_ties_take_lowest_index():
    loss, a = certified_loss(np.array([0.4, 0.1]), np.array([0.1, 0.4]))
    assert (loss, a) == (pytest.approx(0.3), 0)
    loss2, a2 = certified_loss(np.array([0.5, 0.2, 0.9]), np.array([0.5, 0.2, 0.9]))
    assert (loss2, a2) == (0.0, 0)


def test_train_is_deterministic(grid, vertex_data):
    _, outcomes, rates = vertex_data
    cfg = TrainConfig(epochs=3)
    a = train(grid, outcomes, rates, NetConfig(), cfg, master_seed=99)
    b = train(grid, outcomes, rates, NetConfig(), cfg, master_seed=99)
    assert a.loss_history == b.loss_history
    for Wa, Wb in zip(a.params.weights, b.params.weights):
        np.testing.assert_array_equal(Wa, Wb)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    c = train(grid, outcomes, rates, NetConfig(), cfg, master_seed=100)
    assert c.loss_history != a.loss_history


def test_train_single_vertex_reduces_loss(grid, vertex_data):
    """With one vertex the worst-vertex loss is that vertex's own error and
    still trains."""
    _, outcomes, rates = vertex_data
    res = train(grid, outcomes[:1], rates[:1], NetConfig(), TrainConfig(epochs=3),
                master_seed=1)
    assert len(res.loss_history) == 3
    assert all(np.isfinite(res.loss_history))


def test_full_training_run_converges(trained):
    """The session training run (200 epochs, seed 42): frozen first-epoch
    loss and a final loss under half the initial one."""
    assert trained.loss_history[0] == pytest.approx(0.09622305165514126, abs=1e-12)
    assert len(trained.loss_history) == 200
    assert trained.loss_history[-1] < 0.5 * trained.loss_history[0]
    assert trained.params.seed_lineage["master_seed"] == MASTER_SEED


def test_loss_csv_writer(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_csv([0.5, 0.25], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert lines[1] == "0,0.5"
    assert lines[2] == "1,0.25"


def test_clusters_csv_writer(tmp_path, grid, trained):
    path = tmp_path / "clusters.csv"
    write_clusters_csv(grid, trained.assignments, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,rdot,cluster"
    assert len(lines) == grid.size + 1
    first = lines[1].split(",")
    assert float(first[0]) == grid.r[0]
    assert int(first[2]) == trained.assignments[0]

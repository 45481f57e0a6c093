import numpy as np
import pytest

from regnn.core.metrics import (
    MetricError,
    clustering_metrics,
    evaluate_f1,
    kmeans_cluster,
    kmeans_inertia,
)


def test_all_predictions_one_class():
    logits = np.tile([1.0, 0.0], (4, 1))
    macro, micro = evaluate_f1(logits, np.array([0, 0, 1, 1]), np.arange(4))
    assert micro == pytest.approx(0.5)
    assert macro == pytest.approx(1.0 / 3.0)


def test_perfect_predictions():
    labels = np.array([0, 2, 1, 2])
    macro, micro = evaluate_f1(np.eye(3)[labels], labels, np.arange(4))
    assert (macro, micro) == (1.0, 1.0)


def test_absent_class_counts_as_zero_in_macro():
    labels = np.array([0, 1])
    macro, micro = evaluate_f1(np.eye(3)[labels], labels, np.arange(2))
    assert micro == 1.0
    assert macro == pytest.approx(2.0 / 3.0)


def test_mask_selects_rows():
    logits = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    _, micro = evaluate_f1(logits, np.array([0, 1, 1]), np.array([0, 2]))
    assert micro == 1.0


def test_empty_mask_rejected():
    with pytest.raises(MetricError):
        evaluate_f1(np.zeros((2, 2)), np.array([0, 1]), np.array([], dtype=int))


# ============================================================================
# Clustering
# ============================================================================

def test_identical_and_permuted_assignments():
    labels = np.array([0, 0, 1, 1, 2, 2])
    assert clustering_metrics(labels, labels) == pytest.approx((1.0, 1.0))
    assert clustering_metrics(np.array([2, 2, 0, 0, 1, 1]), labels) == pytest.approx((1.0, 1.0))


def test_random_assignments_have_near_zero_ari():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 2500)
    _, ari = clustering_metrics(rng.integers(0, 4, size=labels.size), labels)
    assert abs(ari) < 0.02


def test_clustering_input_errors():
    with pytest.raises(MetricError):
        clustering_metrics(np.array([0, 1]), np.array([0, 1, 1]))
    with pytest.raises(MetricError):
        clustering_metrics(np.array([0]), np.array([0]))


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(1)
    centers = np.array([[0.0, 0.0], [10.0, 10.0], [-10.0, 10.0]])
    labels = np.repeat(np.arange(3), 30)
    points = centers[labels] + rng.normal(scale=0.5, size=(90, 2))
    assignments = kmeans_cluster(points, 3, seed=0)
    assert clustering_metrics(assignments, labels) == pytest.approx((1.0, 1.0))


def test_kmeans_is_deterministic_per_seed():
    points = np.random.default_rng(2).normal(size=(50, 3))
    np.testing.assert_array_equal(kmeans_cluster(points, 4, seed=7), kmeans_cluster(points, 4, seed=7))


def test_k_larger_than_points_rejected():
    with pytest.raises(MetricError):
        kmeans_cluster(np.zeros((3, 2)), 4)


def test_inertia_of_two_pairs():
    points = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [10.0, 4.0]])
    assert kmeans_inertia(points, np.array([0, 0, 1, 1])) == pytest.approx(2.0 + 8.0)

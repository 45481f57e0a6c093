"""
Classification and clustering metrics.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, f1_score, normalized_mutual_info_score


logger = logging.getLogger(__name__)


class MetricError(ValueError):
    """Metric inputs are empty or inconsistent."""


def evaluate_f1(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    num_classes: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Macro- and micro-F1 of argmax predictions on the masked rows.

    Classes absent from both predictions and labels count as F1 = 0 in the
    macro average.

    Args:
        logits: N x C scores
        labels: Class id per row
        mask: Row indices to score
        num_classes: Class count; defaults to the logit width

    Returns:
        (macro_f1, micro_f1)
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise MetricError("F1 mask is empty")
    logits = np.asarray(logits)
    num_classes = logits.shape[1] if num_classes is None else num_classes
    y_true = np.asarray(labels)[mask]
    y_pred = logits[mask].argmax(axis=1)
    classes = list(range(num_classes))
    macro = f1_score(y_true, y_pred, labels=classes, average="macro", zero_division=0)
    micro = f1_score(y_true, y_pred, labels=classes, average="micro", zero_division=0)
    return float(macro), float(micro)


def kmeans_cluster(
    embeddings: np.ndarray,
    k: int,
    restarts: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """
    Lloyd's algorithm with k-means++ seeding; the best-inertia restart wins.

    Empty clusters are relocated to the points farthest from their centers.

    Raises:
        MetricError: k > number of points or k < 1
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if not 1 <= k <= n:
        raise MetricError(f"k must lie in [1, {n}], got {k}")
    model = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed)
    assignments = model.fit_predict(embeddings)
    logger.debug("K-Means k=%d restarts=%d inertia=%.6g", k, restarts, model.inertia_)
    return assignments


def kmeans_inertia(embeddings: np.ndarray, assignments: np.ndarray) -> float:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    total = 0.0
    for c in np.unique(assignments):
        members = embeddings[assignments == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def clustering_metrics(assignments: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """
    (NMI, ARI); NMI uses arithmetic-mean normalization.

    Raises:
        MetricError: length mismatch or fewer than two points
    """
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    if assignments.shape != labels.shape:
        raise MetricError(f"length mismatch: {assignments.shape} vs {labels.shape}")
    if assignments.size < 2:
        raise MetricError("clustering metrics need at least two points")
    nmi = normalized_mutual_info_score(labels, assignments, average_method="arithmetic")
    ari = adjusted_rand_score(labels, assignments)
    return float(nmi), float(ari)

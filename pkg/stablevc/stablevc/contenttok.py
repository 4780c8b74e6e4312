"""Discrete content units: k-means codebook, encoding, run-length dedup, embedding."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100
FULL_SCALE_CLUSTERS = 1024


@dataclass(eq=False)
class Codebook:
    """Frozen k-means centroids.

    ``history`` holds the Lloyd objective (sum of squared distances) after
    every assignment step of the fit that produced the codebook.
    """

    centroids: np.ndarray
    history: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError(f"centroids must be a non-empty K x D matrix, got shape {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


@dataclass(eq=False)
class ContentSequence:
    token_ids: np.ndarray
    durations: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.token_ids) == len(self.durations) == len(self.embeddings)):
            raise ValueError("token_ids, durations and embeddings must have equal length")
        if np.any(self.durations < 1):
            raise ValueError("durations must be >= 1")

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())


_CHUNK_ELEMENTS = 1 << 22


def _squared_distances(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # explicit differences keep exact ties exact
    diff = features[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _nearest(features: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest centroid per row, computed in row chunks.

    Each chunk holds at most ``_CHUNK_ELEMENTS`` differences; ties go to the
    lowest centroid index.
    """
    n = features.shape[0]
    rows = max(1, _CHUNK_ELEMENTS // max(1, centroids.shape[0] * centroids.shape[1]))
    index = np.empty(n, dtype=np.int64)
    cost = np.empty(n, dtype=np.float64)
    for start in range(0, n, rows):
        dist = _squared_distances(features[start : start + rows], centroids)
        best = dist.argmin(axis=1)
        index[start : start + rows] = best
        cost[start : start + rows] = dist[np.arange(dist.shape[0]), best]
    return index, cost


def _kmeans_plus_plus(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    _, closest = _nearest(features, features[chosen])
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _nearest(features, features[idx : idx + 1])[1])
    return features[chosen].copy()


def fit_kmeans(
    features: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Codebook:
    """Lloyd's algorithm from a seeded k-means++ initialisation.

    Stops when assignments no longer change or after ``max_iter`` iterations.
    An empty cluster is re-seeded from the point farthest from its centroid.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be N x D, got shape {features.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if features.shape[0] < k:
        raise ValueError(f"need at least k={k} rows to fit, got {features.shape[0]}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(features, k, rng)
    assignment = None
    history: list[float] = []
    for iteration in range(max_iter):
        new_assignment, point_cost = _nearest(features, centroids)
        history.append(float(point_cost.sum()))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

        counts = np.bincount(assignment, minlength=k)
        while np.any(counts == 0):
            cluster = int(np.flatnonzero(counts == 0)[0])
            # never steal the only member of another cluster
            candidates = np.where(counts[assignment] > 1, point_cost, -1.0)
            far = int(candidates.argmax())
            warnings.warn(
                f"k-means cluster {cluster} is empty; re-seeding from point {far}",
                UserWarning,
                stacklevel=2,
            )
            centroids[cluster] = features[far]
            assignment[far] = cluster
            point_cost[far] = 0.0
            counts = np.bincount(assignment, minlength=k)

        sums = np.zeros_like(centroids)
        np.add.at(sums, assignment, features)
        centroids = sums / counts[:, None]
    logger.debug("k-means k=%d finished after %d iterations, objective %.6g", k, iteration + 1, history[-1])
    return Codebook(centroids=centroids, history=tuple(history))


def encode(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest centroid per frame; ties go to the lowest index."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != codebook.dim:
        raise ValueError(f"features must be T x {codebook.dim}, got shape {features.shape}")
    return _nearest(features, codebook.centroids.astype(np.float64))[0]


def dedup(token_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run-length encode a token sequence into (unique_ids, durations)."""
    token_ids = np.asarray(token_ids)
    if token_ids.ndim != 1 or token_ids.size == 0:
        raise ValueError("dedup needs a non-empty 1-D token sequence")
    starts = np.flatnonzero(np.concatenate(([True], token_ids[1:] != token_ids[:-1])))
    durations = np.diff(np.append(starts, token_ids.size))
    return token_ids[starts].astype(np.int64), durations.astype(np.int64)


def expand(unique_ids: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Repeat each id ``durations[i]`` times; inverse of :func:`dedup`.

    Parameters
    ----------
    unique_ids : array_like of int
        Deduplicated token ids.
    durations : array_like of int
        Run length per id, each >= 1.
    """
    durations = np.asarray(durations)
    if np.any(durations < 1):
        raise ValueError("durations must be >= 1")
    return np.repeat(np.asarray(unique_ids, dtype=np.int64), durations)


def embed(unique_ids: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Centroid row per token id, shape (n, D)."""
    unique_ids = np.asarray(unique_ids, dtype=np.int64)
    if unique_ids.size and (unique_ids.min() < 0 or unique_ids.max() >= codebook.k):
        raise ValueError(f"token ids must be in [0, {codebook.k})")
    return codebook.centroids[unique_ids]


def tokenize(features: np.ndarray, codebook: Codebook, deduplicate: bool = True) -> ContentSequence:
    """Quantize frame features into a content token sequence.

    Parameters
    ----------
    features : numpy.ndarray
        (T, D) frame features.
    codebook : Codebook
        Fitted k-means codebook with matching ``D``.
    deduplicate : bool, default True
        Collapse runs of equal ids and record their lengths as durations.
        When False every frame is its own token with duration 1.

    Returns
    -------
    ContentSequence
        Token ids, durations and centroid embeddings of equal length.
    """
    ids = encode(features, codebook)
    if deduplicate:
        ids, durations = dedup(ids)
    else:
        durations = np.ones_like(ids)
    return ContentSequence(token_ids=ids, durations=durations, embeddings=embed(ids, codebook))


def cluster_accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Frame accuracy after the best one-to-one cluster-to-label matching."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ValueError("predicted and truth must be non-empty and equally long")
    n_pred = int(predicted.max()) + 1
    n_true = int(truth.max()) + 1
    confusion = np.zeros((n_pred, n_true), dtype=np.int64)
    np.add.at(confusion, (predicted, truth), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / predicted.size)

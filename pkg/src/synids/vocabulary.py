"""Visual vocabulary: seeded k-means, frequency matrix, tf-idf weighting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import InsufficientData

log = logging.getLogger(__name__)

DEFAULT_CLUSTERS = 1000
MAX_ITER = 100
MAX_SWEEPS = 20
_TIE_GAP = 1e-9


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: List[float] = field(default_factory=list)
    iterations: int = 0


@dataclass
class Vocabulary:
    centroids: np.ndarray
    idf: np.ndarray
    rng_seed: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


# --------------------------------------------------------------------------
# nearest centroid


def _sq_dists(x: np.ndarray, c: np.ndarray, c_sq: Optional[np.ndarray] = None) -> np.ndarray:
    x_sq = np.einsum("ij,ij->i", x, x)
    if c_sq is None:
        c_sq = np.einsum("ij,ij->i", c, c)
    d = x_sq[:, None] - 2.0 * (x @ c.T) + c_sq[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def assign(descriptor, centroids: np.ndarray) -> int:
    """Index of the nearest centroid; the lowest index wins ties."""
    diff = np.asarray(centroids, dtype=np.float64) - np.asarray(descriptor, dtype=np.float64)
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def assign_many(x: np.ndarray, centroids: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Nearest centroid for every row of ``x``, exact on near-ties.

    Distances come from the expanded-norm matrix product; rows whose best two
    candidates are within rounding distance are redone with direct
    differences so that ties resolve exactly like :func:`assign`.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    labels = np.empty(len(x), dtype=np.int64)
    if len(x) == 0:
        return labels
    c_sq = np.einsum("ij,ij->i", c, c)
    for start in range(0, len(x), chunk):
        xs = x[start : start + chunk]
        d = _sq_dists(xs, c, c_sq)
        best = np.argmin(d, axis=1)
        if c.shape[0] > 1:
            part = np.partition(d, 1, axis=1)
            scale = np.maximum(part[:, 1], 1.0)
            close = np.nonzero(part[:, 1] - part[:, 0] <= 1e-9 * scale + _TIE_GAP)[0]
            for i in close:
                best[i] = assign(xs[i], c)
        labels[start : start + len(xs)] = best
    return labels


# --------------------------------------------------------------------------
# k-means


def _objective(x, centroids, labels) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _means(x, labels, k):
    onehot = sparse.csr_matrix(
        (np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(k, len(labels))
    )
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.asarray(onehot @ x)
    return sums, counts


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = np.einsum("ij,ij->i", x - x[chosen[0]], x - x[chosen[0]])
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centre
            idx = int(rng.integers(n))
        else:
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        diff = x - x[idx]
        np.minimum(closest, np.einsum("ij,ij->i", diff, diff), out=closest)
    return x[chosen].copy()


def _reseed_empty(x, centroids, labels, k):
    counts = np.bincount(labels, minlength=k)
    empty = np.nonzero(counts == 0)[0]
    if len(empty) == 0:
        return labels
    labels = labels.copy()
    diff = x - centroids[labels]
    cost = np.einsum("ij,ij->i", diff, diff)
    # farthest points first; stable so equal costs go by index
    order = np.argsort(-cost, kind="stable")
    taken = 0
    for j in empty:
        while taken < len(order):
            i = order[taken]
            taken += 1
            if counts[labels[i]] > 1:
                counts[labels[i]] -= 1
                labels[i] = j
                counts[j] = 1
                centroids[j] = x[i]
                break
    return labels


def _hartigan_sweep(x, centroids, labels, k) -> int:
    """Move single points wherever that lowers the objective with means updated.

    Lloyd's fixpoint only guarantees each point sits at its nearest *fixed*
    centroid; moving a point also shifts both means, which this accounts for.
    """
    sums, counts = _means(x, labels, k)
    means = sums / np.maximum(counts, 1)[:, None]
    found = []
    for start in range(0, len(x), 4096):
        rows = np.arange(start, min(start + 4096, len(x)))
        d = _sq_dists(x[rows], means)
        own = labels[rows]
        n_own = counts[own]
        ratio = np.where(n_own > 1, n_own / np.maximum(n_own - 1, 1), 0.0)
        cost_out = ratio * d[np.arange(len(rows)), own]
        cost_in = counts / (counts + 1.0) * d
        cost_in[np.arange(len(rows)), own] = np.inf
        found.append(rows[cost_in.min(axis=1) < cost_out - 1e-12])
    candidates = np.concatenate(found)
    moves = 0
    for i in candidates:
        a = labels[i]
        if counts[a] <= 1:
            continue
        xi = x[i]
        diff = means - xi
        dist = np.einsum("ij,ij->i", diff, diff)
        delta_in = counts / (counts + 1.0) * dist
        delta_in[a] = np.inf
        b = int(np.argmin(delta_in))
        delta_out = counts[a] / (counts[a] - 1.0) * dist[a]
        if delta_in[b] < delta_out - 1e-12:
            means[a] = (means[a] * counts[a] - xi) / (counts[a] - 1)
            means[b] = (means[b] * counts[b] + xi) / (counts[b] + 1)
            counts[a] -= 1
            counts[b] += 1
            labels[i] = b
            moves += 1
    return moves


def kmeans(
    descriptors, k: int, seed: int = 0, max_iter: int = MAX_ITER, max_sweeps: int = MAX_SWEEPS
) -> KMeansResult:
    """Seeded k-means++ then Lloyd iterations, finished with single-point moves.

    ``history`` records the objective after every update step; it never
    increases. The result depends only on (input order, k, seed).
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("descriptors must be a 2-D array")
    if k < 1:
        raise ValueError("k must be positive")
    if len(x) < k:
        raise InsufficientData(f"{len(x)} descriptors for k={k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    labels = assign_many(x, centroids)
    history: List[float] = []
    iterations = sweeps = 0
    while iterations < max_iter:
        iterations += 1
        labels = _reseed_empty(x, centroids, labels, k)
        sums, counts = _means(x, labels, k)
        centroids = sums / counts[:, None]
        history.append(_objective(x, centroids, labels))
        new_labels = assign_many(x, centroids)
        if not np.array_equal(new_labels, labels):
            labels = new_labels
            continue
        if sweeps < max_sweeps and _hartigan_sweep(x, centroids, labels, k):
            sweeps += 1
            continue
        break
    log.debug("k-means k=%d: %d Lloyd iterations, %d sweeps, objective %.6g",
              k, iterations, sweeps, history[-1])
    return KMeansResult(centroids, labels, history[-1], history, iterations)


# --------------------------------------------------------------------------
# bag of words


def frequency_matrix(descriptor_sets: Sequence[np.ndarray], centroids: np.ndarray) -> np.ndarray:
    """Integer counts: row i, column j = image-i descriptors nearest centroid j."""
    k = len(centroids)
    rows = np.zeros((len(descriptor_sets), k), dtype=np.int64)
    for i, desc in enumerate(descriptor_sets):
        desc = np.asarray(desc)
        if len(desc):
            rows[i] = np.bincount(assign_many(desc, centroids), minlength=k)
    return rows


def tf(counts) -> np.ndarray:
    """Term frequency per row; empty rows stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    return np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)


def idf(counts) -> np.ndarray:
    """ln(m / df) per column; zero for columns no image contains."""
    counts = np.asarray(counts)
    m = counts.shape[0]
    df = np.count_nonzero(counts > 0, axis=0)
    return np.where(df > 0, np.log(m / np.maximum(df, 1)), 0.0)


def tfidf_weight(counts, idf_weights: Optional[np.ndarray] = None) -> np.ndarray:
    if idf_weights is None:
        idf_weights = idf(counts)
    return tf(counts) * idf_weights


def bow_vector(descriptors: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """tf-idf weighted histogram of one image against a trained vocabulary."""
    counts = np.zeros(vocab.k, dtype=np.int64)
    descriptors = np.asarray(descriptors)
    if len(descriptors):
        counts = np.bincount(assign_many(descriptors, vocab.centroids), minlength=vocab.k)
    return tf(counts) * vocab.idf


def build_vocabulary(descriptor_sets: Sequence[np.ndarray], k: int, seed: int):
    """Fit centroids on the pooled descriptors and the idf over the images.

    Returns the vocabulary, the weighted training matrix, the raw count
    matrix and the k-means result.
    """
    pooled = [np.asarray(d) for d in descriptor_sets if len(d)]
    if not pooled:
        raise InsufficientData("no descriptors in the training images")
    stacked = np.concatenate(pooled)
    result = kmeans(stacked, k, seed)
    counts = frequency_matrix(descriptor_sets, result.centroids)
    weights = idf(counts)
    vocab = Vocabulary(result.centroids, weights, seed)
    return vocab, tfidf_weight(counts, weights), counts, result

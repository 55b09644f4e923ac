"""kNN similarity graph over image representations.

Each image keeps its k nearest neighbours (squared Euclidean distance in
representation space) with Gaussian weights normalised to sum to one per
row.  The resulting S is asymmetric in general.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class SimilarityGraph:
    neighbors: np.ndarray  # (n, kk) int, kk = min(k, n - 1)
    weights: np.ndarray  # (n, kk) float, rows sum to 1
    gamma: float
    k: int

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def matrix(self) -> sp.csr_matrix:
        n, kk = self.neighbors.shape
        rows = np.repeat(np.arange(n), kk)
        return sp.csr_matrix((self.weights.ravel(), (rows, self.neighbors.ravel())), shape=(n, n))

    def scaled(self, c: float) -> "SimilarityGraph":
        return SimilarityGraph(self.neighbors, self.weights * c, self.gamma, self.k)


def _sq_dists(Y):
    Y = np.asarray(Y, dtype=float)
    return cdist(Y.T, Y.T, "sqeuclidean")


def knn_neighbors(Y, k: int) -> np.ndarray:
    """Indices of the min(k, n-1) nearest other columns of ``Y`` (r x n).

    Ties are broken by the smaller index.
    """
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[1]
    if n < 2:
        raise ValueError("need at least two images")
    if k < 1:
        raise ValueError("k must be positive")
    kk = min(k, n - 1)
    D = _sq_dists(Y)
    np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    return order[:, :kk]


def median_gamma(Y, neighbors) -> float:
    """Median heuristic: 1 / median squared distance over stored pairs.

    Zero distances are skipped so duplicated representations do not send
    the bandwidth to infinity; with no positive distance at all, 1.0.
    """
    Y = np.asarray(Y, dtype=float)
    diff = Y[:, :, None] - Y[:, neighbors]
    d2 = np.einsum("rnk,rnk->nk", diff, diff)
    pos = d2[d2 > 0]
    if pos.size == 0:
        return 1.0
    return 1.0 / float(np.median(pos))


def build_similarity(Y, neighbors, gamma) -> SimilarityGraph:
    """Row-normalised Gaussian kernel weights over the given neighbour lists.

    ``gamma`` may be a positive float or ``"median"``.
    """
    Y = np.asarray(Y, dtype=float)
    neighbors = np.asarray(neighbors, dtype=int)
    if neighbors.ndim != 2 or neighbors.shape[0] != Y.shape[1]:
        raise ValueError("neighbour lists do not match the number of images")
    if not np.all(np.isfinite(Y)):
        raise ValueError("representations contain non-finite values")
    diff = Y[:, :, None] - Y[:, neighbors]
    d2 = np.einsum("rnk,rnk->nk", diff, diff)
    if not np.all(np.isfinite(d2)):
        raise ValueError("squared distances overflow; rescale the representations")
    if isinstance(gamma, str):
        if gamma != "median":
            raise ValueError(f"gamma must be positive or 'median', got {gamma!r}")
        gamma = median_gamma(Y, neighbors)
    gamma = float(gamma)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    # shifting by the row minimum leaves the ratio unchanged and keeps the
    # largest kernel value at exactly 1, so the normaliser cannot underflow
    logits = -gamma * (d2 - d2.min(axis=1, keepdims=True))
    K = np.exp(logits)
    Z = K.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(Z[:, 0]) | (Z[:, 0] <= 0)
    W = np.divide(K, Z, out=np.zeros_like(K), where=~bad[:, None])
    W[bad] = 1.0 / neighbors.shape[1]
    return SimilarityGraph(neighbors, W, gamma, neighbors.shape[1])


def similarity_graph(Y, k: int, gamma="median") -> SimilarityGraph:
    nb = knn_neighbors(Y, k)
    g = build_similarity(Y, nb, gamma)
    return SimilarityGraph(g.neighbors, g.weights, g.gamma, k)

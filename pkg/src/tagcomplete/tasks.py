"""Evaluation protocols: tag masking, annotation and retrieval metrics,
k-fold cross-validation, and a synthetic cluster/tag-block generator."""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conv import PatchMatrix
from .objective import HyperParams
from .optimizer import run

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    metric: str
    per_fold: list
    mean: float
    params: dict = field(default_factory=dict)


def mask_generate(T_full, rho: float, seed=0):
    """Hide floor(rho * #positives) positive entries chosen uniformly at random.

    Negatives stay observed; returns ``(T_hat, Phi)``.
    """
    T_full = np.asarray(T_full, dtype=float)
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    pos = np.flatnonzero(T_full.ravel() == 1)
    n_drop = int(np.floor(rho * pos.size))
    rng = np.random.default_rng(seed)
    drop = rng.choice(pos, size=n_drop, replace=False)
    Phi = np.ones(T_full.size)
    Phi[drop] = 0.0
    Phi = Phi.reshape(T_full.shape)
    T_hat = T_full * Phi
    seen = T_hat.sum(axis=1) == 0
    if np.any(seen):
        log.info("%d tag(s) left without an observed positive", int(seen.sum()))
    seen = T_hat.sum(axis=0) == 0
    if np.any(seen):
        log.info("%d image(s) left without an observed positive", int(seen.sum()))
    return T_hat, Phi


def _rank(scores):
    scores = np.asarray(scores, dtype=float)
    # stable sort on negated scores: descending, ties by smaller index
    return np.argsort(-scores, kind="stable")


def annotate_topk(t_column, K: int) -> list:
    if K < 1:
        raise ValueError("K must be positive")
    return _rank(t_column)[:K].tolist()


def retrieve(t_row) -> list:
    return _rank(t_row).tolist()


def precision_at_k(predicted: Sequence, truth, K: int) -> float:
    if K < 1:
        raise ValueError("K must be positive")
    truth = set(truth)
    return sum(1 for p in list(predicted)[:K] if p in truth) / K


def pos_at_top(ranking: Sequence, relevant):
    """Fraction of relevant items ranked above the first non-relevant one.

    Returns None when there is nothing relevant (the query is undefined).
    """
    ranking = list(ranking)
    if not ranking:
        raise ValueError("empty ranking")
    relevant = set(relevant)
    total = sum(1 for r in ranking if r in relevant)
    if total == 0:
        return None
    above = 0
    for r in ranking:
        if r not in relevant:
            break
        above += 1
    return above / total


def fold_partition(n: int, folds: int, seed=0) -> list:
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be between 2 and {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(p) for p in np.array_split(perm, folds)]


def cross_validate(patches, T_full, folds: int = 4, rho: float = 0.3,
                   hp: HyperParams | None = None, seed=0, K: int = 5) -> dict:
    """k-fold annotation/retrieval evaluation.

    Test images of a fold have every tag hidden; training images keep a
    rho-masked view.  Precision@K is averaged over test images and
    Pos@Top over tags (as queries ranking the test images).
    """
    hp = hp or HyperParams()
    T_full = np.asarray(T_full, dtype=float)
    m, n = T_full.shape
    if len(patches) != n:
        raise ValueError("tag matrix and dataset disagree on the number of images")
    parts = fold_partition(n, folds, seed)
    prec, ptop = [], []
    for f, test in enumerate(parts):
        train = np.setdiff1d(np.arange(n), test)
        T_hat = np.zeros_like(T_full)
        Phi = np.zeros_like(T_full)
        T_hat[:, train], Phi[:, train] = mask_generate(T_full[:, train], rho, seed + 1 + f)
        ts = run(patches, T_hat, Phi, hp, seed + 1 + f)
        T = ts.state.T
        prec.append(float(np.mean([
            precision_at_k(annotate_topk(T[:, i], K), np.flatnonzero(T_full[:, i]), K)
            for i in test
        ])))
        scores = []
        for j in range(m):
            order = test[retrieve(T[j, test])]
            v = pos_at_top(order.tolist(), test[T_full[j, test] == 1].tolist())
            if v is not None:
                scores.append(v)
        ptop.append(float(np.mean(scores)) if scores else float("nan"))
        log.info("fold %d: precision@%d %.4f pos@top %.4f", f, K, prec[-1], ptop[-1])
    params = {"K": K, "rho": rho, "seed": seed, "folds": folds}
    return {
        f"precision@{K}": EvalReport(f"precision@{K}", prec, float(np.mean(prec)), params),
        "pos@top": EvalReport("pos@top", ptop, float(np.nanmean(ptop)), params),
    }


def cluster_tags(m: int, clusters: int, tags_per_cluster: int | None = None) -> np.ndarray:
    """Binary clusters x m block: cluster c owns a cyclic run of tags.

    Runs start ``m // clusters`` apart, so neighbouring clusters overlap
    when each owns more than its share.
    """
    size = tags_per_cluster or -(-m // 2)
    shift = max(m // clusters, 1)
    B = np.zeros((clusters, m))
    for c in range(clusters):
        B[c, (c * shift + np.arange(size)) % m] = 1.0
    return B


def synth_dataset(n_images: int, m_tags: int, d: int, patches_per_image: int,
                  clusters: int, noise_sigma: float, seed=0, tags_per_cluster: int | None = None):
    """Cluster-structured patches with cluster-determined tags.

    Returns ``(patches, T_full, labels)``: a list of PatchMatrix, the
    m x n binary tag matrix and each image's cluster.
    """
    if clusters < 1 or clusters > n_images:
        raise ValueError("need 1 <= clusters <= n_images")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(clusters, d))
    labels = rng.permutation(np.arange(n_images) % clusters)
    block = cluster_tags(m_tags, clusters, tags_per_cluster)
    patches = []
    for i, c in enumerate(labels):
        X = centers[c][:, None] + noise_sigma * rng.normal(size=(d, patches_per_image))
        patches.append(PatchMatrix(X, f"img{i:04d}"))
    T_full = block[labels].T.copy()
    return patches, T_full, labels

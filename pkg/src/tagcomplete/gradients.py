"""Analytic gradients of the objective with the similarity graph held fixed."""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .conv import ConvRepr, FilterBank, filter_gradient
from .graph import SimilarityGraph
from .objective import HyperParams, Predictor, TagState


def smoothed_sign(T, eps):
    return T / np.sqrt(T * T + eps * eps)


def _residual(state, Y, pred):
    Y = np.asarray(Y, dtype=float)
    if Y.shape[1] != state.n or pred.U.shape != (state.m, Y.shape[0]):
        raise ValueError("shape mismatch between T, Y and the predictor")
    return state.T - pred.predict(Y)


def smoothness_grad(T, graph: SimilarityGraph, one_sided: bool = False):
    """Gradient of sum_{i,i'} S_ii' ||t_i - t_i'||^2 with respect to T.

    The exact gradient needs both S and S^T because S is not symmetric;
    ``one_sided`` keeps only the S_ii' half.
    """
    S = graph.matrix()
    row = np.asarray(S.sum(axis=1)).ravel()
    # T @ S^T, T @ S with sparse S on the right
    TSt = (S @ T.T).T
    g = 2.0 * (T * row - TSt)
    if one_sided:
        return g
    col = np.asarray(S.sum(axis=0)).ravel()
    TS = (S.T @ T.T).T
    return g + 2.0 * (T * col - TS)


def grad_T(state: TagState, Y, pred: Predictor, graph: SimilarityGraph, hp: HyperParams):
    if graph.n != state.n:
        raise ValueError("similarity graph size does not match the number of images")
    R = _residual(state, Y, pred)
    g = 2.0 * state.Phi * (state.T - state.T_hat)
    g += 2.0 * hp.lambda1 * R
    if hp.lambda2:
        g += hp.lambda2 * smoothness_grad(state.T, graph, one_sided=hp.paper_gradient)
    g += hp.lambda3 * smoothed_sign(state.T, hp.epsilon_l1)
    return g


def grad_U(state: TagState, Y, pred: Predictor, hp: HyperParams):
    R = _residual(state, Y, pred)
    return -2.0 * hp.lambda1 * R @ np.asarray(Y, dtype=float).T


def grad_b(state: TagState, Y, pred: Predictor, hp: HyperParams):
    R = _residual(state, Y, pred)
    return 2.0 * hp.lambda1 * R.sum(axis=1)


def grad_W(patches: Sequence, bank: FilterBank, reprs: Sequence[ConvRepr],
           state: TagState, pred: Predictor, hp: HyperParams):
    if len(reprs) != state.n or len(patches) != state.n:
        raise ValueError("representations are stale: expected one per image")
    Y = np.column_stack([rep.y for rep in reprs])
    R = _residual(state, Y, pred)
    upstream = -2.0 * hp.lambda1 * pred.U.T @ R
    G = np.zeros_like(bank.W)
    for i, (X, rep) in enumerate(zip(patches, reprs)):
        G += filter_gradient(X, bank, rep, upstream[:, i])
    return G


@dataclass
class FDReport:
    max_rel_err: float
    passed: bool
    numeric: np.ndarray


def finite_difference_check(f: Callable, x0, analytic, h: float = 1e-5,
                            tol: float = 1e-4, floor: float = 1e-4) -> FDReport:
    """Compare an analytic gradient with central differences of ``f``.

    Per coordinate the error is ``|a - fd| / max(|a|, |fd|, floor)``; the
    floor keeps coordinates whose true gradient is ~0 from amplifying
    round-off in ``f``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x0 = np.asarray(x0, dtype=float).ravel()
    analytic = np.asarray(analytic, dtype=float).ravel()
    if analytic.shape != x0.shape:
        raise ValueError("analytic gradient and x0 differ in size")
    fd = np.empty_like(x0)
    x = x0.copy()
    for j in range(x0.size):
        x[j] = x0[j] + h
        fp = f(x)
        x[j] = x0[j] - h
        fm = f(x)
        x[j] = x0[j]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {j}")
        fd[j] = (fp - fm) / (2.0 * h)
    if x0.size == 0:
        return FDReport(0.0, True, fd)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    err = float(np.max(np.abs(analytic - fd) / denom))
    return FDReport(err, err <= tol, fd)

"""The four-term tag completion objective.

    O = sum_ji phi_ji (t_ji - that_ji)^2                  consistency
      + lambda1 * sum_i ||t_i - (U y_i - b)||^2           prediction
      + lambda2 * sum_{i,i'} S_ii' ||t_i - t_i'||^2       smoothness
      + lambda3 * sum_ji (sqrt(t_ji^2 + eps^2) - eps)     smoothed L1

T, T_hat and Phi are m x n (tags x images); Y is r x n.
"""

from dataclasses import dataclass, fields
from typing import NamedTuple, Union

import numpy as np

from .conv import NONLINEARITIES
from .graph import SimilarityGraph


@dataclass
class TagState:
    T: np.ndarray
    T_hat: np.ndarray
    Phi: np.ndarray

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        self.T_hat = np.asarray(self.T_hat, dtype=float)
        self.Phi = np.asarray(self.Phi, dtype=float)
        if not (self.T.shape == self.T_hat.shape == self.Phi.shape) or self.T.ndim != 2:
            raise ValueError(
                f"shape mismatch: T {self.T.shape}, T_hat {self.T_hat.shape}, Phi {self.Phi.shape}"
            )
        for name in ("T_hat", "Phi"):
            a = getattr(self, name)
            if not np.all((a == 0) | (a == 1)):
                raise ValueError(f"{name} must be binary")

    @property
    def m(self) -> int:
        return self.T.shape[0]

    @property
    def n(self) -> int:
        return self.T.shape[1]

    def with_T(self, T):
        return TagState(T, self.T_hat, self.Phi)


@dataclass
class Predictor:
    """Linear tag predictor t = U y - b."""

    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.U.ndim != 2 or self.U.shape[0] != self.b.shape[0]:
            raise ValueError(f"U {self.U.shape} and b {self.b.shape} disagree on the tag count")

    def predict(self, Y):
        return self.U @ Y - self.b[:, None]


@dataclass
class HyperParams:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.1
    gamma: Union[float, str] = "median"
    k: int = 5
    eta: float = 1e-2
    epsilon_l1: float = 1e-6
    max_outer: int = 200
    max_inner: int = 5
    tol: float = 1e-5
    nonlinearity: str = "tanh"
    window: int = 8
    stride: int = 4
    paper_gradient: bool = False
    n_filters: int = 16

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if isinstance(self.gamma, str):
            if self.gamma != "median":
                raise ValueError("gamma must be a positive number or 'median'")
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")
        for name in ("eta", "epsilon_l1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.tol >= 0:
            raise ValueError("tol must be non-negative")
        for name in ("k", "max_inner", "window", "stride", "n_filters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.max_outer < 0:
            raise ValueError("max_outer must be non-negative")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class Breakdown(NamedTuple):
    consistency: float
    prediction: float
    smoothness: float
    sparsity: float


def _check_n(state, *arrays):
    for a in arrays:
        if a.shape[-1] != state.n:
            raise ValueError(f"expected {state.n} images, got {a.shape[-1]}")


def consistency_term(state: TagState) -> float:
    R = state.T - state.T_hat
    return float(np.sum(state.Phi * R * R))


def prediction_term(state: TagState, Y, pred: Predictor) -> float:
    Y = np.asarray(Y, dtype=float)
    _check_n(state, Y)
    if pred.U.shape != (state.m, Y.shape[0]):
        raise ValueError(f"U has shape {pred.U.shape}, expected {(state.m, Y.shape[0])}")
    R = state.T - pred.predict(Y)
    return float(np.sum(R * R))


def smoothness_term(state: TagState, graph: SimilarityGraph) -> float:
    if graph.n != state.n:
        raise ValueError("similarity graph size does not match the number of images")
    diff = state.T[:, :, None] - state.T[:, graph.neighbors]
    return float(np.sum(graph.weights * np.einsum("mnk,mnk->nk", diff, diff)))


def sparsity_term(state: TagState, epsilon_l1: float) -> float:
    eps = float(epsilon_l1)
    if not eps > 0:
        raise ValueError("epsilon_l1 must be positive")
    return float(np.sum(np.sqrt(state.T ** 2 + eps ** 2) - eps))


def objective_total(state, Y, pred, graph, hp: HyperParams):
    """Return ``(total, Breakdown)``; breakdown terms are unweighted."""
    br = Breakdown(
        consistency_term(state),
        prediction_term(state, Y, pred),
        smoothness_term(state, graph),
        sparsity_term(state, hp.epsilon_l1),
    )
    total = (
        br.consistency
        + hp.lambda1 * br.prediction
        + hp.lambda2 * br.smoothness
        + hp.lambda3 * br.sparsity
    )
    return total, br

"""Alternating gradient descent over T, U, b and W.

Each outer step rebuilds the kNN graph from the current representations,
then runs ``max_inner`` rounds of gradient steps on T, U, b, W in that
order with S fixed.  Every step backtracks (halving) until it does not
increase the fixed-S objective.  Trace rows are evaluated with the graph
of the representations at the end of the step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conv import FilterBank, PatchBatch
from .gradients import grad_T, grad_U, grad_W, grad_b
from .graph import SimilarityGraph, similarity_graph
from .objective import Breakdown, HyperParams, Predictor, TagState, objective_total

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
PATIENCE = 3
RIDGE = 1e-3
TRACE_HEADER = ("iter", "total", "consistency", "prediction", "smoothness", "sparsity")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TraceRow:
    iteration: int
    total: float
    breakdown: Breakdown

    def as_tuple(self):
        return (self.iteration, self.total, *self.breakdown)


@dataclass
class TrainState:
    state: TagState
    pred: Predictor
    bank: FilterBank
    Y: np.ndarray
    graph: SimilarityGraph
    batch: PatchBatch = field(repr=False)
    trace: list = field(default_factory=list)
    # per outer step: objective after each accepted update, starting value first
    inner_history: list = field(default_factory=list, repr=False)

    def objective(self, hp):
        return objective_total(self.state, self.Y, self.pred, self.graph, hp)


def _initial_T(T_hat, Phi):
    obs = Phi.sum(axis=1)
    if obs.sum() == 0:
        raise ValueError("nothing observed")
    global_freq = (T_hat * Phi).sum() / Phi.sum()
    freq = np.full(T_hat.shape[0], global_freq)
    has = obs > 0
    freq[has] = (T_hat * Phi).sum(axis=1)[has] / obs[has]
    return np.where(Phi == 1, T_hat, freq[:, None])


def fit_predictor(T, Y, ridge=RIDGE) -> Predictor:
    """Ridge fit of t ~ U y - b over all columns."""
    m, n = T.shape
    r = Y.shape[0]
    if n < 2:
        return Predictor(np.zeros((m, r)), np.zeros(m))
    Z = np.vstack([Y, -np.ones((1, n))])
    A = Z @ Z.T + ridge * np.eye(r + 1)
    coef = np.linalg.solve(A, Z @ T.T).T
    return Predictor(coef[:, :r], coef[:, r])


def initialize(patches: Sequence, T_hat, Phi, hp: HyperParams, seed=0) -> TrainState:
    if len(patches) == 0:
        raise ValueError("empty dataset")
    T_hat = np.asarray(T_hat, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    batch = PatchBatch(patches)
    if T_hat.shape[1] != batch.n:
        raise ValueError(f"tag matrix has {T_hat.shape[1]} images, dataset has {batch.n}")
    T_hat = T_hat * Phi
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 1.0 / math.sqrt(batch.d), size=(batch.d, hp.n_filters))
    bank = FilterBank(W, hp.nonlinearity)
    state = TagState(_initial_T(T_hat, Phi), T_hat, Phi)
    Y = batch.forward(bank)[0]
    _check_finite(Y, "representations")
    pred = fit_predictor(state.T, Y)
    graph = similarity_graph(Y, hp.k, hp.gamma)
    ts = TrainState(state, pred, bank, Y, graph, batch)
    total, br = ts.objective(hp)
    _check_finite(total, "initial state")
    ts.trace.append(TraceRow(0, total, br))
    return ts


def _check_finite(value, block):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"diverged (reduce eta): non-finite values in {block}")


def _backtrack(x, g, evaluate, f0, eta):
    """Try x - eta*g, halving eta until the objective does not increase."""
    step = eta
    for _ in range(MAX_HALVINGS + 1):
        cand = x - step * g
        f, extra = evaluate(cand)
        if np.isfinite(f) and f <= f0:
            return cand, f, extra
        step *= 0.5
    return None, f0, None


BLOCKS = ("T", "U", "b", "W")


def outer_step(ts: TrainState, hp: HyperParams, blocks=BLOCKS) -> TrainState:
    """Refresh S, run the fixed-S inner rounds, append a trace row.

    ``blocks`` selects which variables move; the others stay frozen.
    """
    unknown = set(blocks) - set(BLOCKS)
    if unknown:
        raise ValueError(f"unknown variable blocks {sorted(unknown)}")
    _check_finite(ts.Y, "representations")
    ts.graph = similarity_graph(ts.Y, hp.k, hp.gamma)
    graph = ts.graph

    def obj(state, Y, pred):
        return objective_total(state, Y, pred, graph, hp)[0]

    # each block: (current value, gradient, evaluate candidate, install candidate)
    def block_T():
        st, pred = ts.state, ts.pred
        return (st.T, grad_T(st, ts.Y, pred, graph, hp),
                lambda c: (obj(st.with_T(c), ts.Y, pred), None),
                lambda c, _: setattr(ts, "state", st.with_T(c)))

    def block_U():
        st, pred = ts.state, ts.pred
        return (pred.U, grad_U(st, ts.Y, pred, hp),
                lambda c: (obj(st, ts.Y, Predictor(c, pred.b)), None),
                lambda c, _: setattr(ts, "pred", Predictor(c, pred.b)))

    def block_b():
        st, pred = ts.state, ts.pred
        return (pred.b, grad_b(st, ts.Y, pred, hp),
                lambda c: (obj(st, ts.Y, Predictor(pred.U, c)), None),
                lambda c, _: setattr(ts, "pred", Predictor(pred.U, c)))

    def block_W():
        # representations move with the filters; S does not
        st, pred, bank = ts.state, ts.pred, ts.bank
        reprs = ts.batch.representations(bank)

        def evaluate(c):
            Yc = ts.batch.forward(bank.with_weights(c))[0]
            return obj(st, Yc, pred), Yc

        def install(c, Yc):
            ts.bank = bank.with_weights(c)
            ts.Y = Yc

        return bank.W, grad_W(ts.batch.mats, bank, reprs, st, pred, hp), evaluate, install

    makers = {"T": block_T, "U": block_U, "b": block_b, "W": block_W}
    f = obj(ts.state, ts.Y, ts.pred)
    _check_finite(f, "objective")
    history = [f]
    for _ in range(hp.max_inner):
        for name in BLOCKS:
            if name not in blocks:
                continue
            x, g, evaluate, install = makers[name]()
            _check_finite(g, f"{name} gradient")
            new, f, extra = _backtrack(x, g, evaluate, f, hp.eta)
            if new is not None:
                _check_finite(new, name)
                install(new, extra)
            history.append(f)

    # the trace uses S rebuilt from the final Y so a checkpoint of (W, U, b, T)
    # reproduces it; the next outer step would build the same graph
    _check_finite(ts.Y, "representations")
    ts.graph = similarity_graph(ts.Y, hp.k, hp.gamma)
    total, br = ts.objective(hp)
    _check_finite(total, "objective")
    ts.inner_history.append(history)
    ts.trace.append(TraceRow(len(ts.trace), total, br))
    return ts


def _rel_change(prev, cur):
    return abs(prev - cur) / max(abs(prev), 1e-300)


def run(patches: Sequence, T_hat, Phi, hp: HyperParams, seed=0) -> TrainState:
    """Initialise and iterate until ``max_outer`` or convergence.

    Convergence means a relative objective change below ``tol`` on
    three consecutive outer steps; an infinite ``tol`` stops after the
    first step.
    """
    ts = initialize(patches, T_hat, Phi, hp, seed)
    need = 1 if math.isinf(hp.tol) else PATIENCE
    calm = 0
    for it in range(hp.max_outer):
        outer_step(ts, hp)
        change = _rel_change(ts.trace[-2].total, ts.trace[-1].total)
        log.debug("outer %d objective %.6g rel change %.3g", it + 1, ts.trace[-1].total, change)
        calm = calm + 1 if change < hp.tol else 0
        if calm >= need:
            break
    return ts


def export_trace(ts: TrainState):
    return [row.as_tuple() for row in ts.trace]

"""Randomised finite-difference verification of the four analytic gradients."""

from dataclasses import dataclass

import numpy as np

from .conv import FilterBank, PatchBatch, PatchMatrix, activate
from .gradients import finite_difference_check, grad_T, grad_U, grad_W, grad_b
from .graph import similarity_graph
from .objective import HyperParams, Predictor, TagState, objective_total

SIZES = {
    # (max m, max n, max r, max d, max patches per image)
    "small": (6, 6, 5, 5, 4),
    "medium": (10, 12, 8, 8, 6),
}
TIE_GAP = 1e-3
MIN_ABS_T = 1e-2


@dataclass
class Instance:
    state: TagState
    pred: Predictor
    bank: FilterBank
    batch: PatchBatch
    graph: object
    hp: HyperParams

    @property
    def Y(self):
        return self.batch.forward(self.bank)[0]


def _tie_free(batch, bank):
    G = activate(bank.W.T @ batch.X, bank.nonlinearity)
    bounds = np.append(batch.offsets, batch.X.shape[1])
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a < 2:
            continue
        top = np.sort(G[:, a:b], axis=1)
        if np.min(top[:, -1] - top[:, -2]) <= TIE_GAP:
            return False
    return True


def random_instance(rng, size="small", nonlinearity="tanh") -> Instance:
    """Draw a random problem with well separated pooling maxima and |t| > 1e-2."""
    mm, mn, mr, md, mp = SIZES[size]
    m = int(rng.integers(1, mm + 1))
    n = int(rng.integers(2, mn + 1))
    r = int(rng.integers(1, mr + 1))
    d = int(rng.integers(1, md + 1))
    lam = rng.choice([0.1, 1.0], size=3)
    hp = HyperParams(lambda1=lam[0], lambda2=lam[1], lambda3=lam[2],
                     gamma=float(rng.uniform(0.2, 2.0)), k=int(rng.integers(1, n)),
                     nonlinearity=nonlinearity, n_filters=r)
    while True:
        patches = [PatchMatrix(rng.normal(size=(d, int(rng.integers(1, mp + 1))))) for _ in range(n)]
        batch = PatchBatch(patches)
        bank = FilterBank(rng.normal(size=(d, r)), nonlinearity)
        if _tie_free(batch, bank):
            break
    T = rng.normal(size=(m, n))
    while np.any(np.abs(T) <= MIN_ABS_T):
        small = np.abs(T) <= MIN_ABS_T
        T[small] = rng.normal(size=int(small.sum()))
    Phi = (rng.random((m, n)) < 0.6).astype(float)
    T_hat = (rng.random((m, n)) < 0.5).astype(float) * Phi
    pred = Predictor(rng.normal(size=(m, r)), rng.normal(size=m))
    graph = similarity_graph(batch.forward(bank)[0], hp.k, hp.gamma)
    return Instance(TagState(T, T_hat, Phi), pred, bank, batch, graph, hp)


def check_instance(inst: Instance, h=1e-5, tol=1e-4) -> dict:
    """Max relative error of each analytic gradient against central differences."""
    st, pred, bank, graph, hp = inst.state, inst.pred, inst.bank, inst.graph, inst.hp
    Y = inst.Y
    m, n = st.T.shape

    def f_T(x):
        return objective_total(st.with_T(x.reshape(m, n)), Y, pred, graph, hp)[0]

    def f_U(x):
        return objective_total(st, Y, Predictor(x.reshape(pred.U.shape), pred.b), graph, hp)[0]

    def f_b(x):
        return objective_total(st, Y, Predictor(pred.U, x), graph, hp)[0]

    def f_W(x):
        Yw = inst.batch.forward(bank.with_weights(x.reshape(bank.W.shape)))[0]
        return objective_total(st, Yw, pred, graph, hp)[0]

    reprs = inst.batch.representations(bank)
    analytic = {
        "T": (f_T, st.T, grad_T(st, Y, pred, graph, hp)),
        "U": (f_U, pred.U, grad_U(st, Y, pred, hp)),
        "b": (f_b, pred.b, grad_b(st, Y, pred, hp)),
        "W": (f_W, bank.W, grad_W(inst.batch.mats, bank, reprs, st, pred, hp)),
    }
    return {
        name: finite_difference_check(f, x0, g, h=h, tol=tol)
        for name, (f, x0, g) in analytic.items()
    }


def gradient_suite(seed=0, n_instances=20, size="small", h=1e-5, tol=1e-4):
    """Return rows ``(instance, block, max_rel_err, passed)``."""
    rng = np.random.default_rng(seed)
    rows = []
    for idx in range(n_instances):
        inst = random_instance(rng, size)
        for name, rep in check_instance(inst, h, tol).items():
            rows.append((idx, name, rep.max_rel_err, rep.passed))
    return rows

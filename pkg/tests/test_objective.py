import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagcomplete.graph import SimilarityGraph, similarity_graph
from tagcomplete.objective import (
    HyperParams, Predictor, TagState, consistency_term, objective_total, prediction_term,
    smoothness_term, sparsity_term,
)


def loop_consistency(T, T_hat, Phi):
    return sum(Phi[j, i] * (T[j, i] - T_hat[j, i]) ** 2
               for j in range(T.shape[0]) for i in range(T.shape[1]))


def loop_prediction(T, Y, U, b):
    m, n = T.shape
    total = 0.0
    for i in range(n):
        for j in range(m):
            p = sum(U[j, a] * Y[a, i] for a in range(Y.shape[0])) - b[j]
            total += (T[j, i] - p) ** 2
    return total


def loop_smoothness(T, S):
    n = T.shape[1]
    return sum(S[i, k] * sum((T[:, i] - T[:, k]) ** 2) for i in range(n) for k in range(n))


def random_problem(rng, m=3, n=5, r=2):
    T = rng.normal(size=(m, n))
    Phi = (rng.random((m, n)) < 0.5).astype(float)
    T_hat = (rng.random((m, n)) < 0.5).astype(float) * Phi
    Y = rng.normal(size=(r, n))
    pred = Predictor(rng.normal(size=(m, r)), rng.normal(size=m))
    graph = similarity_graph(Y, 2, 1.0)
    return TagState(T, T_hat, Phi), Y, pred, graph


class TestConsistency:
    def test_exact_agreement(self):
        T = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert consistency_term(TagState(T, T, np.ones_like(T))) == 0.0

    def test_fully_masked(self, rng):
        T = rng.normal(size=(3, 4))
        assert consistency_term(TagState(T, np.zeros((3, 4)), np.zeros((3, 4)))) == 0.0

    def test_hand_sum(self):
        s = TagState([[1, 0], [0, 1]], [[0, 0], [0, 1]], [[1, 0], [1, 1]])
        assert consistency_term(s) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            TagState(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))

    def test_masked_entries_do_not_matter(self, rng):
        s, *_ = random_problem(rng)
        T2 = s.T.copy()
        T2[s.Phi == 0] += 5.0
        assert consistency_term(s.with_T(T2)) == pytest.approx(consistency_term(s), abs=1e-12)


class TestPrediction:
    def test_perfect_predictor(self, rng):
        Y = rng.normal(size=(2, 4))
        pred = Predictor(rng.normal(size=(3, 2)), rng.normal(size=3))
        s = TagState(pred.U @ Y - pred.b[:, None], np.zeros((3, 4)), np.zeros((3, 4)))
        assert prediction_term(s, Y, pred) == pytest.approx(0.0, abs=1e-24)

    def test_zero_predictor(self, rng):
        T = rng.normal(size=(3, 4))
        s = TagState(T, np.zeros((3, 4)), np.zeros((3, 4)))
        val = prediction_term(s, rng.normal(size=(2, 4)), Predictor(np.zeros((3, 2)), np.zeros(3)))
        assert val == pytest.approx(np.sum(T ** 2))

    def test_loop_oracle(self, rng):
        T, Y = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        U, b = rng.normal(size=(3, 2)), rng.normal(size=3)
        s = TagState(T, np.zeros((3, 4)), np.zeros((3, 4)))
        assert prediction_term(s, Y, Predictor(U, b)) == pytest.approx(loop_prediction(T, Y, U, b), rel=1e-12)

    def test_shape_mismatch(self, rng):
        s = TagState(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((3, 4)))
        with pytest.raises(ValueError):
            prediction_term(s, np.zeros((2, 5)), Predictor(np.zeros((3, 2)), np.zeros(3)))


class TestSmoothness:
    def test_constant_columns(self, rng):
        T = np.repeat(rng.normal(size=(3, 1)), 6, axis=1)
        g = similarity_graph(rng.normal(size=(2, 6)), 3, 1.0)
        assert smoothness_term(TagState(T, np.zeros_like(T), np.zeros_like(T)), g) == 0.0

    def test_linear_in_S(self, rng):
        s, Y, pred, g = random_problem(rng)
        assert smoothness_term(s, g.scaled(2.0)) == pytest.approx(2 * smoothness_term(s, g))

    def test_chain_by_hand(self):
        # 0 -> 1, 1 -> 2, 2 -> 1 with weights 1 (k = 1)
        g = SimilarityGraph(np.array([[1], [2], [1]]), np.ones((3, 1)), 1.0, 1)
        T = np.array([[0.0, 1.0, 3.0], [1.0, 1.0, 0.0]])
        s = TagState(T, np.zeros_like(T), np.zeros_like(T))
        # ||t0-t1||^2 = 1, ||t1-t2||^2 = 4 + 1 = 5, ||t2-t1||^2 = 5
        assert smoothness_term(s, g) == 11.0

    def test_dense_oracle(self, rng):
        s, Y, pred, g = random_problem(rng, n=7)
        assert smoothness_term(s, g) == pytest.approx(loop_smoothness(s.T, g.matrix().toarray()))

    def test_translation_invariant(self, rng):
        s, Y, pred, g = random_problem(rng)
        shifted = s.with_T(s.T + rng.normal(size=(s.m, 1)))
        assert smoothness_term(shifted, g) == pytest.approx(smoothness_term(s, g), rel=1e-10)


class TestSparsity:
    def test_zero(self):
        T = np.zeros((2, 3))
        assert sparsity_term(TagState(T, T, T), 1e-6) == 0.0

    def test_single_entry(self):
        s = TagState([[3.0]], [[0]], [[0]])
        assert sparsity_term(s, 1e-8) == pytest.approx(3.0, abs=1e-7)

    def test_close_to_l1(self, rng):
        T = rng.normal(size=(4, 5))
        eps = 1e-3
        val = sparsity_term(TagState(T, np.zeros_like(T), np.zeros_like(T)), eps)
        assert abs(val - np.abs(T).sum()) <= eps * T.size


class TestTotal:
    def test_all_zero_weights_at_truth(self):
        T = np.array([[1.0, 0.0], [0.0, 1.0]])
        s = TagState(T, T, np.ones_like(T))
        hp = HyperParams(lambda1=0, lambda2=0, lambda3=0)
        Y = np.array([[0.0, 1.0]])
        total, _ = objective_total(s, Y, Predictor(np.ones((2, 1)), np.zeros(2)), similarity_graph(Y, 1, 1.0), hp)
        assert total == 0.0

    def test_matches_termwise_oracles(self, rng):
        s, Y, pred, g = random_problem(rng)
        hp = HyperParams(lambda1=0.3, lambda2=1.7, lambda3=0.2, epsilon_l1=1e-6)
        total, br = objective_total(s, Y, pred, g, hp)
        expect = (loop_consistency(s.T, s.T_hat, s.Phi)
                  + 0.3 * loop_prediction(s.T, Y, pred.U, pred.b)
                  + 1.7 * loop_smoothness(s.T, g.matrix().toarray())
                  + 0.2 * sum(np.sqrt(t * t + 1e-12) - 1e-6 for t in s.T.ravel()))
        assert total == pytest.approx(expect, rel=1e-12)
        assert all(v >= 0 for v in br)
        weighted = br.consistency + 0.3 * br.prediction + 1.7 * br.smoothness + 0.2 * br.sparsity
        assert abs(total - weighted) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.integers(0, 1000))
    def test_linear_in_each_lambda(self, l1, l2, l3, seed):
        s, Y, pred, g = random_problem(np.random.default_rng(seed))
        total, br = objective_total(s, Y, pred, g, HyperParams(lambda1=l1, lambda2=l2, lambda3=l3))
        assert total >= 0
        assert total == pytest.approx(br[0] + l1 * br[1] + l2 * br[2] + l3 * br[3], rel=1e-12, abs=1e-12)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        HyperParams(lambda1=-1)
    with pytest.raises(ValueError):
        HyperParams(gamma=0.0)
    with pytest.raises(ValueError):
        HyperParams(nonlinearity="sigmoid")
    assert HyperParams(tol=0).tol == 0

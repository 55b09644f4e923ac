import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagcomplete.conv import (
    FilterBank, PatchBatch, PatchMatrix, activate, conv_forward, extract_patches, filter_gradient,
)
from tagcomplete.gradients import finite_difference_check


def brute_patches(img, window, stride):
    H, W = img.shape
    cols = []
    for top in range(0, H - window + 1, stride):
        for left in range(0, W - window + 1, stride):
            col = []
            for a in range(window):
                for b in range(window):
                    col.append(img[top + a, left + b])
            cols.append(col)
    return np.array(cols, dtype=float).T


def brute_forward(X, W, kind):
    d, n = X.shape
    r = W.shape[1]
    y = np.empty(r)
    arg = np.empty(r, dtype=int)
    for k in range(r):
        best, where = -np.inf, -1
        for j in range(n):
            z = sum(W[a, k] * X[a, j] for a in range(d))
            v = {"tanh": np.tanh(z), "relu": max(z, 0.0), "identity": z}[kind]
            if v > best:
                best, where = v, j
        y[k], arg[k] = best, where
    return y, arg


class TestExtractPatches:
    def test_tiling(self):
        img = np.arange(16.0).reshape(4, 4)
        pm = extract_patches(img, 2, 2)
        assert pm.d == 4 and pm.n_patches == 4
        np.testing.assert_array_equal(pm.data[:, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(pm.data[:, 1], [2, 3, 6, 7])
        np.testing.assert_array_equal(pm.data[:, 2], [8, 9, 12, 13])
        np.testing.assert_array_equal(pm.data[:, 3], [10, 11, 14, 15])

    def test_zero_image(self):
        pm = extract_patches(np.zeros((3, 3)), 2, 1)
        assert pm.data.shape == (4, 4)
        assert not pm.data.any()

    def test_5x4_against_brute_force(self):
        img = np.arange(20.0).reshape(5, 4)
        pm = extract_patches(img, 3, 1)
        assert pm.n_patches == 6
        np.testing.assert_array_equal(pm.data, brute_patches(img, 3, 1))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(1, 4), st.integers(0, 10**6))
    def test_matches_brute_force_up_to_8x8(self, H, W, window, stride, seed):
        window = min(window, H, W)
        img = np.random.default_rng(seed).random((H, W))
        pm = extract_patches(img, window, stride)
        expect_n = ((H - window) // stride + 1) * ((W - window) // stride + 1)
        assert pm.n_patches == expect_n
        np.testing.assert_array_equal(pm.data, brute_patches(img, window, stride))

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="patch window exceeds image"):
            extract_patches(np.zeros((3, 5)), 4, 1)

    def test_empty_image(self):
        with pytest.raises(ValueError):
            extract_patches(np.zeros((0, 0)), 1, 1)


class TestConvForward:
    def test_single_patch_identity(self, rng):
        x = rng.normal(size=(3, 1))
        W = rng.normal(size=(3, 4))
        rep = conv_forward(x, FilterBank(W, "identity"))
        np.testing.assert_allclose(rep.y, W.T @ x[:, 0])
        assert not rep.argmax_patch.any()

    def test_relu_floor(self):
        X = np.abs(np.random.default_rng(0).normal(size=(3, 5)))
        W = -np.abs(np.random.default_rng(1).normal(size=(3, 2)))
        rep = conv_forward(X, FilterBank(W, "relu"))
        np.testing.assert_array_equal(rep.y, 0.0)
        # every patch ties at 0; smallest index wins
        np.testing.assert_array_equal(rep.argmax_patch, 0)

    def test_tanh_against_loop_oracle(self, rng):
        X = rng.normal(size=(3, 5))
        W = rng.normal(size=(3, 2))
        rep = conv_forward(X, FilterBank(W, "tanh"))
        y, arg = brute_forward(X, W, "tanh")
        np.testing.assert_allclose(rep.y, y, rtol=1e-14)
        np.testing.assert_array_equal(rep.argmax_patch, arg)

    def test_tie_breaks_to_smallest_index(self):
        X = np.array([[1.0, 2.0, 2.0]])
        rep = conv_forward(X, FilterBank(np.array([[1.0]]), "identity"))
        assert rep.argmax_patch[0] == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            conv_forward(np.zeros((3, 2)), FilterBank(np.zeros((4, 1))))

    @pytest.mark.parametrize("kind", ["tanh", "relu", "identity"])
    def test_pooling_invariants(self, rng, kind):
        X = rng.normal(size=(4, 7))
        bank = FilterBank(rng.normal(size=(4, 3)), kind)
        rep = conv_forward(X, bank)
        G = activate(bank.W.T @ X, kind)
        for k in range(bank.r):
            j = rep.argmax_patch[k]
            assert rep.y[k] == G[k, j]
            assert np.all(rep.y[k] >= G[k])
            # a separately computed dot product may differ in the last bit
            assert rep.y[k] == pytest.approx(activate(bank.W[:, k] @ X[:, j], kind), rel=1e-14, abs=1e-15)

    @pytest.mark.parametrize("kind", ["tanh", "relu", "identity"])
    def test_appending_patch_never_decreases(self, rng, kind):
        X = rng.normal(size=(4, 5))
        bank = FilterBank(rng.normal(size=(4, 3)), kind)
        before = conv_forward(X, bank).y
        after = conv_forward(np.hstack([X, rng.normal(size=(4, 1))]), bank).y
        assert np.all(after >= before)

    def test_batch_matches_single(self, rng):
        mats = [rng.normal(size=(3, int(rng.integers(1, 6)))) for _ in range(7)]
        bank = FilterBank(rng.normal(size=(3, 4)), "relu")
        batch = PatchBatch(mats)
        for X, rep in zip(mats, batch.representations(bank)):
            one = conv_forward(X, bank)
            np.testing.assert_array_equal(rep.y, one.y)
            np.testing.assert_array_equal(rep.argmax_patch, one.argmax_patch)


class TestFilterGradient:
    def test_zero_upstream(self, rng):
        X = rng.normal(size=(3, 4))
        bank = FilterBank(rng.normal(size=(3, 2)))
        rep = conv_forward(X, bank)
        assert not filter_gradient(X, bank, rep, np.zeros(2)).any()

    def test_identity_single_patch(self, rng):
        x = rng.normal(size=(3, 1))
        bank = FilterBank(rng.normal(size=(3, 3)), "identity")
        rep = conv_forward(x, bank)
        G = filter_gradient(x, bank, rep, np.array([0.0, 1.0, 0.0]))
        np.testing.assert_array_equal(G[:, 1], x[:, 0])
        assert not G[:, [0, 2]].any()

    def test_tanh_finite_differences(self):
        rng = np.random.default_rng(5)
        while True:
            X = rng.normal(size=(4, 6))
            W = rng.normal(size=(4, 3))
            G = np.sort(np.tanh(W.T @ X), axis=1)
            if np.min(G[:, -1] - G[:, -2]) > 1e-3:
                break
        bank = FilterBank(W)
        up = rng.normal(size=3)
        rep = conv_forward(X, bank)
        analytic = filter_gradient(X, bank, rep, up)
        f = lambda w: float(up @ conv_forward(X, FilterBank(w.reshape(W.shape))).y)
        report = finite_difference_check(f, W, analytic, h=1e-5, tol=1e-4)
        assert report.passed, report.max_rel_err

    def test_shape_mismatch(self, rng):
        X = rng.normal(size=(3, 4))
        bank = FilterBank(rng.normal(size=(3, 2)))
        rep = conv_forward(X, bank)
        with pytest.raises(ValueError):
            filter_gradient(X, bank, rep, np.zeros(3))


def test_patch_matrix_rejects_non_finite():
    with pytest.raises(ValueError):
        PatchMatrix(np.array([[np.nan]]))

"""Single-layer convolutional representation with global max pooling.

An image is split into overlapping patches (columns of a patch matrix X,
shape d x n_I).  A bank of r filters W (d x r) maps it to G = g(W^T X)
and the representation is the row-wise maximum y = max(G), one value per
filter.  The index of the winning patch is kept because the filter
gradient only flows through it.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NONLINEARITIES = ("tanh", "relu", "identity")


def activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return np.asarray(z, dtype=float)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def activate_deriv(z, kind):
    """Derivative of the nonlinearity; relu uses 0 at the kink."""
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "relu":
        return (np.asarray(z) > 0).astype(float)
    if kind == "identity":
        return np.ones_like(np.asarray(z, dtype=float))
    raise ValueError(f"unknown nonlinearity {kind!r}")


@dataclass
class PatchMatrix:
    """Patch features of one image, one column per patch (d x n_I)."""

    data: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("patch matrix must be 2-D (d x n_patches)")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("patch matrix needs at least one feature and one patch")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"patch matrix {self.image_id!r} has non-finite entries")

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def n_patches(self) -> int:
        return self.data.shape[1]


@dataclass
class FilterBank:
    W: np.ndarray
    nonlinearity: str = "tanh"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[1] < 1:
            raise ValueError("filter matrix must be 2-D with at least one filter")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("filter matrix has non-finite entries")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def r(self) -> int:
        return self.W.shape[1]

    def with_weights(self, W):
        return FilterBank(W, self.nonlinearity)


@dataclass
class ConvRepr:
    y: np.ndarray
    argmax_patch: np.ndarray
    # pre-activations of the winning patches, reused by the gradient
    pre_activation: np.ndarray = field(repr=False)


def _data(patches):
    return patches.data if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=float)


def extract_patches(image, window: int, stride: int, image_id: str = "") -> PatchMatrix:
    """Slide a square window over a grayscale raster.

    Window positions are scanned row-major and each window is flattened
    row-major, so the result has ``window**2`` rows.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("empty image")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    H, Wpx = img.shape
    if window > min(H, Wpx):
        raise ValueError("patch window exceeds image")
    views = np.lib.stride_tricks.sliding_window_view(img, (window, window))
    views = views[::stride, ::stride]
    cols = views.reshape(-1, window * window).T
    return PatchMatrix(np.ascontiguousarray(cols), image_id)


def conv_forward(patches, bank: FilterBank) -> ConvRepr:
    X = _data(patches)
    if X.shape[0] != bank.d:
        raise ValueError(f"patch dimension {X.shape[0]} does not match filter dimension {bank.d}")
    Z = bank.W.T @ X
    G = activate(Z, bank.nonlinearity)
    # np.argmax returns the first maximum, i.e. the smallest patch index on ties
    j = np.argmax(G, axis=1)
    rows = np.arange(bank.r)
    return ConvRepr(G[rows, j], j, Z[rows, j])


def filter_gradient(patches, bank: FilterBank, rep: ConvRepr, upstream) -> np.ndarray:
    """Back-propagate ``upstream = dO/dy`` to the filters through the max.

    Column k is ``upstream[k] * g'(w_k . x_j*) * x_j*`` where j* is the
    patch that won the pooling for filter k.
    """
    X = _data(patches)
    upstream = np.asarray(upstream, dtype=float)
    if X.shape[0] != bank.d:
        raise ValueError("patch dimension does not match filter dimension")
    if upstream.shape != (bank.r,) or rep.argmax_patch.shape != (bank.r,):
        raise ValueError("upstream and representation must have one entry per filter")
    scale = upstream * activate_deriv(rep.pre_activation, bank.nonlinearity)
    return X[:, rep.argmax_patch] * scale


class PatchBatch:
    """All images of a dataset stacked into one matrix for vectorized passes."""

    def __init__(self, patches: Sequence):
        mats = [_data(p) for p in patches]
        if not mats:
            raise ValueError("empty dataset")
        d = mats[0].shape[0]
        if any(m.shape[0] != d for m in mats):
            raise ValueError("all patch matrices must share the feature dimension")
        self.mats = mats
        self.d = d
        self.n = len(mats)
        self.X = np.hstack(mats)
        counts = np.array([m.shape[1] for m in mats])
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self._cols = np.arange(self.X.shape[1])

    def forward(self, bank: FilterBank):
        """Return (Y, argmax, pre) each of shape r x n; argmax is image-local."""
        if bank.d != self.d:
            raise ValueError("patch dimension does not match filter dimension")
        Z = bank.W.T @ self.X
        G = activate(Z, bank.nonlinearity)
        Y = np.maximum.reduceat(G, self.offsets, axis=1)
        owner = np.repeat(np.arange(self.n), np.diff(np.append(self.offsets, self.X.shape[1])))
        hit = G == Y[:, owner]
        first = np.minimum.reduceat(np.where(hit, self._cols, self.X.shape[1]), self.offsets, axis=1)
        pre = np.take_along_axis(Z, first, axis=1)
        return Y, first - self.offsets, pre

    def representations(self, bank: FilterBank) -> list[ConvRepr]:
        Y, arg, pre = self.forward(bank)
        return [ConvRepr(Y[:, i], arg[:, i], pre[:, i]) for i in range(self.n)]

"""Regularized residual quantization (RRQ).

Each layer quantizes the residual left by the layers before it with a
VR-Kmeans codebook. The layer's water level is chosen so that the
water-filling rate over the current residual variances equals
``log2(K)`` bits; only dimensions at or above that level get nonzero
codeword coordinates, which is what makes early-layer codewords sparse.

Residuals are always formed as ``x - reconstruction`` with the
reconstruction accumulated layer by layer, in the same order used by
:func:`decode`. Training, encoding and decoding therefore agree bitwise.
"""

from dataclasses import dataclass, replace
import logging

import numpy as np

from .errors import DimensionError
from .rate_allocation import gamma_star
from .vr_kmeans import Codebook, VrKmeansConfig, assign, fit

__all__ = ["CodebookLayer", "LayerSpec", "RrqModel", "decode", "encode", "train"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSpec:
    K: int
    lam: float = 0.0

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


@dataclass
class CodebookLayer:
    codebook: Codebook
    gamma: float
    lam: float
    index: int

    @property
    def K(self) -> int:
        return self.codebook.K

    @property
    def active_set(self) -> np.ndarray:
        return self.codebook.active_set

    @property
    def centroids(self) -> np.ndarray:
        return self.codebook.centroids


@dataclass
class RrqModel:
    mean: np.ndarray
    layers: list

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        if not self.layers:
            raise ValueError("an RRQ model needs at least one layer")
        for layer in self.layers:
            if layer.codebook.n != self.mean.size:
                raise ValueError("all layers must share the model dimension")

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def L(self) -> int:
        return len(self.layers)

    def truncate(self, L: int) -> "RrqModel":
        """Model made of the first ``L`` layers."""
        if not 1 <= L <= self.L:
            raise ValueError(f"cannot truncate a {self.L}-layer model to {L} layers")
        return RrqModel(self.mean.copy(), self.layers[:L])


def _empty_layer(n: int, index: int, lam: float) -> CodebookLayer:
    cb = Codebook(np.zeros((n, 1)), np.zeros(0, dtype=np.intp), np.zeros(n))
    return CodebookLayer(cb, 0.0, lam, index)


def train(X, specs, config: VrKmeansConfig | None = None):
    """Train an RRQ model layer by layer.

    Parameters
    ----------
    X : ndarray, shape (n, N)
        Decorrelated training data, samples as columns.
    specs : sequence of LayerSpec
        One entry per layer. Each layer's ``lam`` overrides ``config.lam``.
    config : VrKmeansConfig, optional
        Shared VR-Kmeans settings. Layer ``l`` is seeded with
        ``config.seed + l``.

    Returns
    -------
    model : RrqModel
    distortions : list of float
        Mean squared residual norm after each layer, divided by the total
        variance of the centered training data.
    """
    config = config or VrKmeansConfig()
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one layer spec")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("X must be a non-empty n x N matrix")
    n, N = X.shape
    mean = X.mean(axis=1)
    recon = np.repeat(mean[:, None], N, axis=1)
    R = X - recon
    total = float(np.sum(R.var(axis=1)))

    layers, distortions = [], []
    for l, spec in enumerate(specs):
        variances = R.var(axis=1)
        if not np.any(variances > 0):
            layer = _empty_layer(n, l, spec.lam)
        else:
            gamma, _ = gamma_star(variances, spec.K)
            cfg = replace(config, lam=spec.lam, seed=config.seed + l)
            cb, labels, _ = fit(R, spec.K, gamma, cfg)
            layer = CodebookLayer(cb, gamma, spec.lam, l)
            recon = recon + cb.centroids[:, labels]
            R = X - recon
        layers.append(layer)
        err = float(np.mean(np.sum(R * R, axis=0)))
        distortions.append(err / total if total > 0 else 0.0)
        logger.info("layer %d: K=%d |A|=%d distortion %.6f",
                    l, layer.K, layer.active_set.size, distortions[-1])
    return RrqModel(mean, layers), distortions


def encode(X, model: RrqModel, return_residual: bool = False):
    """Greedy per-layer nearest-codeword encoding.

    ``X`` is an n-vector or an ``n x N`` matrix. Returns indices of shape
    ``(L,)`` or ``(L, N)``; with ``return_residual`` also the final residual
    ``x - decode(indices)``.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != model.n:
        raise DimensionError(f"dimension mismatch: expected {model.n}-dimensional input")
    recon = np.repeat(model.mean[:, None], X.shape[1], axis=1)
    codes = np.empty((model.L, X.shape[1]), dtype=np.intp)
    for l, layer in enumerate(model.layers):
        labels = assign(X - recon, layer.codebook)
        codes[l] = labels
        recon = recon + layer.centroids[:, labels]
    residual = X - recon
    if single:
        codes, residual = codes[:, 0], residual[:, 0]
    return (codes, residual) if return_residual else codes


def decode(codes, model: RrqModel) -> np.ndarray:
    """Reconstruction ``mean + sum_l C_l[:, codes[l]]``.

    ``codes`` may hold fewer than ``L`` rows, which gives the progressive
    reconstruction from the first layers only.
    """
    codes = np.asarray(codes)
    single = codes.ndim == 1
    if single:
        codes = codes[:, None]
    if codes.ndim != 2 or not 1 <= codes.shape[0] <= model.L:
        raise DimensionError(f"codes must have between 1 and {model.L} layers")
    recon = np.repeat(model.mean[:, None], codes.shape[1], axis=1)
    for l in range(codes.shape[0]):
        layer = model.layers[l]
        idx = codes[l]
        if idx.size and (idx.min() < 0 or idx.max() >= layer.K):
            raise IndexError(f"layer {l}: code index out of range [0, {layer.K})")
        recon = recon + layer.centroids[:, idx]
    return recon[:, 0] if single else recon

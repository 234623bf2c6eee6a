"""Image preprocessing: global 2D-DCT followed by per-subband PCA.

The orthonormal DCT compacts energy and roughly decorrelates full-frame
images. Coefficients are read in zigzag order and cut into contiguous
subbands; within each subband a PCA rotation (no dimension reduction)
removes the remaining correlation. The whole chain is a rigid motion,
so distances measured after :func:`apply` equal pixel-domain distances.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import DimensionError

__all__ = [
    "ImageGeometry",
    "SubbandPartition",
    "TransformModel",
    "apply",
    "dct2_forward",
    "dct2_inverse",
    "fit_transform_model",
    "invert",
    "make_partition",
    "zigzag_order",
]

DEFAULT_NUM_BANDS = 64


@dataclass(frozen=True)
class ImageGeometry:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image geometry must be positive")

    @property
    def n(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class SubbandPartition:
    band_of_coeff: np.ndarray
    num_bands: int

    def slices(self) -> list:
        """Slice of the zigzag-ordered coefficient vector for each band."""
        edges = np.flatnonzero(np.diff(self.band_of_coeff)) + 1
        bounds = np.concatenate([[0], edges, [self.band_of_coeff.size]])
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass
class TransformModel:
    geometry: ImageGeometry
    partition: SubbandPartition
    rotations: list
    band_means: list

    @property
    def n(self) -> int:
        return self.geometry.n


def dct2_forward(image) -> np.ndarray:
    """Orthonormal type-II 2D DCT."""
    return fft.dctn(np.asarray(image, dtype=np.float64), type=2, norm="ortho")


def dct2_inverse(coeffs) -> np.ndarray:
    return fft.idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho")


def zigzag_order(height: int, width: int) -> np.ndarray:
    """Flat (row-major) indices of an ``height x width`` grid in JPEG zigzag order.

    Anti-diagonals are visited in turn; even diagonals run bottom-left to
    top-right, odd ones top-right to bottom-left.
    """
    i, j = np.divmod(np.arange(height * width), width)
    diag = i + j
    # along even diagonals walk with decreasing row, along odd with increasing
    key = np.where(diag % 2 == 0, -i, i)
    order = np.lexsort((key, diag))
    return order


def make_partition(n: int, num_bands: int) -> SubbandPartition:
    """Split ``n`` zigzag positions into ``num_bands`` near-equal runs."""
    if not 1 <= num_bands <= n:
        raise ValueError(f"number of bands must be in [1, {n}], got {num_bands}")
    sizes = np.full(num_bands, n // num_bands)
    sizes[: n % num_bands] += 1
    return SubbandPartition(np.repeat(np.arange(num_bands), sizes), num_bands)


def _stack_images(images) -> np.ndarray:
    arr = [np.asarray(im, dtype=np.float64) for im in images]
    if not arr:
        raise ValueError("no images given")
    shape = arr[0].shape
    if len(shape) != 2:
        raise ValueError("images must be 2-D grayscale arrays")
    for im in arr:
        if im.shape != shape:
            raise DimensionError(f"geometry mismatch: {im.shape} vs {shape}")
    return np.stack(arr)


def _zigzag_coeffs(stack: np.ndarray, order: np.ndarray) -> np.ndarray:
    """DCT coefficients of a stack of images as an ``n x N`` zigzag matrix."""
    coeffs = fft.dctn(stack, type=2, norm="ortho", axes=(-2, -1))
    return coeffs.reshape(stack.shape[0], -1)[:, order].T


def _pca_rotation(block: np.ndarray) -> np.ndarray:
    """Orthonormal eigenvectors of the population covariance, descending.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    centered = block - block.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / block.shape[1]
    w, V = np.linalg.eigh(cov)
    V = V[:, np.argsort(-w, kind="stable")]
    peak = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[peak, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def fit_transform_model(images, num_bands: int = DEFAULT_NUM_BANDS) -> TransformModel:
    """Fit band means and PCA rotations on a set of same-size images."""
    stack = _stack_images(images)
    if stack.shape[0] < 2:
        raise ValueError("need at least two training images")
    geometry = ImageGeometry(*stack.shape[1:])
    partition = make_partition(geometry.n, num_bands)
    order = zigzag_order(geometry.height, geometry.width)
    V = _zigzag_coeffs(stack, order)
    rotations, means = [], []
    for sl in partition.slices():
        block = V[sl]
        means.append(block.mean(axis=1))
        rotations.append(_pca_rotation(block))
    return TransformModel(geometry, partition, rotations, means)


def apply(model: TransformModel, images) -> np.ndarray:
    """Map one image to an n-vector, or a stack of images to an ``n x N`` matrix."""
    arr = np.asarray(images, dtype=np.float64)
    single = arr.ndim == 2
    stack = arr[None] if single else arr
    g = model.geometry
    if stack.ndim != 3 or stack.shape[1:] != (g.height, g.width):
        raise DimensionError(f"dimension mismatch: expected {g.height}x{g.width} images")
    V = _zigzag_coeffs(stack, zigzag_order(g.height, g.width))
    out = np.empty_like(V)
    for sl, R, mu in zip(model.partition.slices(), model.rotations, model.band_means):
        out[sl] = R.T @ (V[sl] - mu[:, None])
    return out[:, 0] if single else out


def invert(model: TransformModel, vectors) -> np.ndarray:
    """Exact inverse of :func:`apply`."""
    Y = np.asarray(vectors, dtype=np.float64)
    single = Y.ndim == 1
    if single:
        Y = Y[:, None]
    g = model.geometry
    if Y.ndim != 2 or Y.shape[0] != g.n:
        raise DimensionError(f"dimension mismatch: expected {g.n}-dimensional vectors")
    V = np.empty_like(Y)
    for sl, R, mu in zip(model.partition.slices(), model.rotations, model.band_means):
        V[sl] = R @ Y[sl] + mu[:, None]
    order = zigzag_order(g.height, g.width)
    flat = np.empty((Y.shape[1], g.n))
    flat[:, order] = V.T
    images = fft.idctn(flat.reshape(-1, g.height, g.width), type=2, norm="ortho", axes=(-2, -1))
    return images[0] if single else images

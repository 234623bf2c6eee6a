"""Regularized residual quantization.

Water-filling rate allocation, variance-regularized K-means, multi-layer
residual codebooks and the DCT/subband-PCA image preprocessing they rely on.
"""

from .rate_allocation import RateAllocation, allocate, gamma_for_distortion, gamma_star
from .rrq import CodebookLayer, LayerSpec, RrqModel, decode, encode, train
from .vr_kmeans import Codebook, VrKmeansConfig

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "CodebookLayer",
    "LayerSpec",
    "RateAllocation",
    "RrqModel",
    "VrKmeansConfig",
    "allocate",
    "decode",
    "encode",
    "gamma_for_distortion",
    "gamma_star",
    "train",
]

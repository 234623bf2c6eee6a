"""Reverse water-filling for independent Gaussian sources.

All dimensions whose variance reaches the water level ``gamma`` are given
distortion ``gamma``; the rest are not coded at all. The codeword variance
of a dimension is the soft-thresholded source variance ``(var - gamma)+``.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RateAllocation",
    "allocate",
    "gamma_for_distortion",
    "gamma_star",
    "rate_at",
]

_REL_TOL = 1e-12
_MAX_BISECT = 400


@dataclass(frozen=True)
class RateAllocation:
    gamma: float
    distortions: np.ndarray
    codeword_variances: np.ndarray
    active_set: np.ndarray
    total_rate_bits: float


def _as_profile(variances) -> np.ndarray:
    v = np.asarray(variances, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("variance profile must have at least one entry")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("variances must be finite and non-negative")
    return v


def rate_at(variances, gamma: float) -> float:
    """Total rate in bits of the water-filling allocation at level ``gamma``.

    Dimensions with ``var == gamma`` are active but contribute zero bits.
    Zero-variance dimensions never contribute.
    """
    v = _as_profile(variances)
    if gamma <= 0:
        return np.inf if np.any(v > 0) else 0.0
    mask = (v >= gamma) & (v > 0)
    with np.errstate(over="ignore"):
        return float(0.5 * np.sum(np.log2(v[mask] / gamma)))


def allocate(variances, gamma: float) -> RateAllocation:
    """Water-filling allocation at a fixed level ``gamma``.

    The active set is ``{j : var_j >= gamma}``; at ``gamma == 0`` that
    includes zero-variance dimensions, which then carry zero codeword
    variance.

    Examples
    --------
    >>> a = allocate([4.0, 1.0], 2.0)
    >>> a.distortions.tolist(), a.codeword_variances.tolist(), a.active_set.tolist()
    ([2.0, 1.0], [2.0, 0.0], [0])
    """
    v = _as_profile(variances)
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 0:
        raise ValueError(f"gamma must be finite and >= 0, got {gamma}")
    distortions = np.minimum(v, gamma)
    codeword_variances = np.maximum(v - gamma, 0.0)
    return RateAllocation(
        gamma=gamma,
        distortions=distortions,
        codeword_variances=codeword_variances,
        active_set=np.flatnonzero(v >= gamma),
        total_rate_bits=rate_at(v, gamma),
    )


def gamma_for_distortion(variances, total_distortion: float) -> float:
    """Water level whose allocation spends exactly ``total_distortion``.

    Solved by bisection on the continuous, non-decreasing map
    ``gamma -> sum(min(var, gamma))``.
    """
    v = _as_profile(variances)
    total = float(v.sum())
    d = float(total_distortion)
    if not d > 0:
        raise ValueError(f"total distortion must be positive, got {d}")
    if d > total * (1 + 1e-15):
        raise ValueError(f"distortion budget {d} exceeds total variance {total}")
    vmax = float(v.max())
    if d >= total:
        return vmax

    lo, hi = 0.0, vmax
    atol = 1e-12 * total
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        s = float(np.minimum(v, mid).sum())
        if abs(s - d) <= atol:
            return mid
        if s < d:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _REL_TOL * hi * 1e-3:
            break
    return 0.5 * (lo + hi)


def gamma_star(distortions, K: int) -> tuple[float, np.ndarray]:
    """Water level whose total rate equals ``log2(K)`` bits.

    ``distortions`` are the per-dimension distortions left by the previous
    quantization stage. Returns ``(gamma, active_set)`` with the active set
    ``{j : D_j >= gamma}`` restricted to positive ``D_j``.

    For ``K == 1`` every level at or above ``max(D)`` has zero rate; the
    smallest of them, ``max(D)``, is returned.
    """
    d = _as_profile(distortions)
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    dmax = float(d.max())
    if dmax <= 0:
        raise ValueError("at least one distortion must be strictly positive")
    target = np.log2(K)
    if target == 0:
        return dmax, np.flatnonzero(d >= dmax)

    # The rate is strictly decreasing on (0, dmax] and unbounded as gamma -> 0,
    # so walk the lower end down until it brackets the target.
    hi = dmax
    lo = dmax * 2.0**-16
    while rate_at(d, lo) < target:
        lo *= 2.0**-16
    # bisect in log-space; the rate is linear in log(gamma) between breakpoints
    log_lo, log_hi = np.log(lo), np.log(hi)
    for _ in range(_MAX_BISECT):
        log_mid = 0.5 * (log_lo + log_hi)
        if rate_at(d, np.exp(log_mid)) > target:
            log_lo = log_mid
        else:
            log_hi = log_mid
        if log_hi - log_lo <= _REL_TOL:
            break
    gamma = float(np.exp(0.5 * (log_lo + log_hi)))
    return gamma, np.flatnonzero((d >= gamma) & (d > 0))

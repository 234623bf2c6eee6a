"""Variance-regularized K-means (VR-Kmeans).

Minimizes

    1/2 ||X - C A||_F^2 + 1/2 lam * sum_j (||C[j]||^2 - t_j)^2

over the codebook ``C`` (n x K, codewords are columns) and the one-hot
assignment ``A``. The row target is ``t_j = K * var_c[j]`` where ``var_c``
is the water-filling codeword variance, so that the empirical variance of
coordinate ``j`` across the K codewords is pulled toward ``var_c[j]``.
Rows of ``C`` outside the active set are held at zero.

With ``A`` fixed the problem splits into one quartic problem per active
row ``c = C[j]``::

    f(c) = -z.c + 1/2 sum_m a_m c_m^2 + 1/2 lam |c|^2 (|c|^2 - 2 t)

where ``z = X[j] A^T`` and ``a`` holds the cluster sizes. Each row is solved
with a safeguarded Newton method; all rows are iterated together.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .errors import DimensionError
from .rate_allocation import allocate

__all__ = [
    "Codebook",
    "VrKmeansConfig",
    "assign",
    "cluster_sums",
    "fit",
    "kmeanspp_init",
    "objective",
    "row_gradient",
    "row_hessian",
    "row_hessian_vector",
    "row_objective",
    "update_codebook",
]

logger = logging.getLogger(__name__)

_MAX_HALVINGS = 30


@dataclass
class VrKmeansConfig:
    """Settings for :func:`fit`. ``lam`` is the regularization weight."""

    lam: float = 0.0
    max_iters: int = 100
    rel_tol: float = 1e-7
    newton_max_iters: int = 100
    newton_grad_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if not (self.rel_tol > 0 and self.newton_grad_tol > 0):
            raise ValueError("tolerances must be > 0")


@dataclass
class Codebook:
    centroids: np.ndarray
    active_set: np.ndarray
    target_variances: np.ndarray = field(default=None)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or min(self.centroids.shape) < 1:
            raise ValueError("centroids must be a non-empty n x K matrix")
        self.active_set = np.asarray(self.active_set, dtype=np.intp).ravel()
        if self.target_variances is None:
            self.target_variances = np.zeros(self.n)
        self.target_variances = np.asarray(self.target_variances, dtype=np.float64).ravel()
        if self.target_variances.shape != (self.n,):
            raise ValueError("target_variances must have one entry per dimension")

    @property
    def n(self) -> int:
        return self.centroids.shape[0]

    @property
    def K(self) -> int:
        return self.centroids.shape[1]

    @property
    def row_targets(self) -> np.ndarray:
        """Target squared norm of each centroid row."""
        return self.K * self.target_variances

    @classmethod
    def dense(cls, centroids) -> "Codebook":
        """Wrap a plain centroid matrix with every dimension active."""
        centroids = np.asarray(centroids, dtype=np.float64)
        return cls(centroids, np.arange(centroids.shape[0]))


def _as_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] == 0 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty n x N matrix")
    return X


def _as_codebook(C) -> Codebook:
    return C if isinstance(C, Codebook) else Codebook.dense(C)


# -- per-row subproblem -----------------------------------------------------

def row_objective(c, a, z, lam, target):
    """Value of the per-dimension codebook subproblem at ``c``."""
    c = np.asarray(c, dtype=np.float64)
    s = np.sum(c * c, axis=-1)
    return (-np.sum(z * c, axis=-1) + 0.5 * np.sum(a * c * c, axis=-1)
            + 0.5 * lam * s * (s - 2.0 * target))


def row_gradient(c, a, z, lam, target):
    c = np.asarray(c, dtype=np.float64)
    s = np.sum(c * c, axis=-1, keepdims=True)
    return -z + a * c + 2.0 * lam * (s - np.asarray(target)[..., None]) * c


def row_hessian(c, a, lam, target):
    """Dense Hessian ``diag(a) + 2 lam (|c|^2 - t) I + 4 lam c c^T`` for one row."""
    c = np.asarray(c, dtype=np.float64)
    s = c @ c
    return np.diag(a + 2.0 * lam * (s - target)) + 4.0 * lam * np.outer(c, c)


def row_hessian_vector(c, a, lam, target, v):
    c = np.asarray(c, dtype=np.float64)
    s = np.sum(c * c, axis=-1, keepdims=True)
    t = np.asarray(target)[..., None]
    cv = np.sum(c * v, axis=-1, keepdims=True)
    return (a + 2.0 * lam * (s - t)) * v + 4.0 * lam * cv * c


def _newton_directions(C, G, a, lam, target):
    """Newton directions for a stack of rows; falls back to ``-G`` where the
    Hessian is not positive definite.

    The Hessian is ``diag(d) + 4 lam c c^T``, so definiteness and the solve
    both follow from the diagonal ``d`` and Sherman-Morrison.
    """
    s = np.sum(C * C, axis=1, keepdims=True)
    d = a + 2.0 * lam * (s - target[:, None])
    neg = np.sum(d < 0, axis=1)
    zero = np.sum(d == 0, axis=1)
    safe_d = np.where(d == 0, 1.0, d)
    Dg = G / safe_d
    Dc = C / safe_d
    denom = 1.0 + 4.0 * lam * np.sum(C * Dc, axis=1)
    # one negative diagonal entry: rank-one term rescues definiteness iff det > 0
    pd = (zero == 0) & ((neg == 0) | ((neg == 1) & (denom < 0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = 4.0 * lam * np.sum(C * Dg, axis=1) / denom
    P = -(Dg - corr[:, None] * Dc)
    P[~pd] = -G[~pd]
    return P


def _newton_rows(C, Z, a, lam, target, max_iters, grad_tol):
    """Minimize ``row_objective`` for each row of ``C`` in place."""
    if C.shape[0] == 0:
        return C
    tol = grad_tol * (1.0 + np.linalg.norm(Z, axis=1))
    live = np.ones(C.shape[0], dtype=bool)

    if lam == 0:
        # separable quadratic; empty clusters (a_m == 0) have zero gradient
        G = row_gradient(C, a, Z, 0.0, target)
        step = np.divide(G, a, out=np.zeros_like(G), where=a > 0)
        C -= step
        return C

    for _ in range(max_iters):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        c, z, t = C[idx], Z[idx], target[idx]
        G = row_gradient(c, a, z, lam, t)
        done = np.linalg.norm(G, axis=1) <= tol[idx]
        live[idx[done]] = False
        if np.all(done):
            break
        keep = ~done
        idx, c, z, t, G = idx[keep], c[keep], z[keep], t[keep], G[keep]

        P = _newton_directions(c, G, a, lam, t)
        f0 = row_objective(c, a, z, lam, t)
        step = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        for _ in range(_MAX_HALVINGS + 1):
            todo = ~accepted
            trial = c[todo] + step[todo, None] * P[todo]
            f1 = row_objective(trial, a, z[todo], lam, t[todo])
            ok = f1 <= f0[todo]
            sel = np.flatnonzero(todo)[ok]
            C[idx[sel]] = trial[ok]
            accepted[sel] = True
            if accepted.all():
                break
            step[~accepted] *= 0.5
        # rows that could not decrease f keep their iterate and stop
        live[idx[~accepted]] = False
    return C


# -- alternation steps ------------------------------------------------------

def assign(X, C) -> np.ndarray:
    """Nearest-codeword labels; ties go to the smallest index.

    Only the codebook's active rows enter the distance, since the remaining
    rows are zero for every codeword.
    """
    X = _as_data(X)
    cb = _as_codebook(C)
    if X.shape[0] != cb.n:
        raise DimensionError(f"dimension mismatch: X has {X.shape[0]} rows, codebook {cb.n}")
    A = cb.active_set
    if A.size == 0:
        return np.zeros(X.shape[1], dtype=np.intp)
    Ca = cb.centroids[A]
    # |x - c|^2 up to the |x|^2 term, which does not affect the argmin
    dist = np.sum(Ca * Ca, axis=0)[None, :] - 2.0 * (X[A].T @ Ca)
    return np.argmin(dist, axis=1)


def cluster_sums(X, labels, K):
    """Return ``(Z, counts)`` with ``Z = X A^T`` and ``counts = diag(A A^T)``."""
    labels = np.asarray(labels)
    onehot = np.zeros((labels.size, K))
    onehot[np.arange(labels.size), labels] = 1.0
    return X @ onehot, np.bincount(labels, minlength=K).astype(np.float64)


def objective(X, C, labels, lam: float) -> float:
    """Full VR-Kmeans objective for a codebook and labels."""
    X = _as_data(X)
    cb = _as_codebook(C)
    labels = np.asarray(labels)
    if X.shape[0] != cb.n or labels.shape != (X.shape[1],):
        raise DimensionError("dimension mismatch between X, codebook and labels")
    if labels.size and (labels.min() < 0 or labels.max() >= cb.K):
        raise ValueError("labels out of range")
    R = X - cb.centroids[:, labels]
    s = np.sum(cb.centroids ** 2, axis=1)
    return float(0.5 * np.sum(R * R) + 0.5 * lam * np.sum((s - cb.row_targets) ** 2))


def update_codebook(X, labels, C_init: Codebook, config: VrKmeansConfig) -> Codebook:
    """Codebook step with the assignment held fixed.

    Active rows are warm-started from ``C_init`` and solved by Newton's
    method with halving line search; inactive rows are set to zero.
    """
    X = _as_data(X)
    cb = _as_codebook(C_init)
    A = cb.active_set
    K = cb.K
    Z, a = cluster_sums(X[A], labels, K)
    Ca = cb.centroids[A].copy()
    _newton_rows(Ca, Z, a, config.lam, cb.row_targets[A],
                 config.newton_max_iters, config.newton_grad_tol)
    centroids = np.zeros_like(cb.centroids)
    centroids[A] = Ca
    return replace(cb, centroids=centroids)


def kmeanspp_init(X, K: int, rng: np.random.Generator) -> np.ndarray:
    """K-means++ seeding; returns an ``n x K`` matrix of data columns."""
    X = _as_data(X)
    N = X.shape[1]
    first = int(rng.integers(N))
    picks = [first]
    d2 = np.sum((X - X[:, [first]]) ** 2, axis=0)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=d2 / total))
        else:
            nxt = int(rng.integers(N))
        picks.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[:, [nxt]]) ** 2, axis=0))
    return X[:, picks].copy()


def _reseed_empty(Xa, Ca, labels, lam, target):
    """Move the worst-quantized point into each empty cluster.

    A move is skipped when it would raise the objective, which can only
    happen through the regularizer (``lam > 0``). A point is never taken
    from a singleton cluster.
    """
    K = Ca.shape[1]
    counts = np.bincount(labels, minlength=K)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels, Ca
    err = np.sum((Xa - Ca[:, labels]) ** 2, axis=0)
    order = np.argsort(-err, kind="stable")
    pos = 0
    s = np.sum(Ca * Ca, axis=1)
    for m in empty:
        while pos < order.size and (err[order[pos]] <= 0 or counts[labels[order[pos]]] <= 1):
            pos += 1
        if pos >= order.size:
            break
        p = order[pos]
        x = Xa[:, p]
        delta = -0.5 * err[p]
        if lam > 0:
            s_new = s - Ca[:, m] ** 2 + x * x
            delta += 0.5 * lam * np.sum((s_new - target) ** 2 - (s - target) ** 2)
        if delta > 0:
            continue
        pos += 1
        counts[labels[p]] -= 1
        counts[m] += 1
        labels[p] = m
        s = s - Ca[:, m] ** 2 + x * x
        Ca[:, m] = x
        err[p] = 0.0
    return labels, Ca


def fit(X, K: int, gamma: float, config: VrKmeansConfig | None = None,
        init=None, callback=None):
    """Train a VR-Kmeans codebook.

    Parameters
    ----------
    X : ndarray, shape (n, N)
        Decorrelated data, samples as columns.
    K : int
        Number of codewords.
    gamma : float
        Water level. Dimensions with variance below it are left inactive.
    config : VrKmeansConfig, optional
    init : ndarray, shape (n, K), optional
        Initial centroids; K-means++ on the active coordinates otherwise.
    callback : callable, optional
        Called as ``callback(iteration, codebook, labels)`` after each
        codebook update.

    Returns
    -------
    codebook : Codebook
    labels : ndarray of int
        Nearest-codeword labels under the final codebook.
    history : list of float
        Objective after each full iteration; non-increasing.
    """
    config = config or VrKmeansConfig()
    X = _as_data(X)
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    n, N = X.shape
    variances = X.var(axis=1)
    alloc = allocate(variances, gamma)
    A = alloc.active_set
    target = alloc.codeword_variances
    rng = np.random.default_rng(config.seed)

    centroids = np.zeros((n, K))
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != (n, K):
            raise ValueError(f"init must have shape {(n, K)}, got {init.shape}")
        centroids[A] = init[A]
    elif A.size:
        centroids[A] = kmeanspp_init(X[A], K, rng)
    cb = Codebook(centroids, A, target)

    history = []
    Xa = X[A]
    for it in range(config.max_iters):
        labels = assign(X, cb)
        labels, Ca = _reseed_empty(Xa, cb.centroids[A].copy(), labels, config.lam,
                                   cb.row_targets[A])
        cb.centroids[A] = Ca
        cb = update_codebook(X, labels, cb, config)
        history.append(objective(X, cb, labels, config.lam))
        if callback is not None:
            callback(it, cb, labels)
        if len(history) > 1:
            prev = history[-2]
            if abs(prev - history[-1]) <= config.rel_tol * abs(prev):
                break
    logger.debug("vr-kmeans: %d iterations, objective %.6g", len(history), history[-1])
    return cb, assign(X, cb), history

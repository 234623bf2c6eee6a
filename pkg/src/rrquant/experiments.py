"""Reproduction harnesses.

``run_table1`` compares K-means, random codebooks and VR-Kmeans on
synthetic variance-decaying Gaussian data. ``run_superresolution`` trains
the DCT/PCA transform and an RRQ model on full-resolution images, then
reconstructs bicubic-upsampled test images through the quantizer.
"""

from dataclasses import asdict, dataclass, replace
import logging
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq

from . import imaging, rrq, transform
from .rate_allocation import allocate, gamma_star
from .vr_kmeans import Codebook, VrKmeansConfig, assign, fit

__all__ = [
    "DEFAULT_POWER_ALPHA",
    "TARGET_MIN_DISTORTION",
    "SyntheticSourceSpec",
    "calibrate_profile",
    "generate_gaussian",
    "make_synthetic_faces",
    "normalized_distortion",
    "run_superresolution",
    "run_table1",
    "theoretical_min_distortion",
    "variance_profile",
    "write_curves_csv",
]

logger = logging.getLogger(__name__)

TARGET_MIN_DISTORTION = 0.9185
# var_j = j**-alpha with this alpha gives the bound above at n=1000, K=256
DEFAULT_POWER_ALPHA = 0.589537216408753

PROFILE_KINDS = ("power_decay", "exponential_decay")


@dataclass(frozen=True)
class SyntheticSourceSpec:
    n: int = 1000
    n_train: int = 5000
    n_test: int = 5000
    profile_kind: str = "power_decay"
    profile_param: float = DEFAULT_POWER_ALPHA
    seed: int = 0

    def __post_init__(self):
        if self.profile_kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.profile_kind!r}")
        if min(self.n, self.n_train, self.n_test) < 1:
            raise ValueError("sizes must be positive")
        if self.profile_param < 0:
            raise ValueError("profile parameter must be >= 0")


def variance_profile(kind: str, n: int, param: float) -> np.ndarray:
    """Decaying variances: ``j**-param`` or ``exp(-param (j - 1))`` for j = 1..n."""
    j = np.arange(1, n + 1, dtype=np.float64)
    if kind == "power_decay":
        return j ** -param
    if kind == "exponential_decay":
        return np.exp(-param * (j - 1))
    raise ValueError(f"unknown profile kind {kind!r}")


def generate_gaussian(spec: SyntheticSourceSpec):
    """Independent zero-mean Gaussian train/test matrices (samples as columns)."""
    var = variance_profile(spec.profile_kind, spec.n, spec.profile_param)
    rng = np.random.default_rng(spec.seed)
    sd = np.sqrt(var)[:, None]
    X_train = rng.standard_normal((spec.n, spec.n_train)) * sd
    X_test = rng.standard_normal((spec.n, spec.n_test)) * sd
    return X_train, X_test, var


def theoretical_min_distortion(variances, K: int) -> float:
    """Normalized water-filling distortion at a rate of ``log2(K)`` bits."""
    var = np.asarray(variances, dtype=np.float64)
    gamma, _ = gamma_star(var, K)
    return float(np.sum(np.minimum(var, gamma)) / np.sum(var))


def calibrate_profile(kind: str = "power_decay", n: int = 1000, K: int = 256,
                      target: float = TARGET_MIN_DISTORTION) -> float:
    """Profile parameter whose theoretical distortion equals ``target``."""
    hi = 1.5 if kind == "power_decay" else 0.5
    return brentq(lambda p: theoretical_min_distortion(variance_profile(kind, n, p), K) - target,
                  1e-9, hi, xtol=1e-14)


def normalized_distortion(X, centroids, labels=None) -> float:
    """Mean squared quantization error over the mean squared norm of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if labels is None:
        labels = assign(X, centroids)
    R = X - np.asarray(centroids)[:, labels]
    return float(np.sum(R * R) / np.sum(X * X))


def _codeword_variance(centroids):
    return np.mean(centroids ** 2, axis=1)


def _per_dim_distortion(X, centroids):
    labels = assign(X, centroids)
    return np.mean((X - centroids[:, labels]) ** 2, axis=1)


def run_table1(spec: SyntheticSourceSpec | None = None, lambdas=(0.1, 10.0, 1000.0),
               K: int = 256, seeds=(0, 1, 2, 3, 4), config: VrKmeansConfig | None = None,
               curves: bool = True) -> dict:
    """Train/test distortions of K-means, random codebooks and VR-Kmeans.

    Every method sees the same data per seed. The random baseline draws K
    codewords from ``N(0, diag(var_c))`` with the same water level used by
    VR-Kmeans. Distortions are averaged over seeds.
    """
    spec = spec or SyntheticSourceSpec()
    config = config or VrKmeansConfig(max_iters=50)
    seeds = sorted(int(s) for s in seeds)
    lambdas = [float(x) for x in lambdas]
    methods = ["kmeans", "random"] + [f"vr_kmeans(lambda={lam:g})" for lam in lambdas]
    results = {m: {"train": [], "test": []} for m in methods}
    curve_acc = {m: {"codeword_variance": [], "distortion_train": [], "distortion_test": []}
                 for m in methods}
    bounds = []

    for seed in seeds:
        X_train, X_test, var = generate_gaussian(replace(spec, seed=seed))
        bounds.append(theoretical_min_distortion(var, K))
        emp_var = X_train.var(axis=1)
        gamma, _ = gamma_star(emp_var, K)
        alloc = allocate(emp_var, gamma)
        rng = np.random.default_rng([seed, 1])
        trained = {}
        cb, _, _ = fit(X_train, K, 0.0, replace(config, lam=0.0, seed=seed))
        trained["kmeans"] = cb.centroids
        trained["random"] = (rng.standard_normal((spec.n, K))
                             * np.sqrt(alloc.codeword_variances)[:, None])
        for lam, name in zip(lambdas, methods[2:]):
            cb, _, _ = fit(X_train, K, gamma, replace(config, lam=lam, seed=seed))
            trained[name] = cb.centroids
        for name, C in trained.items():
            results[name]["train"].append(normalized_distortion(X_train, C))
            results[name]["test"].append(normalized_distortion(X_test, C))
            if curves:
                acc = curve_acc[name]
                acc["codeword_variance"].append(_codeword_variance(C))
                acc["distortion_train"].append(_per_dim_distortion(X_train, C))
                acc["distortion_test"].append(_per_dim_distortion(X_test, C))
            logger.info("seed %d %s: train %.4f test %.4f", seed, name,
                        results[name]["train"][-1], results[name]["test"][-1])

    report = {
        "experiment": "table1",
        "config": {
            "source": asdict(spec),
            "K": K,
            "lambdas": lambdas,
            "seeds": seeds,
            "vr_kmeans": asdict(config),
        },
        "theoretical_min_distortion": float(np.mean(bounds)),
        "methods": {
            m: {
                "train": float(np.mean(r["train"])),
                "test": float(np.mean(r["test"])),
                "train_per_seed": r["train"],
                "test_per_seed": r["test"],
            }
            for m, r in results.items()
        },
    }
    if curves:
        var = variance_profile(spec.profile_kind, spec.n, spec.profile_param)
        g, _ = gamma_star(var, K)
        asym = allocate(var, g)
        report["curves"] = {
            "source_variance": var.tolist(),
            "asymptotic_codeword_variance": asym.codeword_variances.tolist(),
            "asymptotic_distortion": asym.distortions.tolist(),
            "methods": {m: {k: np.mean(v, axis=0).tolist() for k, v in acc.items()}
                        for m, acc in curve_acc.items()},
        }
    return report


def write_curves_csv(report: dict, path) -> None:
    """Write the per-dimension curves of a table1 report as whitespace-separated
    columns with a ``#`` header line (readable by gnuplot)."""
    curves = report["curves"]
    cols = {"dim": np.arange(1, len(curves["source_variance"]) + 1)}
    for key in ("source_variance", "asymptotic_codeword_variance", "asymptotic_distortion"):
        cols[key] = curves[key]
    for m, c in curves["methods"].items():
        tag = m.replace("(", "_").replace(")", "").replace("=", "")
        for k, v in c.items():
            cols[f"{tag}:{k}"] = v
    header = "# " + " ".join(cols)
    data = np.column_stack([np.asarray(v, dtype=np.float64) for v in cols.values()])
    np.savetxt(path, data, fmt="%.17g", header=header[2:], comments="# ")


# -- super-resolution -------------------------------------------------------

def make_synthetic_faces(count: int, size: int = 64, seed: int = 0) -> np.ndarray:
    """Procedural face-like grayscale images in [0, 1].

    Each image is a head ellipse with eyes, brows, nose and mouth under a
    random directional light, loosely imitating an aligned, cropped face set
    with varying illumination. Returns an array of shape ``(count, size, size)``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2.0 - 1.0
    out = np.empty((count, size, size))

    def ellipse(cx, cy, rx, ry):
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0

    for k in range(count):
        u = rng.uniform
        img = np.full((size, size), u(0.05, 0.2))
        head = ellipse(u(-0.05, 0.05), u(-0.02, 0.08), u(0.62, 0.75), u(0.8, 0.92))
        img[head] = u(0.55, 0.8)
        ex, ey, er = u(0.25, 0.35), u(-0.25, -0.1), u(0.08, 0.13)
        for side in (-1, 1):
            img[ellipse(side * ex, ey, er, er * u(0.5, 0.8))] = u(0.1, 0.25)
            img[ellipse(side * ex, ey, er * 0.4, er * 0.4)] = 0.02
            brow = ellipse(side * ex, ey - u(0.15, 0.22), er * 1.3, 0.035)
            img[brow] = u(0.15, 0.3)
        nose = ellipse(0.0, u(0.08, 0.16), u(0.05, 0.09), u(0.12, 0.18))
        img[nose] = img[nose] * u(0.75, 0.9)
        my, mw = u(0.38, 0.48), u(0.18, 0.3)
        smile = u(-0.25, 0.25)
        mouth = (np.abs(yy - my - smile * (xx / mw) ** 2) < u(0.025, 0.05)) & (np.abs(xx) < mw)
        img[mouth] = u(0.15, 0.35)
        angle = u(0, 2 * np.pi)
        light = 1.0 + u(0.2, 0.6) * (np.cos(angle) * xx + np.sin(angle) * yy)
        img = ndimage.gaussian_filter(img * light, sigma=size / 64 * 0.7)
        out[k] = np.clip(img + 0.01 * rng.standard_normal(img.shape), 0.0, 1.0)
    return out


def _load_dir(directory):
    paths = imaging.list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no images found in {directory}")
    images = [imaging.read_image(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"geometry mismatch in {directory}: {sorted(shapes)}")
    return paths, np.stack(images)


def fit_superresolution(train_images, L: int = 50, K: int = 256, lam: float = 10.0,
                        num_bands: int = transform.DEFAULT_NUM_BANDS,
                        config: VrKmeansConfig | None = None):
    """Fit the transform and the RRQ model on full-resolution images."""
    config = config or VrKmeansConfig(max_iters=30)
    tmodel = transform.fit_transform_model(train_images, num_bands)
    X = transform.apply(tmodel, np.asarray(train_images))
    if K > X.shape[1]:
        logger.warning("K=%d exceeds the %d training images; some codewords stay unused",
                       K, X.shape[1])
    qmodel, dist = rrq.train(X, [rrq.LayerSpec(K, lam)] * L, config)
    return tmodel, qmodel, dist


def reconstruct(tmodel, qmodel, images) -> np.ndarray:
    """Transform, RRQ encode/decode and invert a stack of images."""
    V = transform.apply(tmodel, np.asarray(images))
    return transform.invert(tmodel, rrq.decode(rrq.encode(V, qmodel), qmodel))


def run_superresolution(train_dir=None, test_dir=None, downsample: int = 8,
                        L: int = 50, K: int = 256, lam: float = 10.0,
                        num_bands: int = transform.DEFAULT_NUM_BANDS,
                        config: VrKmeansConfig | None = None, output_dir=None,
                        train_images=None, test_images=None, test_names=None) -> dict:
    """Bicubic vs RRQ reconstruction of downsampled test images.

    Images come either from directories or from in-memory stacks. When
    ``output_dir`` is given the original, bicubic and RRQ images are
    written there as PGM files.
    """
    if train_images is None:
        _, train_images = _load_dir(train_dir)
    if test_images is None:
        paths, test_images = _load_dir(test_dir)
        test_names = [p.stem for p in paths]
    train_images = np.asarray(train_images, dtype=np.float64)
    test_images = np.asarray(test_images, dtype=np.float64)
    if test_names is None:
        test_names = [f"test{k:04d}" for k in range(len(test_images))]
    if train_images.shape[1:] != test_images.shape[1:]:
        raise ValueError("geometry mismatch between train and test images")

    tmodel, qmodel, train_dist = fit_superresolution(train_images, L, K, lam, num_bands, config)
    low = np.stack([imaging.bicubic_upsample(imaging.box_downsample(im, downsample), downsample)
                    for im in test_images])
    rec = reconstruct(tmodel, qmodel, low)
    bicubic = np.clip(low, 0.0, 1.0)
    rrq_out = np.clip(rec, 0.0, 1.0)

    rows = []
    for name, orig, b, r in zip(test_names, test_images, bicubic, rrq_out):
        rows.append({"image": name, "psnr_bicubic": imaging.psnr(orig, b),
                     "psnr_rrq": imaging.psnr(orig, r)})
    rows.sort(key=lambda row: row["image"])
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, orig, b, r in zip(test_names, test_images, bicubic, rrq_out):
            imaging.write_pgm(out / f"{name}_original.pgm", orig)
            imaging.write_pgm(out / f"{name}_bicubic.pgm", b)
            imaging.write_pgm(out / f"{name}_rrq.pgm", r)
    wins = int(sum(row["psnr_rrq"] > row["psnr_bicubic"] for row in rows))
    return {
        "experiment": "superres",
        "config": {"downsample": downsample, "L": L, "K": K, "lambda": lam,
                   "num_bands": num_bands, "n_train": int(train_images.shape[0]),
                   "n_test": int(test_images.shape[0]),
                   "vr_kmeans": asdict(config or VrKmeansConfig(max_iters=30))},
        "train_distortion": train_dist,
        "images": rows,
        "rrq_wins": wins,
        "mean_psnr_bicubic": float(np.mean([r["psnr_bicubic"] for r in rows])),
        "mean_psnr_rrq": float(np.mean([r["psnr_rrq"] for r in rows])),
    }

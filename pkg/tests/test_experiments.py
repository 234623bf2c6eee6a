import json

import numpy as np
import pytest

from rrquant import imaging
from rrquant.experiments import (
    DEFAULT_POWER_ALPHA,
    TARGET_MIN_DISTORTION,
    SyntheticSourceSpec,
    calibrate_profile,
    fit_superresolution,
    generate_gaussian,
    make_synthetic_faces,
    reconstruct,
    run_superresolution,
    run_table1,
    theoretical_min_distortion,
    variance_profile,
    write_curves_csv,
)
from rrquant.vr_kmeans import VrKmeansConfig


SMALL = SyntheticSourceSpec(n=60, n_train=400, n_test=400)


class TestSource:
    def test_sample_variances_concentrate(self):
        spec = SyntheticSourceSpec(n=400, n_train=4000, n_test=10)
        X, _, var = generate_gaussian(spec)
        ok = np.abs(X.var(axis=1) - var) <= 5 * var / np.sqrt(spec.n_train)
        assert ok.mean() >= 0.99

    def test_deterministic(self):
        a, b = generate_gaussian(SMALL), generate_gaussian(SMALL)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_flat_profile(self):
        np.testing.assert_array_equal(variance_profile("power_decay", 5, 0.0), 1.0)

    def test_profiles_decay(self):
        for kind in ("power_decay", "exponential_decay"):
            v = variance_profile(kind, 50, 0.3)
            assert np.all(v > 0) and np.all(np.diff(v) < 0)
        with pytest.raises(ValueError):
            SyntheticSourceSpec(profile_kind="cosine")


class TestBound:
    def test_zero_rate(self):
        assert theoretical_min_distortion(np.ones(7), 1) == 1.0

    def test_two_dims(self):
        # one bit goes to the variance-4 source: D = (1 + 1) / 5
        assert theoretical_min_distortion([4.0, 1.0], 2) == pytest.approx(0.4, rel=1e-10)

    def test_calibrated_default(self):
        var = variance_profile("power_decay", 1000, DEFAULT_POWER_ALPHA)
        assert theoretical_min_distortion(var, 256) == pytest.approx(TARGET_MIN_DISTORTION, abs=1e-9)
        assert calibrate_profile() == pytest.approx(DEFAULT_POWER_ALPHA, abs=1e-9)


@pytest.fixture(scope="module")
def small_report():
    return run_table1(SMALL, lambdas=(0.1, 10.0), K=16, seeds=(0, 1),
                      config=VrKmeansConfig(max_iters=20))


def test_table1_report_schema(small_report):
    r = small_report
    assert set(r["methods"]) == {"kmeans", "random", "vr_kmeans(lambda=0.1)", "vr_kmeans(lambda=10)"}
    for m in r["methods"].values():
        assert 0 < m["train"] < 2 and 0 < m["test"] < 2
        assert len(m["train_per_seed"]) == 2
    assert len(r["curves"]["source_variance"]) == SMALL.n
    json.dumps(r, allow_nan=False)


def test_table1_random_baseline_does_not_fit(small_report):
    rnd = small_report["methods"]["random"]
    assert abs(rnd["train"] - rnd["test"]) < 0.02


def test_table1_deterministic(small_report):
    again = run_table1(SMALL, lambdas=(0.1, 10.0), K=16, seeds=(1, 0),
                       config=VrKmeansConfig(max_iters=20))
    assert json.dumps(again, sort_keys=True) == json.dumps(small_report, sort_keys=True)


def test_curves_csv(small_report, tmp_path):
    write_curves_csv(small_report, tmp_path / "c.dat")
    lines = (tmp_path / "c.dat").read_text().splitlines()
    assert lines[0].startswith("# dim source_variance")
    data = np.loadtxt(tmp_path / "c.dat")
    assert data.shape[0] == SMALL.n


@pytest.fixture(scope="module")
def faces():
    return make_synthetic_faces(70, 16, seed=3)


class TestSuperResolution:
    def test_faces_shape_and_range(self, faces):
        assert faces.shape == (70, 16, 16)
        assert faces.min() >= 0 and faces.max() <= 1

    def test_training_image_error_is_quantization_error(self, faces):
        tm, qm, _ = fit_superresolution(faces[:60], L=3, K=8, num_bands=8,
                                        config=VrKmeansConfig(max_iters=10))
        from rrquant import rrq, transform
        V = transform.apply(tm, faces[:5])
        codes, residual = rrq.encode(V, qm, return_residual=True)
        rec = reconstruct(tm, qm, faces[:5])
        err = np.sum((rec - faces[:5]) ** 2, axis=(1, 2))
        np.testing.assert_allclose(err, np.sum(residual ** 2, axis=0), rtol=1e-8)

    def test_factor_one(self, faces, tmp_path):
        kw = dict(L=2, K=8, num_bands=8, config=VrKmeansConfig(max_iters=10))
        r = run_superresolution(train_images=faces[:60], test_images=faces[60:],
                                downsample=1, output_dir=tmp_path, **kw)
        tm, qm, _ = fit_superresolution(faces[:60], **kw)
        rec = np.clip(reconstruct(tm, qm, faces[60:]), 0, 1)
        for row, orig, out in zip(r["images"], faces[60:], rec):
            assert row["psnr_bicubic"] == float("inf")
            assert row["psnr_rrq"] == pytest.approx(imaging.psnr(orig, out))
        assert len(list(tmp_path.glob("*_rrq.pgm"))) == 10

    def test_from_directories(self, faces, tmp_path):
        (tmp_path / "train").mkdir()
        (tmp_path / "test").mkdir()
        for k, im in enumerate(faces[:60]):
            imaging.write_pgm(tmp_path / "train" / f"{k:03d}.pgm", im)
        for k, im in enumerate(faces[60:]):
            imaging.write_pgm(tmp_path / "test" / f"t{k}.pgm", im)
        r = run_superresolution(tmp_path / "train", tmp_path / "test", downsample=2, L=2, K=8,
                                num_bands=8, config=VrKmeansConfig(max_iters=5))
        assert [row["image"] for row in r["images"]] == sorted(f"t{k}" for k in range(10))
        assert r["config"]["n_train"] == 60

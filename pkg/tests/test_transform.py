import numpy as np
import pytest

from rrquant.errors import DimensionError
from rrquant.transform import (
    apply,
    dct2_forward,
    dct2_inverse,
    fit_transform_model,
    invert,
    make_partition,
    zigzag_order,
)

from oracles import direct_dct2


def _correlated_images(count, h, w, seed):
    """Images with separable AR(1) covariance along rows and columns."""
    rng = np.random.default_rng(seed)

    def chol(m, rho):
        idx = np.arange(m)
        return np.linalg.cholesky(rho ** np.abs(idx[:, None] - idx[None, :]))

    Lh, Lw = chol(h, 0.9), chol(w, 0.8)
    return np.stack([Lh @ rng.standard_normal((h, w)) @ Lw.T for _ in range(count)])


class TestDct:
    def test_constant_image(self):
        c = dct2_forward(np.full((4, 6), 2.5))
        assert c[0, 0] == pytest.approx(2.5 * np.sqrt(24))
        c[0, 0] = 0
        assert np.max(np.abs(c)) < 1e-12

    def test_two_by_two(self):
        np.testing.assert_allclose(direct_dct2([[1, 0], [0, 0]]), 0.5, atol=1e-15)
        np.testing.assert_allclose(dct2_forward([[1.0, 0.0], [0.0, 0.0]]), 0.5, atol=1e-15)

    @pytest.mark.parametrize("shape", [(3, 5), (8, 8), (16, 12)])
    def test_matches_definition(self, shape):
        x = np.random.default_rng(0).standard_normal(shape)
        np.testing.assert_allclose(dct2_forward(x), direct_dct2(x), rtol=0, atol=1e-10 * np.abs(x).max() * x.size)

    def test_parseval_and_inverse(self):
        x = np.random.default_rng(1).standard_normal((9, 7))
        c = dct2_forward(x)
        assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), rel=1e-10)
        np.testing.assert_allclose(dct2_inverse(c), x, rtol=1e-10, atol=1e-12)


class TestZigzag:
    def test_jpeg_order(self):
        rank = np.argsort(zigzag_order(4, 4)).reshape(4, 4)
        np.testing.assert_array_equal(rank, [[0, 1, 5, 6], [2, 4, 7, 12], [3, 8, 11, 13], [9, 10, 14, 15]])

    def test_rectangular_is_permutation(self):
        order = zigzag_order(5, 3)
        assert sorted(order.tolist()) == list(range(15))
        i, j = np.divmod(order, 3)
        assert np.all(np.diff(i + j) >= 0)


def test_partition():
    p = make_partition(10, 3)
    assert p.band_of_coeff.tolist() == [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]
    assert [s.stop - s.start for s in p.slices()] == [4, 3, 3]
    with pytest.raises(ValueError):
        make_partition(4, 5)


class TestModel:
    def test_rotations_orthonormal_and_signed(self):
        model = fit_transform_model(_correlated_images(50, 8, 8, 0), num_bands=4)
        for R in model.rotations:
            assert np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) <= 1e-10
            peak = np.argmax(np.abs(R), axis=0)
            assert np.all(R[peak, np.arange(R.shape[1])] > 0)

    def test_roundtrip_and_energy(self):
        imgs = _correlated_images(40, 8, 8, 1)
        model = fit_transform_model(imgs, num_bands=4)
        x = _correlated_images(1, 8, 8, 2)[0]
        v = apply(model, x)
        assert np.linalg.norm(invert(model, v) - x) <= 1e-8 * np.linalg.norm(x)
        mean_image = invert(model, np.zeros(64))
        np.testing.assert_allclose(mean_image, imgs.mean(axis=0), atol=1e-12)
        assert np.sum(v ** 2) == pytest.approx(np.sum((x - mean_image) ** 2), rel=1e-8)

    def test_single_coefficient_bands(self):
        imgs = _correlated_images(10, 4, 4, 3)
        model = fit_transform_model(imgs, num_bands=16)
        assert all(R.shape == (1, 1) and abs(R[0, 0]) == 1.0 for R in model.rotations)
        order = zigzag_order(4, 4)
        coeffs = dct2_forward(imgs[0]).ravel()[order]
        means = np.concatenate(model.band_means)
        np.testing.assert_allclose(apply(model, imgs[0]), coeffs - means, atol=1e-14)

    def test_white_noise_single_band(self):
        imgs = np.random.default_rng(4).standard_normal((2000, 4, 4))
        model = fit_transform_model(imgs, num_bands=1)
        Y = apply(model, imgs)
        # eigenvalue spread of a 16x16 sample covariance from 2000 draws is ~ +-2 sqrt(16/2000)
        np.testing.assert_allclose(Y.var(axis=1), 1.0, atol=0.25)
        assert Y.var(axis=1).sum() == pytest.approx(imgs.reshape(2000, -1).var(axis=0).sum(), rel=1e-10)

    def test_decorrelates_within_bands(self):
        imgs = _correlated_images(4000, 8, 8, 5)
        model = fit_transform_model(imgs, num_bands=8)
        Y = apply(model, imgs)
        for sl in model.partition.slices():
            corr = np.corrcoef(Y[sl])
            off = corr[~np.eye(corr.shape[0], dtype=bool)]
            assert np.max(np.abs(off)) < 0.05
            var = Y[sl].var(axis=1)
            assert np.all(np.diff(var) <= 1e-10)

    def test_batch_matches_single(self):
        imgs = _correlated_images(20, 6, 6, 6)
        model = fit_transform_model(imgs, num_bands=6)
        Y = apply(model, imgs)
        np.testing.assert_allclose(Y[:, 3], apply(model, imgs[3]), atol=1e-13)
        np.testing.assert_allclose(invert(model, Y)[3], imgs[3], atol=1e-12)

    def test_rank_deficient_bands(self):
        model = fit_transform_model(_correlated_images(3, 8, 8, 7), num_bands=2)
        for R in model.rotations:
            assert np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) <= 1e-10

    def test_errors(self):
        imgs = _correlated_images(5, 4, 4, 8)
        model = fit_transform_model(imgs, num_bands=2)
        with pytest.raises(DimensionError):
            apply(model, np.zeros((4, 5)))
        with pytest.raises(DimensionError):
            invert(model, np.zeros(15))
        with pytest.raises(DimensionError):
            fit_transform_model([np.zeros((4, 4)), np.zeros((4, 5))])
        with pytest.raises(ValueError):
            fit_transform_model([np.zeros((4, 4))])

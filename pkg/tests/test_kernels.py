"""The compiled kernels and their numpy twins must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import cho_factor, cho_solve

from boaug import _kernels as K


def _points(rng, n, d):
    return rng.random((n, d)), 1.0 / rng.uniform(0.1, 2.0, d) ** 2, rng.uniform(0.5, 3.0)


@pytest.mark.parametrize("n,d", [(1, 1), (5, 3), (30, 15)])
def test_gram_and_cross(rng, n, d):
    X, inv_ls2, sf2 = _points(rng, n, d)
    Y = rng.random((7, d))
    np.testing.assert_allclose(K.matern52_gram_jit(X, inv_ls2, sf2), K.matern52_gram_numpy(X, inv_ls2, sf2),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(K.matern52_cross_jit(Y, X, inv_ls2, sf2), K.matern52_cross_numpy(Y, X, inv_ls2, sf2),
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(np.diag(K.matern52_gram_numpy(X, inv_ls2, sf2)), sf2)


def test_from_r2_matches_gram(rng):
    X, inv_ls2, sf2 = _points(rng, 12, 4)
    R2 = np.einsum("ijk,k->ij", (X[:, None] - X[None]) ** 2, inv_ls2)
    ref = K.matern52_gram_numpy(X, inv_ls2, sf2)
    np.testing.assert_allclose(K.matern52_from_r2_jit(R2, sf2), ref, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(K.matern52_from_r2_numpy(R2, sf2), ref, rtol=1e-12, atol=1e-14)


def _dense_lml(Kmat, y, diag):
    Kd = Kmat + diag * np.eye(len(y))
    sign, logdet = np.linalg.slogdet(Kd)
    return -0.5 * y @ np.linalg.solve(Kd, y) - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi)


@pytest.mark.parametrize("n,d", [(2, 1), (8, 3), (25, 15)])
def test_lml_variants(rng, n, d):
    X, inv_ls2, sf2 = _points(rng, n, d)
    y = rng.normal(size=n)
    R2 = np.einsum("ijk,k->ij", (X[:, None] - X[None]) ** 2, inv_ls2)
    ref = _dense_lml(K.matern52_gram_numpy(X, inv_ls2, sf2), y, 1e-3)
    for fn in (K.gp_lml_jit, K.gp_lml_numpy):
        assert fn(X, y, inv_ls2, sf2, 1e-3) == pytest.approx(ref, rel=1e-9)
    for fn in (K.gp_lml_r2_jit, K.gp_lml_r2_numpy):
        assert fn(R2, y, sf2, 1e-3) == pytest.approx(ref, rel=1e-9)


def test_lml_raises_on_indefinite():
    X = np.zeros((3, 2))
    y = np.ones(3)
    for fn in (K.gp_lml_jit, K.gp_lml_numpy):
        with pytest.raises(np.linalg.LinAlgError):
            fn(X, y, np.ones(2), 1.0, 0.0)


def test_integrated_ei_kernels_agree(rng):
    M, n, d, q = 4, 9, 5, 11
    X = rng.random((n, d))
    Xq = rng.random((q, d))
    inv_ls2s = 1.0 / rng.uniform(0.2, 1.5, (M, d)) ** 2
    sf2s = rng.uniform(0.5, 2.0, M)
    alphas = np.empty((M, n))
    L_invs = np.empty((M, n, n))
    y = rng.normal(size=n)
    for m in range(M):
        Km = K.matern52_gram_numpy(X, inv_ls2s[m], sf2s[m]) + 1e-6 * np.eye(n)
        L = np.linalg.cholesky(Km)
        alphas[m] = cho_solve(cho_factor(Km, lower=True), y)
        L_invs[m] = np.linalg.inv(L)
    a = K.integrated_ei_jit(Xq, X, inv_ls2s, sf2s, alphas, L_invs, 0.1)
    b = K.integrated_ei_numpy(Xq, X, inv_ls2s, sf2s, alphas, L_invs, 0.1)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
    assert np.all(a >= 0)


@pytest.mark.parametrize("coeffs", [
    (1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
    (1.0, 0.25, 0.0, 0.0, 1.0, 0.0),
    (1.0, 0.0, 2.7, 0.0, 1.0, -1.3),
    (0.8, -0.6, 3.0, 0.6, 0.8, -1.0),
])
def test_affine_warp(rng, coeffs):
    imgs = rng.integers(0, 256, (3, 9, 7, 3), dtype=np.uint8)
    fill = np.array([128, 128, 128], np.uint8)
    c = np.array(coeffs)
    np.testing.assert_array_equal(K.affine_warp_jit(imgs, c, fill), K.affine_warp_numpy(imgs, c, fill))


def test_smooth_and_equalize(rng):
    imgs = rng.integers(0, 256, (4, 6, 5, 3), dtype=np.uint8)
    np.testing.assert_array_equal(K.smooth3x3_jit(imgs), K.smooth3x3_numpy(imgs))
    np.testing.assert_array_equal(K.equalize_jit(imgs), K.equalize_numpy(imgs))
    flat = np.full((1, 4, 4, 3), 9, np.uint8)
    np.testing.assert_array_equal(K.equalize_jit(flat), flat)
    np.testing.assert_array_equal(K.equalize_numpy(flat), flat)


@pytest.mark.parametrize("flag,expect", [("1", "numpy"), ("0", "jit")])
def test_env_flag_selects_implementation(flag, expect):
    env = dict(os.environ, BOAUG_DISABLE_JIT=flag)
    code = "from boaug import _kernels as K; print(K.gp_lml.__name__ if hasattr(K.gp_lml, '__name__') else '')"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip().endswith(expect)

"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The public names at the bottom of this module are bound to the compiled
versions unless ``BOAUG_DISABLE_JIT`` is set. Both flavours are importable
directly (``*_jit`` / ``*_numpy``) so tests and the benchmark can compare
them. Image kernels take uint8 stacks shaped (N, H, W, C).
"""
import math

import numpy as np

from ._jit import JIT_ENABLED, njit

LOG_2PI = math.log(2.0 * math.pi)
SQRT5 = math.sqrt(5.0)


# --------------------------------------------------------------------------
# Matern 5/2 covariance
# --------------------------------------------------------------------------

@njit(fastmath={"reassoc", "contract"})
def matern52_gram_jit(X, inv_ls2, sf2):
    n, d = X.shape
    Z = X * np.sqrt(inv_ls2)
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = sf2
        for j in range(i):
            r2 = 0.0
            for k in range(d):
                diff = Z[i, k] - Z[j, k]
                r2 += diff * diff
            s = math.sqrt(5.0 * r2)
            val = sf2 * (1.0 + s + s * s / 3.0) * math.exp(-s)
            K[i, j] = val
            K[j, i] = val
    return K


@njit(fastmath={"reassoc", "contract"})
def matern52_cross_jit(A, B, inv_ls2, sf2):
    na, d = A.shape
    nb = B.shape[0]
    scale = np.sqrt(inv_ls2)
    ZA = A * scale
    ZB = B * scale
    K = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            r2 = 0.0
            for k in range(d):
                diff = ZA[i, k] - ZB[j, k]
                r2 += diff * diff
            s = math.sqrt(5.0 * r2)
            K[i, j] = sf2 * (1.0 + s + s * s / 3.0) * math.exp(-s)
    return K


def _matern52_from_r2(r2, sf2):
    s = np.sqrt(5.0 * r2)
    return sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52_cross_numpy(A, B, inv_ls2, sf2):
    diff = A[:, None, :] - B[None, :, :]
    r2 = np.einsum("ijk,k->ij", diff * diff, inv_ls2)
    return _matern52_from_r2(r2, sf2)


def matern52_gram_numpy(X, inv_ls2, sf2):
    K = matern52_cross_numpy(X, X, inv_ls2, sf2)
    np.fill_diagonal(K, sf2)
    return K


@njit(fastmath={"reassoc", "contract"})
def matern52_from_r2_jit(R2, sf2):
    """Covariance from a matrix of scaled squared distances (lower triangle read)."""
    n = R2.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = sf2
        for j in range(i):
            s = math.sqrt(5.0 * max(R2[i, j], 0.0))
            val = sf2 * (1.0 + s + s * s / 3.0) * math.exp(-s)
            K[i, j] = val
            K[j, i] = val
    return K


@njit
def _lml_from_cov_jit(K, y, diag_add):
    n = K.shape[0]
    for i in range(n):
        K[i, i] += diag_add
    L = np.linalg.cholesky(K)
    z = np.empty(n)
    quad = 0.0
    logdet = 0.0
    for i in range(n):
        acc = y[i]
        for k in range(i):
            acc -= L[i, k] * z[k]
        z[i] = acc / L[i, i]
        quad += z[i] * z[i]
        logdet += math.log(L[i, i])
    return -0.5 * quad - logdet - 0.5 * n * 1.8378770664093453


@njit
def gp_lml_jit(X, y, inv_ls2, sf2, diag_add):
    """Log marginal likelihood of zero-mean GP; raises LinAlgError if K is not PD."""
    return _lml_from_cov_jit(matern52_gram_jit(X, inv_ls2, sf2), y, diag_add)


@njit
def gp_lml_r2_jit(R2, y, sf2, diag_add):
    """As :func:`gp_lml_jit`, from precomputed scaled squared distances."""
    return _lml_from_cov_jit(matern52_from_r2_jit(R2, sf2), y, diag_add)


def _lml_from_cov_numpy(K, y, diag_add):
    from scipy.linalg import solve_triangular

    n = K.shape[0]
    K[np.diag_indices(n)] += diag_add
    L = np.linalg.cholesky(K)
    if not np.all(np.isfinite(L)):
        raise np.linalg.LinAlgError("Matrix is not positive definite.")
    z = solve_triangular(L, y, lower=True, check_finite=False)
    return -0.5 * float(z @ z) - float(np.log(np.diag(L)).sum()) - 0.5 * n * LOG_2PI


def matern52_from_r2_numpy(R2, sf2):
    lower = np.tril(np.maximum(R2, 0.0), -1)
    K = _matern52_from_r2(lower + lower.T, sf2)
    np.fill_diagonal(K, sf2)
    return K


def gp_lml_numpy(X, y, inv_ls2, sf2, diag_add):
    return _lml_from_cov_numpy(matern52_gram_numpy(X, inv_ls2, sf2), y, diag_add)


def gp_lml_r2_numpy(R2, y, sf2, diag_add):
    return _lml_from_cov_numpy(matern52_from_r2_numpy(R2, sf2), y, diag_add)


# --------------------------------------------------------------------------
# Integrated expected improvement
# --------------------------------------------------------------------------

@njit(fastmath={"reassoc", "contract"})
def integrated_ei_jit(Xq, X, inv_ls2s, sf2s, alphas, L_invs, v_star):
    """Mean over M surrogates of EI at each query row.

    ``inv_ls2s`` (M, d), ``sf2s`` (M,), ``alphas`` (M, n) and ``L_invs``
    (M, n, n, inverse Cholesky factors) describe the models; targets are on
    the standardised scale.
    """
    q = Xq.shape[0]
    M = sf2s.shape[0]
    n = X.shape[0]
    out = np.zeros(q)
    ks = np.empty(n)
    for m in range(M):
        Km = matern52_cross_jit(Xq, X, inv_ls2s[m], sf2s[m])
        for i in range(q):
            for j in range(n):
                ks[j] = Km[i, j]
            mean = 0.0
            for j in range(n):
                mean += ks[j] * alphas[m, j]
            quad = 0.0
            for r in range(n):
                acc = 0.0
                for c in range(r + 1):
                    acc += L_invs[m, r, c] * ks[c]
                quad += acc * acc
            var = sf2s[m] - quad
            if var <= 0.0:
                continue
            std = math.sqrt(var)
            imp = v_star - mean
            z = imp / std
            ei = imp * 0.5 * math.erfc(-z * 0.7071067811865476) + std * 0.3989422804014327 * math.exp(-0.5 * z * z)
            if ei > 0.0:
                out[i] += ei
    return out / M


def integrated_ei_numpy(Xq, X, inv_ls2s, sf2s, alphas, L_invs, v_star):
    from scipy.special import ndtr

    out = np.zeros(Xq.shape[0])
    for m in range(sf2s.shape[0]):
        Ks = matern52_cross_numpy(Xq, X, inv_ls2s[m], sf2s[m])
        mean = Ks @ alphas[m]
        v = Ks @ L_invs[m].T
        var = sf2s[m] - np.einsum("ij,ij->i", v, v)
        pos = var > 0.0
        std = np.sqrt(np.where(pos, var, 1.0))
        imp = v_star - mean
        z = imp / std
        ei = imp * ndtr(z) + std * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        out += np.where(pos, np.maximum(ei, 0.0), 0.0)
    return out / sf2s.shape[0]


# --------------------------------------------------------------------------
# Image kernels
# --------------------------------------------------------------------------

@njit
def affine_warp_jit(imgs, coeffs, fill):
    """Inverse-map every output pixel centre through ``coeffs`` and sample bilinearly."""
    N, H, W, C = imgs.shape
    out = np.empty_like(imgs)
    a, b, c, d, e, f = coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4], coeffs[5]
    for y in range(H):
        yc = y + 0.5
        for x in range(W):
            xc = x + 0.5
            u = a * xc + b * yc + c - 0.5
            v = d * xc + e * yc + f - 0.5
            x0 = math.floor(u)
            y0 = math.floor(v)
            fx = u - x0
            fy = v - y0
            ix0 = int(x0)
            iy0 = int(y0)
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            in00 = 0 <= ix0 < W and 0 <= iy0 < H
            in10 = 0 <= ix0 + 1 < W and 0 <= iy0 < H
            in01 = 0 <= ix0 < W and 0 <= iy0 + 1 < H
            in11 = 0 <= ix0 + 1 < W and 0 <= iy0 + 1 < H
            for n in range(N):
                for ch in range(C):
                    v00 = float(imgs[n, iy0, ix0, ch]) if in00 else float(fill[ch])
                    v10 = float(imgs[n, iy0, ix0 + 1, ch]) if in10 else float(fill[ch])
                    v01 = float(imgs[n, iy0 + 1, ix0, ch]) if in01 else float(fill[ch])
                    v11 = float(imgs[n, iy0 + 1, ix0 + 1, ch]) if in11 else float(fill[ch])
                    acc = w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11
                    r = math.floor(acc + 0.5)
                    if r < 0.0:
                        r = 0.0
                    elif r > 255.0:
                        r = 255.0
                    out[n, y, x, ch] = np.uint8(r)
    return out


def affine_warp_numpy(imgs, coeffs, fill):
    N, H, W, C = imgs.shape
    a, b, c, d, e, f = (float(t) for t in coeffs)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    xs += 0.5
    ys += 0.5
    u = a * xs + b * ys + c - 0.5
    v = d * xs + e * ys + f - 0.5
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    fill = np.asarray(fill, dtype=np.float64)
    corners = (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    )
    acc = None
    for dx, dy, w in corners:
        xi = x0 + dx
        yi = y0 + dy
        inside = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        vals = imgs[:, np.clip(yi, 0, H - 1), np.clip(xi, 0, W - 1), :].astype(np.float64)
        vals = np.where(inside[None, :, :, None], vals, fill)
        term = w[None, :, :, None] * vals
        acc = term if acc is None else acc + term
    return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)


# 3x3 smoothing: centre 5, the eight neighbours 1, total 13
_SMOOTH = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]])


@njit
def smooth3x3_jit(imgs):
    N, H, W, C = imgs.shape
    out = np.empty_like(imgs)
    for n in range(N):
        for y in range(H):
            for x in range(W):
                for ch in range(C):
                    acc = 0.0
                    for dy in range(-1, 2):
                        yy = min(max(y + dy, 0), H - 1)
                        for dx in range(-1, 2):
                            xx = min(max(x + dx, 0), W - 1)
                            wgt = 5.0 if (dx == 0 and dy == 0) else 1.0
                            acc += wgt * imgs[n, yy, xx, ch]
                    r = math.floor(acc / 13.0 + 0.5)
                    out[n, y, x, ch] = np.uint8(min(max(r, 0.0), 255.0))
    return out


def smooth3x3_numpy(imgs):
    N, H, W, C = imgs.shape
    padded = np.pad(imgs, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge").astype(np.float64)
    acc = np.zeros(imgs.shape, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            acc += _SMOOTH[dy, dx] * padded[:, dy:dy + H, dx:dx + W, :]
    return np.clip(np.floor(acc / 13.0 + 0.5), 0, 255).astype(np.uint8)


@njit
def equalize_jit(imgs):
    N, H, W, C = imgs.shape
    out = np.empty_like(imgs)
    hist = np.zeros(256, dtype=np.int64)
    lut = np.empty(256, dtype=np.uint8)
    for n in range(N):
        for ch in range(C):
            hist[:] = 0
            for y in range(H):
                for x in range(W):
                    hist[imgs[n, y, x, ch]] += 1
            total = 0
            last = 0
            for i in range(256):
                if hist[i] > 0:
                    total += hist[i]
                    last = hist[i]
            step = (total - last) // 255
            if step == 0:
                for i in range(256):
                    lut[i] = i
            else:
                acc = step // 2
                for i in range(256):
                    lut[i] = min(acc // step, 255)
                    acc += hist[i]
            for y in range(H):
                for x in range(W):
                    out[n, y, x, ch] = lut[imgs[n, y, x, ch]]
    return out


def equalize_numpy(imgs):
    N, H, W, C = imgs.shape
    out = np.empty_like(imgs)
    for n in range(N):
        for ch in range(C):
            plane = imgs[n, :, :, ch]
            hist = np.bincount(plane.ravel(), minlength=256)
            nonzero = hist[hist > 0]
            step = (int(nonzero.sum()) - int(nonzero[-1])) // 255
            if step == 0:
                out[n, :, :, ch] = plane
                continue
            before = np.concatenate(([0], np.cumsum(hist)[:-1]))
            lut = np.minimum((step // 2 + before) // step, 255).astype(np.uint8)
            out[n, :, :, ch] = lut[plane]
    return out


if JIT_ENABLED:
    matern52_gram = matern52_gram_jit
    matern52_cross = matern52_cross_jit
    gp_lml = gp_lml_jit
    gp_lml_r2 = gp_lml_r2_jit
    integrated_ei = integrated_ei_jit
    affine_warp = affine_warp_jit
    smooth3x3 = smooth3x3_jit
    equalize = equalize_jit
else:
    matern52_gram = matern52_gram_numpy
    matern52_cross = matern52_cross_numpy
    gp_lml = gp_lml_numpy
    gp_lml_r2 = gp_lml_r2_numpy
    integrated_ei = integrated_ei_numpy
    affine_warp = affine_warp_numpy
    smooth3x3 = smooth3x3_numpy
    equalize = equalize_numpy

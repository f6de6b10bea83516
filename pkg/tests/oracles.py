"""Slow scalar reference implementations used as test oracles."""
import math

import numpy as np


def conv_loop(x, w, b=None, stride=1, pad=0, groups=1):
    """Direct 2-D convolution (cross-correlation) over a (c, h, w) array."""
    c, h, wd = x.shape
    co, ci, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((co, oh, ow))
    per = co // groups
    for o in range(co):
        g = o // per
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0 if b is None else float(b[o])
                for i in range(ci):
                    for dy in range(k):
                        for dx in range(k):
                            acc += w[o, i, dy, dx] * xp[g * ci + i, y * stride + dy, xx * stride + dx]
                out[o, y, xx] = acc
    return out


def gelu_tanh(v):
    return 0.5 * v * (1 + np.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3)))


def layernorm_loop(x, weight, bias, eps=1e-6):
    out = np.zeros_like(x)
    c, h, w = x.shape
    for y in range(h):
        for xx in range(w):
            v = x[:, y, xx]
            mu = sum(v) / c
            var = sum((t - mu) ** 2 for t in v) / c
            out[:, y, xx] = weight * (v - mu) / math.sqrt(var + eps) + bias
    return out


def dft2(x):
    """Dense 2-D DFT of a real (h, w) array via explicit sums."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            s = 0j
            for y in range(h):
                for xx in range(w):
                    s += x[y, xx] * np.exp(-2j * np.pi * (u * y / h + v * xx / w))
            out[u, v] = s
    return out


def idft2(X):
    h, w = X.shape
    out = np.zeros((h, w), dtype=complex)
    for y in range(h):
        for xx in range(w):
            s = 0j
            for u in range(h):
                for v in range(w):
                    s += X[u, v] * np.exp(2j * np.pi * (u * y / h + v * xx / w))
            out[y, xx] = s / (h * w)
    return out


def irfft2_dense(half, h, w):
    """Inverse of a half spectrum with the same semantics as a standard irfft2: the
    full spectrum is rebuilt by Hermitian symmetry from the stored columns, with
    the imaginary part of self-conjugate bins dropped."""
    full = np.zeros((h, w), dtype=complex)
    nh = w // 2 + 1
    full[:, :nh] = half
    for u in range(h):
        for v in range(nh, w):
            full[u, v] = np.conj(half[(-u) % h, (-v) % w])
    # self-conjugate columns (v = 0 and v = w/2 for even w) are read as the Hermitian part
    for v in [0] + ([w // 2] if w % 2 == 0 else []):
        col = full[:, v].copy()
        full[:, v] = 0.5 * (col + np.conj(col[(-np.arange(h)) % h]))
    return idft2(full).real


def psnr_loop(x, y):
    se = 0.0
    n = 0
    for a, b in zip(np.ravel(x), np.ravel(y)):
        se += (float(a) - float(b)) ** 2
        n += 1
    mse = se / n
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(1.0 / mse))


def ssim_loop(x, y, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """SSIM with 'valid' Gaussian windows, summed explicitly window by window."""
    t = np.arange(win) - (win - 1) / 2
    g1 = np.exp(-(t ** 2) / (2 * sigma ** 2))
    g1 /= g1.sum()
    g = np.outer(g1, g1)
    c1, c2 = (k1) ** 2, (k2) ** 2
    vals = []
    for ch in range(x.shape[0]):
        a, b = x[ch], y[ch]
        h, w = a.shape
        acc = []
        for i in range(h - win + 1):
            for j in range(w - win + 1):
                pa, pb = a[i:i + win, j:j + win], b[i:i + win, j:j + win]
                ma, mb = (g * pa).sum(), (g * pb).sum()
                va = (g * pa * pa).sum() - ma ** 2
                vb = (g * pb * pb).sum() - mb ** 2
                cov = (g * pa * pb).sum() - ma * mb
                acc.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
        vals.append(np.mean(acc))
    return float(np.mean(vals))


def hsic_cka(X, Y):
    """Linear CKA through the explicit HSIC formula with Gram matrices and centering matrix H."""
    n = X.shape[0]
    H = np.eye(n) - np.ones((n, n)) / n
    K, L = X @ X.T, Y @ Y.T

    def hsic(A, B):
        return np.trace(A @ H @ B @ H) / (n - 1) ** 2

    return hsic(K, L) / math.sqrt(hsic(K, K) * hsic(L, L))

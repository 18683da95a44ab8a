"""Brute-force reference computations, written independently of the package.

Everything here loops over explicit indices with numpy; none of it calls
into ``lapstyle``.
"""

import math

import numpy as np

BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def dense_filter(img, kernel2d):
    """Correlate each channel of ``img`` (C, H, W) with ``kernel2d`` under numpy reflect padding."""
    c, h, w = img.shape
    k = kernel2d.shape[0]
    p = k // 2
    out = np.zeros_like(img, dtype=np.float64)
    for ch in range(c):
        padded = np.pad(img[ch].astype(np.float64), p, mode="reflect") if min(h, w) > 1 else np.pad(img[ch].astype(np.float64), p, mode="edge")
        for i in range(h):
            for j in range(w):
                out[ch, i, j] = np.sum(padded[i : i + k, j : j + k] * kernel2d)
    return out


def downsample(img):
    return dense_filter(img, np.outer(BINOMIAL, BINOMIAL))[:, ::2, ::2]


def upsample(img):
    c, h, w = img.shape
    z = np.zeros((c, 2 * h, 2 * w))
    z[:, ::2, ::2] = img
    return dense_filter(z, 4.0 * np.outer(BINOMIAL, BINOMIAL))


def decompose(img, levels):
    residuals, cur = [], np.asarray(img, dtype=np.float64)
    for _ in range(levels):
        small = downsample(cur)
        residuals.append(cur - upsample(small))
        cur = small
    return cur, residuals


def softmax_row(v):
    e = [math.exp(x - max(v)) for x in v]
    s = sum(e)
    return [x / s for x in e]


def cosine_distance(a, b, eps=1e-8):
    na = max(math.sqrt(sum(x * x for x in a)), eps)
    nb = max(math.sqrt(sum(x * x for x in b)), eps)
    return 1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb)


def remd_exhaustive(style_vecs, cs_vecs):
    """Both one-sided mean nearest-neighbour costs, then their max, by enumeration."""
    cost = [[cosine_distance(s, c) for c in cs_vecs] for s in style_vecs]
    row_term = sum(min(row) for row in cost) / len(style_vecs)
    col_term = sum(min(cost[i][j] for i in range(len(style_vecs))) for j in range(len(cs_vecs))) / len(cs_vecs)
    return max(row_term, col_term)


def remd_from_cost(cost):
    n, m = len(cost), len(cost[0])
    row_term = sum(min(cost[i]) for i in range(n)) / n
    col_term = sum(min(cost[i][j] for i in range(n)) for j in range(m)) / m
    return max(row_term, col_term)


def self_similarity(c_vecs, cs_vecs, eps=1e-8):
    n = len(c_vecs)
    dc = [[cosine_distance(c_vecs[i], c_vecs[j]) for j in range(n)] for i in range(n)]
    dcs = [[cosine_distance(cs_vecs[i], cs_vecs[j]) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        rc = max(sum(dc[i]), eps)
        rcs = max(sum(dcs[i]), eps)
        for j in range(n):
            total += abs(dc[i][j] / rc - dcs[i][j] / rcs)
    return total / (n * n)


def channel_stats(feat):
    """Per-channel population mean and std of a (C, H, W) array."""
    flat = feat.reshape(feat.shape[0], -1).astype(np.float64)
    mean = flat.mean(axis=1)
    std = np.sqrt(((flat - mean[:, None]) ** 2).mean(axis=1))
    return mean, std


def sobel_magnitude(img):
    """Per-channel Sobel magnitude with edge-replicated borders, scaled by the global max."""
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    ky = kx.T
    c, h, w = img.shape
    out = np.zeros((c, h, w))
    for ch in range(c):
        p = np.pad(img[ch].astype(np.float64), 1, mode="edge")
        for i in range(h):
            for j in range(w):
                win = p[i : i + 3, j : j + 3]
                out[ch, i, j] = math.hypot(np.sum(win * kx), np.sum(win * ky))
    peak = max(out.max(), 1e-8)
    return out / peak


def ssim_dense(a, b, k1=0.01, k2=0.03, size=11, sigma=1.5):
    """Sliding-window SSIM over valid windows of 2-D luminance arrays."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = k1**2, k2**2
    h, w = a.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa, pb = a[i : i + size, j : j + size], b[i : i + size, j : j + size]
            ma, mb = np.sum(win * pa), np.sum(win * pb)
            va = np.sum(win * (pa - ma) ** 2)
            vb = np.sum(win * (pb - mb) ** 2)
            cov = np.sum(win * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def central_difference(fn, x, step=1e-3):
    """Numerical gradient of scalar ``fn`` at numpy array ``x`` (float64)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = fn(x)
        x[idx] = orig - step
        fm = fn(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12))

"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here shares code with :mod:`fpnet.ops`.
"""
import numpy as np


def conv2d_naive(x, weight, bias=None, stride=1, padding=0):
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(k):
                            for dj in range(k):
                                r = i * stride + di - padding
                                s = j * stride + dj - padding
                                if 0 <= r < h and 0 <= s < w:
                                    acc += x[b, ic, r, s] * weight[oc, ic, di, dj]
                    out[b, oc, i, j] = acc + (bias[oc] if bias is not None else 0.0)
    return out


def grouped_conv2d_naive(x, weight, groups, padding=0):
    """Grouped convolution by splitting channels and calling the dense oracle per group."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    c = x.shape[1]
    o = weight.shape[0]
    cin, cout = c // groups, o // groups
    parts = [conv2d_naive(x[:, g * cin:(g + 1) * cin], weight[g * cout:(g + 1) * cout], padding=padding)
             for g in range(groups)]
    return np.concatenate(parts, axis=1)


def max_pool_naive(x, window, stride):
    x = np.asarray(x)
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[b, ch, i, j] = max(
                        x[b, ch, i * stride + di, j * stride + dj]
                        for di in range(window) for dj in range(window)
                    )
    return out


def quadratic_form_double_sum(w, x):
    """sum_i sum_j w[i, j] x[i] x[j], written as an explicit double loop."""
    total = 0.0
    n = len(x)
    for i in range(n):
        for j in range(n):
            total += w[i][j] * x[i] * x[j]
    return total


def central_difference(f, x, eps):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)

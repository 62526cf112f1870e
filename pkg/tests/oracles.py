"""Brute-force reference implementations used as independent test oracles.

Everything here is written as plain loops over window definitions, kept
deliberately separate from the vectorized/compiled implementations under
test.
"""

import numpy as np

GRAY = np.array([0.299, 0.587, 0.114])


def windowed_min(img, radius):
    h, w = img.shape[:2]
    minc = img.min(axis=2)
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            y0, y1 = max(i - radius, 0), min(i + radius, h - 1)
            x0, x1 = max(j - radius, 0), min(j + radius, w - 1)
            out[i, j] = minc[y0 : y1 + 1, x0 : x1 + 1].min()
    return out


def windowed_mean(arr, radius):
    h, w = arr.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            y0, y1 = max(i - radius, 0), min(i + radius, h - 1)
            x0, x1 = max(j - radius, 0), min(j + radius, w - 1)
            out[i, j] = arr[y0 : y1 + 1, x0 : x1 + 1].mean()
    return out


def airlight(img, fraction):
    h, w = img.shape[:2]
    flat = img.reshape(h * w, 3)
    lum = flat @ GRAY
    k = int(np.ceil(fraction * h * w))
    order = sorted(range(h * w), key=lambda i: (lum[i], i))
    top = order[h * w - k :]
    return np.maximum(flat[top].mean(axis=0), 1e-3)


def guided_filter(inp, guide, radius, eps):
    h, w = inp.shape
    mean_g = windowed_mean(guide, radius)
    mean_i = windowed_mean(inp, radius)
    mean_gi = windowed_mean(guide * inp, radius)
    mean_gg = windowed_mean(guide * guide, radius)
    a = (mean_gi - mean_g * mean_i) / (mean_gg - mean_g * mean_g + eps)
    b = mean_i - a * mean_g
    return windowed_mean(a, radius) * guide + windowed_mean(b, radius)


def conv2d(x, weights, bias):
    h, w, cin = x.shape
    f = weights.shape[0]
    cout = weights.shape[3]
    p = (f - 1) // 2
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for o in range(cout):
                acc = bias[o]
                for fy in range(f):
                    for fx in range(f):
                        yy = i + fy - p
                        xx = j + fx - p
                        if 0 <= yy < h and 0 <= xx < w:
                            for c in range(cin):
                                acc += x[yy, xx, c] * weights[fy, fx, c, o]
                out[i, j, o] = acc
    return out


def mean_shift_modes(gray, h_s, h_r, max_iters, eps):
    """Exact per-pixel joint mean-shift iteration with full precision exp."""
    h, w = gray.shape
    radius = int(np.ceil(3.0 * h_s))
    modes = np.empty((h, w))
    for py in range(h):
        for px in range(w):
            yy, yx, yr = float(py), float(px), gray[py, px]
            for _ in range(max_iters):
                cy, cx = int(round(yy)), int(round(yx))
                cy = min(max(cy, 0), h - 1)
                cx = min(max(cx, 0), w - 1)
                y0, y1 = max(cy - radius, 0), min(cy + radius, h - 1)
                x0, x1 = max(cx - radius, 0), min(cx + radius, w - 1)
                js, ks = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
                vals = gray[y0 : y1 + 1, x0 : x1 + 1]
                d2 = ((js - yy) ** 2 + (ks - yx) ** 2) / h_s**2 + (vals - yr) ** 2 / h_r**2
                wgt = np.exp(-0.5 * d2)
                total = wgt.sum()
                ny = (wgt * js).sum() / total
                nx = (wgt * ks).sum() / total
                nr = (wgt * vals).sum() / total
                step = ((ny - yy) ** 2 + (nx - yx) ** 2) / h_s**2 + (nr - yr) ** 2 / h_r**2
                yy, yx, yr = ny, nx, nr
                if step < eps:
                    break
            modes[py, px] = yr
    return modes


def average_gradient(img):
    gray = img @ GRAY
    h, w = gray.shape
    acc = 0.0
    for i in range(h - 1):
        for j in range(w - 1):
            dx = gray[i, j + 1] - gray[i, j]
            dy = gray[i + 1, j] - gray[i, j]
            acc += np.sqrt((dx * dx + dy * dy) / 2.0)
    return acc / ((h - 1) * (w - 1)) * 255.0


def visible_edge_count(img, window=5, threshold=0.05):
    gray = img @ GRAY
    h, w = gray.shape
    r = window // 2
    count = 0
    for i in range(h):
        for j in range(w):
            y0, y1 = max(i - r, 0), min(i + r, h - 1)
            x0, x1 = max(j - r, 0), min(j + r, w - 1)
            patch = gray[y0 : y1 + 1, x0 : x1 + 1]
            hi, lo = patch.max(), patch.min()
            if hi + lo > 0 and (hi - lo) / (hi + lo) >= threshold:
                count += 1
    return count

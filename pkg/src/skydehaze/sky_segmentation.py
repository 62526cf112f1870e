"""Mean-shift sky segmentation with confidence-weighted edge barriers.

The grayscale image is filtered by joint spatial-range mean shift, pixels
are clustered into regions wherever neighboring modes agree and no
high-confidence edge separates them, small regions are absorbed, and the
sky is the union of bright smooth regions touching the top border.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .image_core import morphology, require_color_image, require_scalar_map, to_grayscale

logger = logging.getLogger(__name__)

_LOG2E = 1.4426950408889634
_LN2 = 0.6931471805599453
_POW2 = 2.0 ** np.arange(-90.0, 2.0)

# adoption tolerance for the speedup path: one squared joint bandwidth
_ADOPT_TOL = 1.0

_SKY_MORPH_RADIUS = 3


@dataclass(frozen=True)
class MeanShiftParams:
    """Segmentation bandwidths and sky-selection knobs.

    h_s, h_r : spatial and range bandwidths of the Gaussian kernel
    min_region : regions smaller than this are absorbed by a neighbor
    max_iters, convergence_eps : per-pixel iteration bounds; the step is
        measured as the squared joint-metric distance
    edge_confidence_threshold : merges touching a pixel whose edge
        confidence exceeds this are blocked
    speedup : adopt the mode of an adjacent finished pixel (and of grid
        cells the search path crosses) when within one joint bandwidth;
        disable for the exact per-pixel iteration
    sky_luminance_factor : a sky candidate needs mean luminance at least
        this fraction of the image maximum
    """

    h_s: float = 8.0
    h_r: float = 0.06
    min_region: int = 100
    max_iters: int = 50
    convergence_eps: float = 1e-4
    edge_confidence_threshold: float = 0.9
    speedup: bool = True
    sky_luminance_factor: float = 0.6

    def __post_init__(self):
        if self.h_s <= 0 or self.h_r <= 0:
            raise ValueError(f"bandwidths must be > 0, got h_s={self.h_s}, h_r={self.h_r}")
        if self.min_region < 1:
            raise ValueError(f"min_region must be >= 1, got {self.min_region}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.convergence_eps <= 0:
            raise ValueError(f"convergence_eps must be > 0, got {self.convergence_eps}")


@njit(cache=True, inline="always")
def _fexp(x):
    # exp(x) for x in [-62, 0]: 2^n * poly(f) with |f| <= ln2 / 2;
    # max relative error ~3e-10, several times faster than libm exp
    n = int(x * _LOG2E - 0.5)
    f = x - n * _LN2
    p = 1.0 + f * (1.0 + f * (0.5 + f * (1.0 / 6.0 + f * (1.0 / 24.0 + f * (
        1.0 / 120.0 + f * (1.0 / 720.0 + f * (1.0 / 5040.0 + f / 40320.0)))))))
    return p * _POW2[n + 90]


@njit(cache=True)
def _mean_shift_kernel(gray, h_s, h_r, max_iters, eps, speedup):
    H, W = gray.shape
    R = int(np.ceil(3.0 * h_s))
    inv_hs2 = 1.0 / (h_s * h_s)
    inv_hr2 = 1.0 / (h_r * h_r)
    mode_r = np.zeros((H, W))
    mode_y = np.zeros((H, W))
    mode_x = np.zeros((H, W))
    assigned = np.zeros((H, W), np.uint8)
    iters = np.zeros((H, W), np.int32)
    wy = np.empty(2 * R + 1)
    wx = np.empty(2 * R + 1)
    path_y = np.empty(max_iters + 1, np.int64)
    path_x = np.empty(max_iters + 1, np.int64)
    for py in range(H):
        for px in range(W):
            if assigned[py, px] == 1:
                continue
            yy = float(py)
            yx = float(px)
            yr = gray[py, px]
            if speedup:
                # adopt a finished 8-neighbor's mode from the same range basin
                best = _ADOPT_TOL
                by = -1
                bx = -1
                for t in range(4):
                    if t == 0:
                        qy = py - 1; qx = px
                    elif t == 1:
                        qy = py - 1; qx = px - 1
                    elif t == 2:
                        qy = py - 1; qx = px + 1
                    else:
                        qy = py; qx = px - 1
                    if qy < 0 or qx < 0 or qx > W - 1:
                        continue
                    if assigned[qy, qx] != 1:
                        continue
                    d = (yr - mode_r[qy, qx]) ** 2 * inv_hr2
                    if d < best:
                        best = d
                        by = qy
                        bx = qx
                if by >= 0:
                    mode_r[py, px] = mode_r[by, bx]
                    mode_y[py, px] = mode_y[by, bx]
                    mode_x[py, px] = mode_x[by, bx]
                    assigned[py, px] = 1
                    continue
            it = 0
            npath = 0
            while it < max_iters:
                it += 1
                cy = int(round(yy))
                cx = int(round(yx))
                if cy < 0:
                    cy = 0
                elif cy > H - 1:
                    cy = H - 1
                if cx < 0:
                    cx = 0
                elif cx > W - 1:
                    cx = W - 1
                if speedup:
                    if assigned[cy, cx] == 1:
                        d = ((yy - mode_y[cy, cx]) ** 2 + (yx - mode_x[cy, cx]) ** 2) * inv_hs2 \
                            + (yr - mode_r[cy, cx]) ** 2 * inv_hr2
                        if d < _ADOPT_TOL:
                            yy = mode_y[cy, cx]
                            yx = mode_x[cy, cx]
                            yr = mode_r[cy, cx]
                            break
                    else:
                        # grid cells the path crosses share this trajectory
                        d = ((yy - cy) ** 2 + (yx - cx) ** 2) * inv_hs2 \
                            + (yr - gray[cy, cx]) ** 2 * inv_hr2
                        if d < _ADOPT_TOL:
                            dup = False
                            for t in range(npath):
                                if path_y[t] == cy and path_x[t] == cx:
                                    dup = True
                                    break
                            if not dup:
                                path_y[npath] = cy
                                path_x[npath] = cx
                                npath += 1
                # one weighted-mean update over the truncated window
                y0 = max(cy - R, 0)
                y1 = min(cy + R, H - 1)
                x0 = max(cx - R, 0)
                x1 = min(cx + R, W - 1)
                for j in range(y0, y1 + 1):
                    d = j - yy
                    wy[j - y0] = _fexp(-0.5 * d * d * inv_hs2)
                for k in range(x0, x1 + 1):
                    d = k - yx
                    wx[k - x0] = _fexp(-0.5 * d * d * inv_hs2)
                sw = 0.0
                sy = 0.0
                sx = 0.0
                sr = 0.0
                for j in range(y0, y1 + 1):
                    wj = wy[j - y0]
                    rw = 0.0
                    rx = 0.0
                    rr = 0.0
                    for k in range(x0, x1 + 1):
                        g = gray[j, k]
                        dr = g - yr
                        a = 0.5 * dr * dr * inv_hr2
                        if a > 40.0:
                            continue
                        w = wx[k - x0] * _fexp(-a)
                        rw += w
                        rx += w * k
                        rr += w * g
                    sw += wj * rw
                    sx += wj * rx
                    sr += wj * rr
                    sy += wj * rw * j
                ny = sy / sw
                nx = sx / sw
                nr = sr / sw
                step = ((ny - yy) ** 2 + (nx - yx) ** 2) * inv_hs2 + (nr - yr) ** 2 * inv_hr2
                yy = ny
                yx = nx
                yr = nr
                if step < eps:
                    break
            mode_r[py, px] = yr
            mode_y[py, px] = yy
            mode_x[py, px] = yx
            assigned[py, px] = 1
            iters[py, px] = it
            for t in range(npath):
                qy = path_y[t]
                qx = path_x[t]
                if assigned[qy, qx] == 0:
                    mode_r[qy, qx] = yr
                    mode_y[qy, qx] = yy
                    mode_x[qy, qx] = yx
                    assigned[qy, qx] = 1
    return mode_r, iters


def mean_shift_filter(
    gray: np.ndarray, params: MeanShiftParams, return_iters: bool = False
):
    """Converge every pixel's joint (position, luminance) point to its mode.

    Each pixel iterates the kernel-weighted mean of the grid points within
    3 * h_s, weighting by ``exp(-||.||^2 / 2)`` in the joint metric
    ``||spatial||^2 / h_s^2 + ||range||^2 / h_r^2``, until the squared step
    drops below ``convergence_eps`` or ``max_iters`` is hit. The returned
    map holds each pixel's converged range value at its original position.

    With ``params.speedup`` (default) pixels adopt the mode of an adjacent
    finished pixel in the same range basin, and grid cells crossed by a
    search path inherit its mode; raster processing order keeps the result
    deterministic. Disable for the exact independent per-pixel iteration.
    """
    gray = require_scalar_map(gray, "gray")
    if gray.size == 0:
        raise ValueError("gray map must be non-empty")
    modes, iters = _mean_shift_kernel(
        np.ascontiguousarray(gray),
        float(params.h_s),
        float(params.h_r),
        int(params.max_iters),
        float(params.convergence_eps),
        bool(params.speedup),
    )
    logger.debug(
        "mean shift: %d px, max %d iterations (bound %d)",
        gray.size,
        int(iters.max()),
        params.max_iters,
    )
    if return_iters:
        return modes, iters
    return modes


def _edge_templates() -> np.ndarray:
    """Ideal 3x3 step-edge templates: 4 orientations x 2 phases, zero-mean
    unit-norm."""
    offsets = np.arange(-1, 2)
    jj, ii = np.meshgrid(offsets, offsets)  # jj: x, ii: y
    templates = []
    for theta in (0.0, 45.0, 90.0, 135.0):
        nx = np.cos(np.deg2rad(theta))
        ny = np.sin(np.deg2rad(theta))
        d = jj * nx + ii * ny  # signed distance along the gradient normal
        for cut in (0.5, -0.5):
            t = np.where(d > cut, 1.0, -1.0)
            t -= t.mean()
            norm = np.sqrt((t * t).sum())
            templates.append(t / norm)
    return np.stack(templates)


_TEMPLATES = _edge_templates()


def edge_confidence_map(gray: np.ndarray) -> np.ndarray:
    """Edge confidence in [0, 1]: step-template correlation times the
    rank-normalized gradient magnitude.

    The local 3x3 patch (zero-mean, unit-norm) is correlated against the
    ideal step edge for the quantized local gradient orientation (both
    phase alignments); that correlation is scaled by the empirical CDF of
    the Sobel gradient magnitude, so only pixels that both look like a
    step and carry a strong gradient score high.
    """
    gray = require_scalar_map(gray, "gray")
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)

    flat = np.sort(mag.ravel())
    rank = np.searchsorted(flat, mag.ravel(), side="right").reshape(mag.shape)
    rho = rank / mag.size

    # patch L2 norm after mean removal; templates are zero-mean so plain
    # correlation already subtracts the patch mean
    s1 = ndimage.uniform_filter(gray, size=3, mode="nearest") * 9.0
    s2 = ndimage.uniform_filter(gray * gray, size=3, mode="nearest") * 9.0
    patch_norm = np.sqrt(np.maximum(s2 - s1 * s1 / 9.0, 0.0))

    corr = np.stack(
        [ndimage.correlate(gray, t, mode="nearest") for t in _TEMPLATES]
    )

    # orientation quantized to {0, 45, 90, 135} degrees
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    obin = np.mod(np.rint(angle / 45.0).astype(np.int64), 4)

    idx = obin[None, :, :]
    rows = np.arange(gray.shape[0])[None, :, None]
    cols = np.arange(gray.shape[1])[None, None, :]
    phase_a = np.abs(corr[2 * idx, rows, cols][0])
    phase_b = np.abs(corr[2 * idx + 1, rows, cols][0])
    best = np.maximum(phase_a, phase_b)

    eta = np.zeros_like(gray)
    ok = patch_norm > 1e-12
    eta[ok] = np.clip(best[ok] / patch_norm[ok], 0.0, 1.0)
    confidence = eta * rho
    confidence[mag == 0] = 0.0
    return confidence


def cluster_regions(
    modes: np.ndarray, edges: np.ndarray, params: MeanShiftParams
) -> np.ndarray:
    """Group 4-connected pixels whose modes agree into labeled regions.

    Two 4-neighbors merge when their converged range values differ by less
    than ``h_r``, their spatial distance (always 1) is below ``h_s``, and
    neither pixel's edge confidence exceeds the barrier threshold. Labels
    are 1..K in raster order of first occurrence.
    """
    modes = require_scalar_map(modes, "modes")
    edges = require_scalar_map(edges, "edges")
    if modes.shape != edges.shape:
        raise ValueError(f"modes shape {modes.shape} does not match edges {edges.shape}")
    h, w = modes.shape
    passable = edges <= params.edge_confidence_threshold
    spatial_ok = 1.0 < params.h_s

    idx = np.arange(h * w).reshape(h, w)
    rows_i = []
    rows_j = []
    if spatial_ok:
        right = (
            (np.abs(modes[:, 1:] - modes[:, :-1]) < params.h_r)
            & passable[:, 1:]
            & passable[:, :-1]
        )
        down = (
            (np.abs(modes[1:, :] - modes[:-1, :]) < params.h_r)
            & passable[1:, :]
            & passable[:-1, :]
        )
        rows_i = np.concatenate([idx[:, :-1][right], idx[:-1, :][down]])
        rows_j = np.concatenate([idx[:, 1:][right], idx[1:, :][down]])
    graph = coo_matrix(
        (np.ones(len(rows_i), dtype=np.int8), (rows_i, rows_j)), shape=(h * w, h * w)
    )
    _, comp = connected_components(graph, directed=False)
    return _relabel_raster(comp.reshape(h, w))


def _relabel_raster(labels: np.ndarray) -> np.ndarray:
    """Map labels to 1..K ordered by first raster occurrence."""
    flat = labels.ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    return (order[inverse] + 1).reshape(labels.shape).astype(np.int32)


def _adjacency_pairs(labels: np.ndarray) -> np.ndarray:
    """Unique unordered pairs of distinct labels meeting across an edge."""
    a = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    b = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    differ = a != b
    lo = np.minimum(a[differ], b[differ])
    hi = np.maximum(a[differ], b[differ])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def prune_small_regions(labels: np.ndarray, min_region: int) -> np.ndarray:
    """Absorb every region smaller than ``min_region`` into its largest
    adjacent region, repeating until all regions reach the threshold or a
    single region remains. Ties go to the smallest label."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"labels must have shape (H, W), got {labels.shape}")
    out = _relabel_raster(labels)
    while True:
        sizes = np.bincount(out.ravel())  # index 0 unused
        n_regions = (sizes[1:] > 0).sum()
        if n_regions <= 1:
            break
        small = [r for r in range(1, sizes.size) if 0 < sizes[r] < min_region]
        if not small:
            break
        pairs = _adjacency_pairs(out)
        neighbors: dict[int, list[int]] = {}
        for lo, hi in pairs:
            neighbors.setdefault(int(lo), []).append(int(hi))
            neighbors.setdefault(int(hi), []).append(int(lo))
        parent = np.arange(sizes.size)

        def find(r: int) -> int:
            while parent[r] != r:
                parent[r] = parent[parent[r]]
                r = parent[r]
            return r

        for r in small:
            adjacent = neighbors.get(r, [])
            if not adjacent:
                continue
            # snapshot sizes: largest neighbor, smallest label on ties
            target = min(adjacent, key=lambda q: (-sizes[q], q))
            ra, rb = find(r), find(target)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        resolved = np.array([find(r) for r in range(sizes.size)])
        merged = resolved[out]
        if np.array_equal(merged, out):
            break
        out = _relabel_raster(merged)
    return out


def extract_sky_mask(img: np.ndarray, params: MeanShiftParams | None = None) -> np.ndarray:
    """Segment the image and return the binary sky mask (True = sky).

    A region qualifies as sky when it touches the top border, its mean
    luminance reaches ``sky_luminance_factor`` of the image maximum, and
    its interior mean gradient magnitude does not exceed the image median
    gradient. The union of qualifying regions is closed then opened
    (radius 3) to smooth the boundary. Returns an all-False mask when
    nothing qualifies, which callers treat as "skip the sky branch".
    """
    img = require_color_image(img)
    if params is None:
        params = MeanShiftParams()
    gray = to_grayscale(img)
    modes = mean_shift_filter(gray, params)
    confidence = edge_confidence_map(gray)
    labels = cluster_regions(modes, confidence, params)
    labels = prune_small_regions(labels, params.min_region)

    gy, gx = np.gradient(gray)
    grad = np.hypot(gx, gy)
    grad_median = float(np.median(grad))
    max_lum = float(gray.max())

    # interior pixels: all 4 neighbors share the label (border pixels of
    # the frame count as interior on the frame side)
    interior = np.ones(labels.shape, dtype=bool)
    interior[1:, :] &= labels[1:, :] == labels[:-1, :]
    interior[:-1, :] &= labels[:-1, :] == labels[1:, :]
    interior[:, 1:] &= labels[:, 1:] == labels[:, :-1]
    interior[:, :-1] &= labels[:, :-1] == labels[:, 1:]

    sky = np.zeros(labels.shape, dtype=bool)
    top_row = labels[0, :]
    for region in np.unique(labels):
        if region not in top_row:
            continue
        member = labels == region
        if gray[member].mean() < params.sky_luminance_factor * max_lum:
            continue
        inner = member & interior
        sample = inner if inner.any() else member
        if grad[sample].mean() > grad_median + 1e-12:
            continue
        sky |= member
    if not sky.any():
        return sky
    sky = morphology(sky, "close", _SKY_MORPH_RADIUS)
    sky = morphology(sky, "open", _SKY_MORPH_RADIUS)
    return sky

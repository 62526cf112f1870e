"""No-reference quality indices and the machine-readable report.

Four indices: grayscale histogram entropy, ratio of new visible edges,
average gradient (0-255 scale), and the percentage of saturated pixels.
Entropy and average gradient should rise after a good restoration; the
saturated percentage should stay low.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .image_core import require_color_image, to_grayscale

# a pixel is a visible edge when its local 5x5 Michelson contrast
# (max - min) / (max + min) on grayscale reaches 5%
VISIBLE_EDGE_WINDOW = 5
VISIBLE_EDGE_CONTRAST = 0.05


@dataclass(frozen=True)
class QualityReport:
    """The four indices plus per-stage wall-clock times in milliseconds.

    ``visible_edge_ratio`` is None when the before image has no visible
    edges (degenerate denominator, serialized as ``null``).
    """

    entropy_bits: float
    visible_edge_ratio: float | None
    average_gradient: float
    saturated_pixel_pct: float
    stage_times_ms: dict[str, float] = field(default_factory=dict)
    notes: tuple[str, ...] = ()


def _quantized_gray(img: np.ndarray) -> np.ndarray:
    gray = to_grayscale(img)
    return np.clip(np.rint(gray * 255.0), 0, 255).astype(np.int64)


def entropy(img: np.ndarray) -> float:
    """Shannon entropy (base 2) of the 256-bin 8-bit grayscale histogram."""
    levels = _quantized_gray(img)
    counts = np.bincount(levels.ravel(), minlength=256)
    p = counts[counts > 0] / levels.size
    return float(-(p * np.log2(p)).sum())


def _visible_edge_count(img: np.ndarray) -> int:
    gray = to_grayscale(img)
    local_max = ndimage.maximum_filter(
        gray, size=VISIBLE_EDGE_WINDOW, mode="constant", cval=-np.inf
    )
    local_min = ndimage.minimum_filter(
        gray, size=VISIBLE_EDGE_WINDOW, mode="constant", cval=np.inf
    )
    denom = local_max + local_min
    contrast = np.divide(
        local_max - local_min,
        denom,
        out=np.zeros_like(gray),
        where=denom > 0,
    )
    return int((contrast >= VISIBLE_EDGE_CONTRAST).sum())


def visible_edge_ratio(before: np.ndarray, after: np.ndarray) -> float | None:
    """Relative growth of the visible-edge pixel count, (n_a - n_b) / n_b.

    Returns None when the before image has no visible edges.
    """
    before = require_color_image(before, "before")
    after = require_color_image(after, "after")
    if before.shape != after.shape:
        raise ValueError(f"shape mismatch: before {before.shape}, after {after.shape}")
    n_before = _visible_edge_count(before)
    if n_before == 0:
        return None
    n_after = _visible_edge_count(after)
    return (n_after - n_before) / n_before


def average_gradient(img: np.ndarray) -> float:
    """Mean forward-difference gradient magnitude on the 0-255 scale.

    Over the (H-1) x (W-1) interior of grayscale:
    ``mean(sqrt((dx^2 + dy^2) / 2)) * 255``.
    """
    img = require_color_image(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image must be at least 2x2, got {img.shape[:2]}")
    gray = to_grayscale(img)
    dx = gray[:-1, 1:] - gray[:-1, :-1]
    dy = gray[1:, :-1] - gray[:-1, :-1]
    return float(np.sqrt((dx * dx + dy * dy) / 2.0).mean() * 255.0)


def saturated_pixel_pct(restored: np.ndarray) -> float:
    """Percentage of pure-black or pure-white pixels after 8-bit quantization."""
    restored = require_color_image(restored, "restored")
    q = np.clip(np.rint(restored * 255.0), 0, 255)
    black = (q == 0).all(axis=2)
    white = (q == 255).all(axis=2)
    return float(100.0 * (black | white).sum() / black.size)


def evaluate(
    before: np.ndarray,
    after: np.ndarray,
    stage_times_ms: dict[str, float] | None = None,
) -> QualityReport:
    """Score ``after`` against ``before`` and bundle the stage timings."""
    before = require_color_image(before, "before")
    after = require_color_image(after, "after")
    if before.shape != after.shape:
        raise ValueError(f"shape mismatch: before {before.shape}, after {after.shape}")
    return QualityReport(
        entropy_bits=entropy(after),
        visible_edge_ratio=visible_edge_ratio(before, after),
        average_gradient=average_gradient(after),
        saturated_pixel_pct=saturated_pixel_pct(after),
        stage_times_ms=dict(stage_times_ms or {}),
    )


def report_to_text(report: QualityReport) -> str:
    """Serialize a report as a flat key-value document."""
    ratio = "null" if report.visible_edge_ratio is None else repr(report.visible_edge_ratio)
    lines = [
        f"entropy_bits = {report.entropy_bits!r}",
        f"visible_edge_ratio = {ratio}",
        f"average_gradient = {report.average_gradient!r}",
        f"saturated_pixel_pct = {report.saturated_pixel_pct!r}",
    ]
    for stage, ms in report.stage_times_ms.items():
        lines.append(f"stage_times_ms.{stage} = {ms!r}")
    if report.notes:
        lines.append(f"notes = {','.join(report.notes)}")
    return "\n".join(lines) + "\n"

"""Improved dark-channel-prior restorer for non-sky regions.

Pipeline: estimate airlight from the brightest 0.5% of pixels, estimate a
window-averaged dark channel transmission, refine it with a guided filter,
invert the scattering model with a floored transmission, then apply a
nonlinear brightness stretch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image_core import require_color_image, require_scalar_map, to_grayscale

AIRLIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class DcpParams:
    """Knobs of the dark-channel restorer.

    window_radius : dark-channel window is the (2r+1)^2 square
    omega : haze-retention coefficient in (0, 1); a trace of haze is kept
        so distant objects still read as distant
    t_floor : lower clamp on transmission during recovery
    airlight_fraction : brightest fraction of pixels averaged into A
    guided_radius, guided_epsilon : guided-filter refinement parameters
    """

    window_radius: int = 7
    omega: float = 0.95
    t_floor: float = 0.1
    airlight_fraction: float = 0.005
    guided_radius: int = 30
    guided_epsilon: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError(f"omega must be in (0, 1), got {self.omega}")
        if not 0.0 < self.t_floor <= 1.0:
            raise ValueError(f"t_floor must be in (0, 1], got {self.t_floor}")
        if not 0.0 < self.airlight_fraction <= 1.0:
            raise ValueError(
                f"airlight_fraction must be in (0, 1], got {self.airlight_fraction}"
            )
        if self.window_radius < 0:
            raise ValueError(f"window_radius must be >= 0, got {self.window_radius}")
        if self.guided_epsilon <= 0:
            raise ValueError(f"guided_epsilon must be > 0, got {self.guided_epsilon}")


def _box_sum(arr: np.ndarray, radius: int) -> np.ndarray:
    """Windowed sum over the (2r+1)^2 square, windows clipped at borders."""
    h, w = arr.shape
    integral = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=integral[1:, 1:])
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return (
        integral[np.ix_(r1, c1)]
        - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)]
        + integral[np.ix_(r0, c0)]
    )


def _box_count(shape: tuple[int, int], radius: int) -> np.ndarray:
    """Number of in-frame pixels in each clipped window."""
    h, w = shape
    rows = np.clip(np.arange(h) + radius + 1, 0, h) - np.clip(np.arange(h) - radius, 0, h)
    cols = np.clip(np.arange(w) + radius + 1, 0, w) - np.clip(np.arange(w) - radius, 0, w)
    return rows[:, None] * cols[None, :].astype(np.float64)


def box_mean(arr: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the clipped square window (border windows renormalize)."""
    arr = require_scalar_map(arr)
    if radius <= 0:
        return arr.copy()
    return _box_sum(arr, radius) / _box_count(arr.shape, radius)


def dark_channel_min(img: np.ndarray, window_radius: int) -> np.ndarray:
    """Classic dark channel: windowed min of the per-pixel channel minimum."""
    img = require_color_image(img)
    min_channel = img.min(axis=2)
    if window_radius <= 0:
        return min_channel
    return ndimage.minimum_filter(
        min_channel, size=2 * window_radius + 1, mode="constant", cval=np.inf
    )


def dark_channel_avg(img: np.ndarray, window_radius: int) -> np.ndarray:
    """Averaged dark channel: windowed mean of the per-pixel channel minimum.

    Replacing the window min with a window mean raises the dark channel,
    which lowers the transmission estimate less aggressively and tames
    over-saturation in bright regions.
    """
    img = require_color_image(img)
    return box_mean(img.min(axis=2), window_radius)


def estimate_airlight(img: np.ndarray, airlight_fraction: float = 0.005) -> np.ndarray:
    """Average the brightest ``airlight_fraction`` of pixels per channel.

    Pixels are ranked by grayscale luminance; the brightest
    ``ceil(fraction * N)`` are averaged channelwise. Averaging a whole set
    instead of taking the single brightest pixel keeps bright non-sky
    objects from hijacking the estimate. Components are floored at 1e-3 so
    later normalization stays finite.
    """
    img = require_color_image(img)
    if not 0.0 < airlight_fraction <= 1.0:
        raise ValueError(f"airlight_fraction must be in (0, 1], got {airlight_fraction}")
    luminance = to_grayscale(img).ravel()
    n = luminance.size
    k = int(np.ceil(airlight_fraction * n))
    order = np.argsort(luminance, kind="stable")
    top = order[n - k :]
    airlight = img.reshape(n, 3)[top].mean(axis=0)
    return np.maximum(airlight, AIRLIGHT_FLOOR)


def estimate_transmission(
    img: np.ndarray,
    airlight: np.ndarray,
    params: DcpParams,
    variant: str = "avg",
) -> np.ndarray:
    """Transmission ``1 - omega * D(I / A)`` with D the dark-channel operator.

    ``variant`` selects the windowed min (classic) or windowed mean
    (improved) dark channel. The normalized samples are clamped to [0, 1]
    first so pixels brighter than A cannot push the result out of range;
    the output therefore lies in [1 - omega, 1].
    """
    img = require_color_image(img)
    airlight = np.asarray(airlight, dtype=np.float64).reshape(3)
    if np.any(airlight <= 0):
        raise ValueError(f"airlight components must be > 0, got {airlight}")
    if variant not in ("min", "avg"):
        raise ValueError(f"unknown variant {variant!r}, expected 'min' or 'avg'")
    normalized = np.clip(img / airlight, 0.0, 1.0)
    dark_op = dark_channel_min if variant == "min" else dark_channel_avg
    dark = dark_op(normalized, params.window_radius)
    return 1.0 - params.omega * dark


def guided_filter(
    input_map: np.ndarray, guide: np.ndarray, radius: int, epsilon: float
) -> np.ndarray:
    """Edge-preserving smoothing of ``input_map`` steered by ``guide``.

    The output is a local affine function of the guide:
    ``q = mean(a) * guide + mean(b)`` with per-window
    ``a = cov(guide, input) / (var(guide) + epsilon)`` and
    ``b = mean(input) - a * mean(guide)``. Box means use clipped windows
    with border renormalization.
    """
    input_map = require_scalar_map(input_map, "input")
    guide = require_scalar_map(guide, "guide")
    if input_map.shape != guide.shape:
        raise ValueError(
            f"input shape {input_map.shape} does not match guide {guide.shape}"
        )
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    mean_guide = box_mean(guide, radius)
    mean_input = box_mean(input_map, radius)
    mean_cross = box_mean(guide * input_map, radius)
    mean_guide_sq = box_mean(guide * guide, radius)
    cov = mean_cross - mean_guide * mean_input
    var = mean_guide_sq - mean_guide * mean_guide
    a = cov / (var + epsilon)
    b = mean_input - a * mean_guide
    return box_mean(a, radius) * guide + box_mean(b, radius)


def recover_scene(
    img: np.ndarray, airlight: np.ndarray, t: np.ndarray, t_floor: float = 0.1
) -> np.ndarray:
    """Invert the scattering model: ``J = (I - A) / max(t, t0) + A``, clamped.

    The floor keeps nearly opaque pixels from exploding to huge radiance.
    """
    img = require_color_image(img)
    t = require_scalar_map(t, "t")
    if t.shape != img.shape[:2]:
        raise ValueError(f"t shape {t.shape} does not match image {img.shape[:2]}")
    airlight = np.asarray(airlight, dtype=np.float64).reshape(3)
    denom = np.maximum(t, t_floor)[:, :, None]
    return np.clip((img - airlight) / denom + airlight, 0.0, 1.0)


def adjust_brightness(img: np.ndarray) -> np.ndarray:
    """Nonlinear contrast stretch ``J' = J * (2 - mean(J))``, clamped.

    ``mean(J)`` is the global mean grayscale luminance in [0, 1]; the
    factor is >= 1 for images darker than full white, compensating the
    dimming that transmission division leaves behind.
    """
    img = require_color_image(img)
    factor = 2.0 - to_grayscale(img).mean()
    return np.clip(img * factor, 0.0, 1.0)


def dehaze_dcp(
    img: np.ndarray, params: DcpParams | None = None, brightness: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full non-sky restoration pass.

    Returns ``(restored, refined_transmission, airlight)``. The refined
    transmission is the guided-filter output clamped back to [0, 1] with
    the grayscale hazy image as guide. Set ``brightness=False`` to skip
    the final stretch (used when the caller stretches after fusion).
    """
    img = require_color_image(img)
    if params is None:
        params = DcpParams()
    airlight = estimate_airlight(img, params.airlight_fraction)
    t_raw = estimate_transmission(img, airlight, params, variant="avg")
    guide = to_grayscale(img)
    t_refined = np.clip(
        guided_filter(t_raw, guide, params.guided_radius, params.guided_epsilon),
        0.0,
        1.0,
    )
    restored = recover_scene(img, airlight, t_refined, params.t_floor)
    if brightness:
        restored = adjust_brightness(restored)
    return restored, t_refined, airlight

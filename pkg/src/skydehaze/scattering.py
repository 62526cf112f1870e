"""Forward atmospheric scattering model for haze synthesis.

A hazy observation is a per-pixel convex blend of the clear scene and the
ambient airlight: ``I = J * t + A * (1 - t)`` with transmission ``t`` in
[0, 1]. Used to build test fixtures and training pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image_core import require_color_image, require_scalar_map

TRANSMISSION_MODES = ("constant", "smooth-gradient")

# synthetic transmission range: below 0.3 images are information-free,
# above 0.9 they are near-clear
T_RANGE = (0.3, 0.9)


@dataclass(frozen=True)
class HazeParams:
    """Airlight color (3 reals in [0, 1]) plus a transmission map in [0, 1]."""

    airlight: np.ndarray
    transmission: np.ndarray

    def __post_init__(self):
        airlight = np.asarray(self.airlight, dtype=np.float64).reshape(3)
        if np.any(airlight < 0) or np.any(airlight > 1):
            raise ValueError(f"airlight components must be in [0, 1], got {airlight}")
        t = require_scalar_map(self.transmission, "transmission")
        if t.size and (t.min() < 0 or t.max() > 1):
            raise ValueError("transmission samples must be in [0, 1]")
        object.__setattr__(self, "airlight", airlight)
        object.__setattr__(self, "transmission", t)


def synthesize_haze(clear: np.ndarray, params: HazeParams) -> np.ndarray:
    """Apply the scattering model: ``I = J * t + A * (1 - t)`` per channel."""
    clear = require_color_image(clear, "clear")
    t = params.transmission
    if t.shape != clear.shape[:2]:
        raise ValueError(
            f"transmission shape {t.shape} does not match image {clear.shape[:2]}"
        )
    t3 = t[:, :, None]
    hazy = clear * t3 + params.airlight * (1.0 - t3)
    return np.clip(hazy, 0.0, 1.0)


def random_transmission_field(
    width: int, height: int, mode: str = "constant", seed: int = 0
) -> np.ndarray:
    """Draw a seeded transmission map with samples in [0.3, 0.9].

    ``constant`` fills the map with one uniform draw; ``smooth-gradient``
    draws a random linear ramp (random direction and endpoints) clipped to
    the same range. Identical seeds give identical maps.
    """
    if width < 1 or height < 1:
        raise ValueError(f"field dimensions must be positive, got {width}x{height}")
    if mode not in TRANSMISSION_MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {TRANSMISSION_MODES}")
    rng = np.random.default_rng(seed)
    lo, hi = T_RANGE
    if mode == "constant":
        value = rng.uniform(lo, hi)
        return np.full((height, width), value)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    a, b = np.sort(rng.uniform(lo, hi, size=2))
    ys, xs = np.mgrid[0:height, 0:width]
    # normalized coordinate along the ramp direction
    proj = xs * np.cos(theta) + ys * np.sin(theta)
    span = proj.max() - proj.min()
    if span == 0:
        return np.full((height, width), a)
    ramp = (proj - proj.min()) / span
    return np.clip(a + (b - a) * ramp, lo, hi)

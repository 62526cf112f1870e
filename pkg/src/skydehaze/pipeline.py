"""End-to-end orchestration: segment, restore, fuse, score.

The dark-channel restorer and the network both run on the full frame
(each uses spatial context a cropped region would truncate); the sky mask
only decides the per-pixel blend at fusion time, feathered across the
boundary to avoid a visible seam.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .dark_channel import DcpParams, adjust_brightness, dehaze_dcp
from .dehazenet import NetworkSpec, NumericError, infer_sky, load_checkpoint
from .image_core import require_color_image
from .quality_metrics import QualityReport, evaluate
from .sky_segmentation import MeanShiftParams, extract_sky_mask

PIPELINE_STAGES = ("segmentation", "dcp", "network", "fusion", "metrics")

SCALE_FACTORS = (1, 2, 3, 4, 5)
ROTATION_COUNT = 4


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the end-to-end run needs.

    ``brightness_after_fusion`` moves the nonlinear brightness stretch
    from the non-sky branch to the fused image for comparison runs.
    ``net_dtype`` selects the network inference precision (float32 is a
    few times faster on large frames).
    """

    dcp: DcpParams = field(default_factory=DcpParams)
    meanshift: MeanShiftParams = field(default_factory=MeanShiftParams)
    feather_width: int = 15
    model_path: str | None = None
    tile: int = 256
    overlap: int = 16
    seed: int = 0
    brightness_after_fusion: bool = False
    net_dtype: str = "float32"

    def __post_init__(self):
        if self.feather_width < 0:
            raise ValueError(f"feather_width must be >= 0, got {self.feather_width}")
        if self.net_dtype not in ("float32", "float64"):
            raise ValueError(f"net_dtype must be float32 or float64, got {self.net_dtype}")


def fuse_regions(
    nonsky: np.ndarray, sky: np.ndarray, mask: np.ndarray, feather_width: int = 15
) -> np.ndarray:
    """Blend the two restorations with a distance-feathered alpha.

    Alpha ramps linearly with the signed distance to the sky boundary,
    reaching 1 half a feather width inside the sky and 0 half a width
    outside. ``feather_width=0`` is a hard per-pixel switch on the mask.
    """
    nonsky = require_color_image(nonsky, "nonsky")
    sky = require_color_image(sky, "sky")
    mask = np.asarray(mask, dtype=bool)
    if sky.shape != nonsky.shape or mask.shape != nonsky.shape[:2]:
        raise ValueError(
            f"shape mismatch: nonsky {nonsky.shape}, sky {sky.shape}, mask {mask.shape}"
        )
    if not mask.any():
        return nonsky.copy()
    if mask.all():
        return sky.copy()
    if feather_width == 0:
        alpha = mask.astype(np.float64)
    else:
        signed = ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(~mask)
        alpha = np.clip(0.5 + signed / feather_width, 0.0, 1.0)
    alpha = alpha[:, :, None]
    return alpha * sky + (1.0 - alpha) * nonsky


def dehaze(
    img: np.ndarray,
    config: PipelineConfig | None = None,
    model: NetworkSpec | None = None,
) -> tuple[np.ndarray, QualityReport, np.ndarray]:
    """Run the full pipeline on one image.

    Returns ``(restored, report, sky_mask)``. When the sky mask comes back
    empty or no model is available, the output is the dark-channel result
    alone and the report notes why the sky branch was skipped. A model
    path in the config is loaded (and validated) before any processing.
    """
    img = require_color_image(img)
    if config is None:
        config = PipelineConfig()
    if model is None and config.model_path is not None:
        model = load_checkpoint(config.model_path)
    wall_start = time.perf_counter()
    times: dict[str, float] = {}
    notes: list[str] = []

    t0 = time.perf_counter()
    mask = extract_sky_mask(img, config.meanshift)
    times["segmentation"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    nonsky, _, _ = dehaze_dcp(img, config.dcp, brightness=not config.brightness_after_fusion)
    times["dcp"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    sky_img = None
    if not mask.any():
        notes.append("sky_skipped_empty_mask")
    elif model is None:
        notes.append("sky_skipped_no_model")
    else:
        dtype = np.float32 if config.net_dtype == "float32" else np.float64
        sky_img = infer_sky(model, img, mask, config.tile, config.overlap, dtype)
    times["network"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    if sky_img is None:
        out = nonsky
    else:
        out = fuse_regions(nonsky, sky_img, mask, config.feather_width)
    if config.brightness_after_fusion:
        out = adjust_brightness(out)
    times["fusion"] = (time.perf_counter() - t0) * 1e3

    if not np.isfinite(out).all():
        raise NumericError("pipeline output contains non-finite samples")

    t0 = time.perf_counter()
    report = evaluate(img, out)
    times["metrics"] = (time.perf_counter() - t0) * 1e3
    times["total"] = (time.perf_counter() - wall_start) * 1e3

    report = replace(report, stage_times_ms=times, notes=tuple(notes))
    return out, report, mask


def augment_dataset(images: list[np.ndarray]) -> list[np.ndarray]:
    """Expand each image into 20 variants: 4 rotations (0/90/180/270
    degrees) times 5 nearest-neighbor scale factors (1x..5x)."""
    if not images:
        raise ValueError("augment_dataset needs at least one image")
    out = []
    for img in images:
        img = require_color_image(img)
        for k in range(ROTATION_COUNT):
            rotated = np.rot90(img, k)
            for s in SCALE_FACTORS:
                if s == 1:
                    out.append(np.ascontiguousarray(rotated))
                else:
                    out.append(rotated.repeat(s, axis=0).repeat(s, axis=1))
    return out


# ---------------------------------------------------------------------------
# flat key-value configuration
# ---------------------------------------------------------------------------

def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


_CONFIG_KEYS: dict[str, type | object] = {
    "dcp.window_radius": int,
    "dcp.omega": float,
    "dcp.t_floor": float,
    "dcp.airlight_fraction": float,
    "dcp.guided_radius": int,
    "dcp.guided_epsilon": float,
    "meanshift.h_s": float,
    "meanshift.h_r": float,
    "meanshift.min_region": int,
    "meanshift.max_iters": int,
    "meanshift.convergence_eps": float,
    "meanshift.edge_confidence_threshold": float,
    "meanshift.speedup": _parse_bool,
    "meanshift.sky_luminance_factor": float,
    "feather_width": int,
    "model": str,
    "tile": int,
    "overlap": int,
    "seed": int,
    "brightness_after_fusion": _parse_bool,
    "net_dtype": str,
}


def parse_config_text(text: str) -> PipelineConfig:
    """Parse ``key = value`` lines (dotted keys, ``#`` comments) into a
    PipelineConfig. Unknown keys are an error naming the key."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)  # type: ignore[operator]
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return config_from_values(values)


def config_from_values(values: dict[str, object]) -> PipelineConfig:
    """Build a PipelineConfig from flat dotted-key overrides."""
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def section(prefix: str) -> dict[str, object]:
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in values.items() if k.startswith(prefix + ".")}

    top = {k: v for k, v in values.items() if "." not in k}
    model_path = top.pop("model", None)
    try:
        return PipelineConfig(
            dcp=DcpParams(**section("dcp")),
            meanshift=MeanShiftParams(**section("meanshift")),
            model_path=model_path,  # type: ignore[arg-type]
            **top,  # type: ignore[arg-type]
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

"""Pixel containers, grayscale conversion, binary morphology, and codecs.

Images are held as normalized float64 arrays so the restoration math runs
without quantization; 8-bit values are mapped with ``v / 255`` on decode
and ``round(v * 255)`` on encode.
"""

from __future__ import annotations

import io
import re

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

MORPHOLOGY_OPS = ("dilate", "erode", "open", "close")


class DecodeError(ValueError):
    """Raised when image bytes cannot be decoded; names the bad offset."""


def require_color_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate and return an (H, W, 3) float array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got {img.shape}")
    return img


def require_scalar_map(arr: np.ndarray, name: str = "map") -> np.ndarray:
    """Validate and return an (H, W) float array."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {arr.shape}")
    return arr


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Per-pixel luminance 0.299 r + 0.587 g + 0.114 b (BT.601 weights)."""
    img = require_color_image(img)
    return img @ GRAY_WEIGHTS


def morphology(mask: np.ndarray, op: str, radius: int) -> np.ndarray:
    """Binary morphology with a square structuring element.

    Parameters
    ----------
    mask : (H, W) bool array
    op : one of ``dilate``, ``erode``, ``open``, ``close``
    radius : structuring element is the (2 * radius + 1) square; must be >= 1

    Out-of-frame pixels are neutral for each primitive (background for
    dilation, foreground for erosion), so a saturated mask is a fixed
    point of every op and the frame border is never eaten.
    """
    if radius < 1:
        raise ValueError(f"morphology radius must be >= 1, got {radius}")
    if op not in MORPHOLOGY_OPS:
        raise ValueError(f"unknown morphology op {op!r}, expected one of {MORPHOLOGY_OPS}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must have shape (H, W), got {mask.shape}")
    size = 2 * radius + 1

    def dilate(m):
        return ndimage.maximum_filter(m, size=size, mode="constant", cval=False)

    def erode(m):
        return ndimage.minimum_filter(m, size=size, mode="constant", cval=True)

    if op == "dilate":
        return dilate(mask)
    if op == "erode":
        return erode(mask)
    if op == "open":
        return dilate(erode(mask))
    return erode(dilate(mask))


def _decode_ppm(data: bytes) -> np.ndarray:
    """Parse a binary PPM (P6) file with 8-bit samples."""
    pos = 2  # past the "P6" magic

    def fail(msg: str, at: int) -> DecodeError:
        return DecodeError(f"PPM decode error at byte {at}: {msg}")

    def next_token() -> tuple[bytes, int]:
        nonlocal pos
        # skip whitespace and '#' comments
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                nl = data.find(b"\n", pos)
                if nl < 0:
                    raise fail("unterminated comment", pos)
                pos = nl + 1
            elif c.isspace():
                pos += 1
            else:
                break
        if pos >= len(data):
            raise fail("truncated header", pos)
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos], start

    fields = []
    for name in ("width", "height", "maxval"):
        tok, at = next_token()
        if not re.fullmatch(rb"\d+", tok):
            raise fail(f"invalid {name} {tok!r}", at)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise fail(f"invalid dimensions {width}x{height}", 2)
    if not 0 < maxval < 256:
        raise fail(f"unsupported maxval {maxval} (only 8-bit samples)", 2)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise fail("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise fail(f"truncated pixel data, need {need} bytes, have {len(data) - pos}", pos)
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width, 3).astype(np.float64) / maxval


def _decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P", "1"):
                raise DecodeError(
                    f"PNG decode error at byte 0: unsupported mode {im.mode!r} (8-bit only)"
                )
            if im.mode == "RGBA":
                arr = np.asarray(im)[:, :, :3]  # alpha dropped
            else:
                arr = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"PNG decode error at byte 0: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG or binary PPM (P6) bytes into an (H, W, 3) image in [0, 1]."""
    if data.startswith(_PNG_MAGIC):
        return _decode_png(data)
    if data.startswith(b"P6"):
        return _decode_ppm(data)
    raise DecodeError("decode error at byte 0: not a PNG or binary PPM (P6) file")


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def encode_image(img: np.ndarray) -> bytes:
    """Encode an (H, W, 3) image in [0, 1] as 8-bit RGB PNG bytes."""
    img = require_color_image(img)
    buf = io.BytesIO()
    Image.fromarray(_quantize(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def encode_gray(arr: np.ndarray) -> bytes:
    """Encode an (H, W) map in [0, 1] as 8-bit grayscale PNG bytes."""
    arr = require_scalar_map(arr)
    buf = io.BytesIO()
    Image.fromarray(_quantize(arr), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_mask(mask: np.ndarray) -> bytes:
    """Encode a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    mask = np.asarray(mask, dtype=bool)
    return encode_gray(mask.astype(np.float64))


def decode_mask(data: bytes) -> np.ndarray:
    """Decode a mask PNG back to a bool array (any nonzero = set)."""
    img = decode_image(data)
    return to_grayscale(img) >= 0.5

"""PNG codec and small raster helpers shared by the service clients and mocks."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def encode_png(pixels: np.ndarray) -> bytes:
    """Canonical PNG: fixed compression level, no metadata chunks."""
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="RGB").save(
        buf, format="PNG", compress_level=6
    )
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def png_b64(pixels: np.ndarray) -> str:
    return base64.b64encode(encode_png(pixels)).decode("ascii")


def from_png_b64(text: str) -> np.ndarray:
    return decode_png(base64.b64decode(text, validate=True))


def nearest_upscale(pixels: np.ndarray, scale: int) -> np.ndarray:
    return np.repeat(np.repeat(pixels, scale, axis=0), scale, axis=1)


def fit_within(width: int, height: int, max_edge: int) -> tuple[int, int]:
    """Aspect-preserving size whose longer edge is at most ``max_edge``."""
    longest = max(width, height)
    if longest <= max_edge:
        return width, height
    ratio = max_edge / longest
    return max(1, round(width * ratio)), max(1, round(height * ratio))


def downscale_to_edge(pixels: np.ndarray, max_edge: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    nw, nh = fit_within(w, h, max_edge)
    if (nw, nh) == (w, h):
        return pixels
    im = Image.fromarray(np.ascontiguousarray(pixels), mode="RGB").resize((nw, nh), Image.Resampling.LANCZOS)
    return np.asarray(im, dtype=np.uint8)

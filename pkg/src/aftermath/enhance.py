"""Enhancement stage: remote super-resolution service, built-in bicubic upscaler, or identity.

Pre- and post-disaster sequences are always enhanced in separate calls so that
post-event damage can never leak into the pre-event imagery.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from aftermath.imaging import from_png_b64, png_b64
from aftermath.ingest import Frame, FrameSequence, Phase, frame_filename, load_image, save_png

log = logging.getLogger(__name__)

BACKENDS = ("service", "bicubic", "identity")


class EnhanceError(Exception):
    pass


class ServiceUnavailable(EnhanceError):
    pass


class ServiceBadResponse(EnhanceError):
    pass


class Timeout(EnhanceError):
    pass


@dataclass(frozen=True)
class EnhancementConfig:
    backend: str = "bicubic"
    scale: int = 4
    service_url: str | None = None
    timeout_s: float = 120.0
    window: int = 5
    max_in_flight: int = 2
    retries: int = 2
    backoff_s: float = 0.5
    cache_dir: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown enhancement backend {self.backend!r}; choose from {BACKENDS}")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.window < 1 or self.max_in_flight < 1:
            raise ValueError("window and max_in_flight must be >= 1")
        if (self.backend == "service") != bool(self.service_url):
            raise ValueError("service_url is required for, and only for, the service backend")

    @property
    def effective_scale(self) -> int:
        return 1 if self.backend == "identity" else self.scale


@dataclass(frozen=True)
class Provenance:
    backend: str
    scale: int
    source_index: int
    phase: Phase
    scene_id: str


@dataclass(frozen=True, eq=False)
class EnhancedFrame(Frame):
    provenance: Provenance


# --- bicubic ------------------------------------------------------------------


def catmull_rom_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Kernel weights for taps at offsets -1, 0, 1, 2 from floor(x), given frac t."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    d = np.abs(np.array([-1.0, 0.0, 1.0, 2.0]) - t)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((d - 5) * d + 8) * d * a - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _resize_axis(data: np.ndarray, scale: int, axis: int) -> np.ndarray:
    n = data.shape[axis]
    x = np.arange(n * scale) / scale
    base = np.floor(x).astype(np.int64)
    w = catmull_rom_weights(x - base).astype(np.float32)
    out = None
    for k, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base + off, 0, n - 1)
        shape = [1] * data.ndim
        shape[axis] = -1
        term = np.take(data, idx, axis=axis) * w[:, k].reshape(shape)
        out = term if out is None else out + term
    return out


def bicubic_array(pixels: np.ndarray, scale: int) -> np.ndarray:
    """Catmull-Rom upscale sampling source coordinate ``dst / scale`` with edge clamping."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    if scale == 1:
        return pixels.copy()
    data = pixels.astype(np.float32)
    data = _resize_axis(data, scale, axis=0)
    data = _resize_axis(data, scale, axis=1)
    return np.clip(np.floor(data + 0.5), 0, 255).astype(np.uint8)


def bicubic_upscale(frame: Frame, scale: int) -> Frame:
    return Frame(frame.index, frame.source_index, frame.timestamp_s, bicubic_array(frame.pixels, scale))


# --- service client ---------------------------------------------------------------


def with_retries(fn, retries: int, backoff_s: float, retry_on: tuple[type[BaseException], ...]):
    """Call ``fn``; on ``retry_on`` errors retry up to ``retries`` times, doubling the delay."""
    for attempt in range(retries + 1):
        try:
            return fn()
        except retry_on as exc:
            if attempt == retries:
                raise
            delay = backoff_s * (2**attempt)
            log.warning("attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delay)
            time.sleep(delay)


def _post_window(frames: Sequence[Frame], cfg: EnhancementConfig) -> list[np.ndarray]:
    body = {
        "scale": cfg.scale,
        "frames": [{"index": f.index, "png_base64": png_b64(f.pixels)} for f in frames],
    }
    url = cfg.service_url.rstrip("/") + "/enhance"
    try:
        resp = requests.post(url, json=body, timeout=cfg.timeout_s)
    except requests.Timeout as exc:
        raise Timeout(f"SR service timed out after {cfg.timeout_s}s") from exc
    except requests.RequestException as exc:
        raise ServiceUnavailable(f"SR service unreachable at {url}: {exc}") from exc
    if resp.status_code >= 500:
        raise ServiceUnavailable(f"SR service returned HTTP {resp.status_code}")
    if resp.status_code != 200:
        raise ServiceBadResponse(f"SR service returned HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        returned = resp.json()["frames"]
        by_index = {int(item["index"]): from_png_b64(item["png_base64"]) for item in returned}
    except (ValueError, KeyError, TypeError) as exc:
        raise ServiceBadResponse(f"malformed SR response: {exc}") from exc
    out = []
    for f in frames:
        if f.index not in by_index:
            raise ServiceBadResponse(f"SR response is missing frame {f.index}")
        px = by_index[f.index]
        expected = (f.height * cfg.scale, f.width * cfg.scale)
        if px.shape[:2] != expected:
            raise ServiceBadResponse(
                f"frame {f.index}: got {px.shape[1]}x{px.shape[0]}, expected {expected[1]}x{expected[0]}"
            )
        out.append(px)
    return out


def service_enhance(frames: Sequence[Frame], cfg: EnhancementConfig) -> list[np.ndarray]:
    """Send one window of frames to the SR service; returns upscaled rasters in order."""
    if not 1 <= len(frames) <= cfg.window:
        raise ValueError(f"window must hold 1..{cfg.window} frames, got {len(frames)}")
    return with_retries(
        lambda: _post_window(frames, cfg), cfg.retries, cfg.backoff_s, (ServiceUnavailable, Timeout)
    )


# --- cache -------------------------------------------------------------------------


class FrameCache:
    """PNG cache laid out as ``<root>/<scene>/<phase>/<backend>-x<scale>/frame_<index>.png``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._locks: dict[Path, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, scene_id: str, phase: Phase, backend: str, scale: int, index: int) -> Path:
        return self.root / scene_id / Phase(phase).value / f"{backend}-x{scale}" / frame_filename(index)

    def _lock(self, path: Path) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(path, threading.Lock())

    def get(self, path: Path) -> np.ndarray | None:
        return load_image(path) if path.exists() else None

    def put(self, path: Path, pixels: np.ndarray) -> None:
        with self._lock(path):
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            save_png(pixels, tmp)
            os.replace(tmp, path)


# --- sequence-level ------------------------------------------------------------------


def enhance_sequence(seq: FrameSequence, cfg: EnhancementConfig) -> list[EnhancedFrame]:
    """Enhance every frame of one single-phase sequence, preserving order."""
    if len(seq) == 0:
        raise ValueError("cannot enhance an empty sequence")
    scale = cfg.effective_scale
    cache = FrameCache(cfg.cache_dir) if cfg.cache_dir and cfg.backend != "identity" else None

    results: dict[int, np.ndarray] = {}
    todo = []
    for f in seq.frames:
        if cache is not None:
            hit = cache.get(cache.path(seq.scene_id, seq.phase, cfg.backend, scale, f.index))
            if hit is not None and hit.shape[:2] == (f.height * scale, f.width * scale):
                results[f.index] = hit
                continue
        todo.append(f)

    if cfg.backend == "identity":
        for f in todo:
            results[f.index] = f.pixels
    elif cfg.backend == "bicubic":
        for f in todo:
            results[f.index] = bicubic_array(f.pixels, scale)
    elif todo:
        windows = [todo[i : i + cfg.window] for i in range(0, len(todo), cfg.window)]
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            for window, rasters in zip(windows, pool.map(lambda w: service_enhance(w, cfg), windows)):
                for f, px in zip(window, rasters):
                    results[f.index] = px

    fresh = {f.index for f in todo}
    out = []
    for f in seq.frames:
        px = results[f.index]
        if cache is not None and f.index in fresh:
            cache.put(cache.path(seq.scene_id, seq.phase, cfg.backend, scale, f.index), px)
        prov = Provenance(cfg.backend, scale, f.source_index, seq.phase, seq.scene_id)
        out.append(EnhancedFrame(f.index, f.source_index, f.timestamp_s, px, prov))
    return out


def enhance_pair(pre: FrameSequence, post: FrameSequence, cfg: EnhancementConfig) -> tuple[list[EnhancedFrame], list[EnhancedFrame]]:
    if pre.phase is not Phase.PRE or post.phase is not Phase.POST:
        raise ValueError("enhance_pair expects (pre, post) sequences")
    return enhance_sequence(pre, cfg), enhance_sequence(post, cfg)

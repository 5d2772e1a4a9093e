"""Frame sequences from video, static images (pseudo-frames) and xBD-labelled scenes."""

from __future__ import annotations

import enum
import json
import logging
import math
import re
import shutil
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from shapely import wkt as shapely_wkt
from shapely.errors import ShapelyError

from aftermath.taxonomy import XbdLabel

log = logging.getLogger(__name__)

DEFAULT_STRIDE = 10
DEFAULT_PSEUDO_COUNT = 5
DEFAULT_PAD = 0.25


class IngestError(Exception):
    pass


class DecodeFailure(IngestError):
    pass


class EmptyStream(IngestError):
    pass


class ImageDecodeFailure(IngestError):
    pass


class SchemaError(IngestError):
    pass


class GeometryError(IngestError):
    pass


class DegeneratePolygon(GeometryError):
    pass


class Phase(str, enum.Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    source_index: int
    timestamp_s: float
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 raster, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("frame must be at least 1x1")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def pixel_data(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class FrameSequence:
    scene_id: str
    phase: Phase
    source_fps: float
    stride: int
    frames: tuple[Frame, ...]

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase(self.phase))
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.source_fps <= 0:
            raise ValueError("source_fps must be positive")
        for a, b in zip(self.frames, self.frames[1:]):
            if b.source_index - a.source_index != self.stride:
                raise ValueError("frames must be spaced exactly `stride` source frames apart")
        if len({(f.width, f.height) for f in self.frames}) > 1:
            raise ValueError("all frames in a sequence must share one size")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def size(self) -> tuple[int, int]:
        return (self.frames[0].width, self.frames[0].height)

    @property
    def effective_fps(self) -> float:
        return self.source_fps / self.stride


@dataclass(frozen=True)
class BuildingRecord:
    building_id: str
    polygon: tuple[tuple[float, float], ...]
    truth_label: XbdLabel | None = None
    counterpart_missing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "polygon", tuple((float(x), float(y)) for x, y in self.polygon))
        if len(self.polygon) < 3:
            raise GeometryError(f"building {self.building_id}: polygon needs >= 3 vertices")

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)

    def check_within(self, width: int, height: int) -> None:
        for x, y in self.polygon:
            if not (0 <= x <= width and 0 <= y <= height):
                raise GeometryError(
                    f"building {self.building_id}: vertex ({x}, {y}) outside {width}x{height} image"
                )


@dataclass(frozen=True)
class ScenePair:
    scene_id: str
    pre: FrameSequence
    post: FrameSequence
    buildings: tuple[BuildingRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        if self.pre.phase is not Phase.PRE or self.post.phase is not Phase.POST:
            raise ValueError("ScenePair needs a pre-phase and a post-phase sequence")
        if not (self.pre.scene_id == self.post.scene_id == self.scene_id):
            raise ValueError("pre/post sequences must share the scene id")


# --- video ------------------------------------------------------------------


class ArrayVideo:
    """In-memory stream of RGB rasters; mostly for tests and synthetic clips."""

    def __init__(self, frames: Sequence[np.ndarray], fps: float):
        self._frames = list(frames)
        self.fps = float(fps)

    def __len__(self) -> int:
        return len(self._frames)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self._frames)


def find_ffmpeg() -> str:
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        raise DecodeFailure("no ffmpeg executable found on PATH") from None
    return imageio_ffmpeg.get_ffmpeg_exe()


_STREAM_RE = re.compile(r"Stream #\S+.*?Video: .*?(\d{2,5})x(\d{2,5})")
_FPS_RE = re.compile(r"([\d.]+) (?:fps|tbr)")


class FfmpegVideo:
    """Video file decoded by an external ffmpeg process, frames read from a raw RGB pipe."""

    def __init__(self, path: str | Path, fps_override: float | None = None, ffmpeg: str | None = None):
        self.path = Path(path)
        if not self.path.is_file():
            raise DecodeFailure(f"no such video file: {self.path}")
        self.ffmpeg = ffmpeg or find_ffmpeg()
        self.width, self.height, probed_fps = self._probe()
        fps = fps_override or probed_fps
        if not fps:
            raise DecodeFailure(f"{self.path}: frame rate unknown, pass --fps-override")
        self.fps = float(fps)

    def _probe(self) -> tuple[int, int, float | None]:
        proc = subprocess.run(
            [self.ffmpeg, "-hide_banner", "-i", str(self.path)],
            capture_output=True, text=True, errors="replace",
        )
        for line in proc.stderr.splitlines():
            m = _STREAM_RE.search(line)
            if m:
                fps = _FPS_RE.search(line)
                return int(m.group(1)), int(m.group(2)), float(fps.group(1)) if fps else None
        raise DecodeFailure(f"{self.path}: no decodable video stream")

    def __iter__(self) -> Iterator[np.ndarray]:
        cmd = [
            self.ffmpeg, "-hide_banner", "-loglevel", "error", "-i", str(self.path),
            "-map", "0:v:0", "-vsync", "passthrough",
            "-f", "rawvideo", "-pix_fmt", "rgb24", "-",
        ]
        nbytes = self.width * self.height * 3
        proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        try:
            while True:
                buf = proc.stdout.read(nbytes)
                if not buf:
                    break
                if len(buf) != nbytes:
                    raise DecodeFailure(f"{self.path}: truncated frame from decoder")
                yield np.frombuffer(buf, dtype=np.uint8).reshape(self.height, self.width, 3)
        finally:
            proc.stdout.close()
            err = proc.stderr.read().decode(errors="replace")
            proc.stderr.close()
            if proc.wait() != 0:
                raise DecodeFailure(f"{self.path}: decoder failed: {err.strip()[:300]}")


def sample_frames(video, stride: int = DEFAULT_STRIDE, phase: Phase = Phase.PRE, scene_id: str = "scene") -> FrameSequence:
    """Keep source frames 0, stride, 2*stride, ... of ``video``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    fps = float(video.fps)
    frames = []
    for source_index, raster in enumerate(video):
        if source_index % stride:
            continue
        raster = np.ascontiguousarray(raster, dtype=np.uint8)
        frames.append(Frame(len(frames), source_index, source_index / fps, raster))
    if not frames:
        raise EmptyStream("video has no frames")
    return FrameSequence(scene_id, Phase(phase), fps, stride, tuple(frames))


# --- still images -------------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise ImageDecodeFailure(f"cannot decode image {path}: {exc}") from exc


def make_pseudo_frames(image, count: int = DEFAULT_PSEUDO_COUNT, phase: Phase = Phase.PRE, scene_id: str = "scene") -> FrameSequence:
    """Duplicate one still ``count`` times so video-oriented enhancers can run on it."""
    if count < 1:
        raise ValueError("count must be >= 1")
    raster = image if isinstance(image, np.ndarray) else load_image(image)
    raster = np.array(raster, dtype=np.uint8, copy=True)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ImageDecodeFailure(f"expected an RGB raster, got shape {raster.shape}")
    raster.setflags(write=False)
    frames = tuple(Frame(i, i, float(i), raster) for i in range(count))
    return FrameSequence(scene_id, Phase(phase), 1.0, 1, frames)


# --- frame directories ----------------------------------------------------------

_SEQ_META = "sequence.json"


def frame_filename(index: int) -> str:
    return f"frame_{index:06d}.png"


def save_png(pixels: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG", compress_level=6)


def write_frame_dir(seq: FrameSequence, root: str | Path) -> Path:
    """Write ``<root>/<scene_id>/<phase>/frame_<index:06>.png`` plus a small index file."""
    out = Path(root) / seq.scene_id / seq.phase.value
    out.mkdir(parents=True, exist_ok=True)
    for f in seq.frames:
        save_png(f.pixels, out / frame_filename(f.index))
    meta = {
        "scene_id": seq.scene_id,
        "phase": seq.phase.value,
        "source_fps": seq.source_fps,
        "stride": seq.stride,
        "source_indices": [f.source_index for f in seq.frames],
    }
    (out / _SEQ_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_frame_dir(path: str | Path, phase: Phase | None = None, scene_id: str | None = None) -> FrameSequence:
    """Read a directory of ``frame_*.png`` files back into a sequence."""
    path = Path(path)
    files = sorted(path.glob("frame_*.png"))
    if not files:
        raise EmptyStream(f"no frame_*.png files in {path}")
    meta_path = path / _SEQ_META
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    stride = int(meta.get("stride", 1))
    fps = float(meta.get("source_fps", 1.0))
    indices = meta.get("source_indices") or [i * stride for i in range(len(files))]
    if len(indices) != len(files):
        raise SchemaError(f"{meta_path}: index list does not match frame files")
    frames = tuple(
        Frame(i, int(src), int(src) / fps, load_image(f)) for i, (src, f) in enumerate(zip(indices, files))
    )
    return FrameSequence(
        scene_id or meta.get("scene_id") or path.parent.name,
        Phase(phase or meta.get("phase") or path.name),
        fps,
        stride,
        frames,
    )


# --- xBD ------------------------------------------------------------------------


def _read_label_file(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable label JSON: {exc}") from exc
    try:
        features = doc["features"]["xy"]
        meta = doc["metadata"]
        width, height = int(meta["width"]), int(meta["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: missing features.xy or metadata width/height") from exc
    if not isinstance(features, list):
        raise SchemaError(f"{path}: features.xy must be a list")

    buildings = {}
    for i, feat in enumerate(features):
        try:
            props = feat.get("properties", {})
            uid = str(props.get("uid") or f"{Path(path).stem}-{i}")
            geom = shapely_wkt.loads(feat["wkt"])
        except (KeyError, AttributeError, TypeError, ShapelyError) as exc:
            raise SchemaError(f"{path}: feature {i} malformed: {exc}") from exc
        if geom.geom_type != "Polygon":
            raise SchemaError(f"{path}: feature {uid} is {geom.geom_type}, expected Polygon")
        coords = list(geom.exterior.coords)
        if len(coords) > 1 and coords[0] == coords[-1]:
            coords = coords[:-1]
        subtype = props.get("subtype")
        try:
            label = XbdLabel.parse(subtype) if subtype is not None else None
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        buildings[uid] = (tuple((x, y) for x, y, *_ in coords), label)
    return {"width": width, "height": height, "buildings": buildings, "img_name": meta.get("img_name")}


def scene_id_from_path(path: str | Path) -> str:
    stem = Path(path).stem
    return re.sub(r"_(pre|post)_disaster$", "", stem)


def load_xbd_scene(label_file_pre, label_file_post, image_pre, image_post, pseudo_count: int = DEFAULT_PSEUDO_COUNT) -> ScenePair:
    """Load one xBD pre/post pair into pseudo-frame sequences plus building records."""
    pre_doc = _read_label_file(label_file_pre)
    post_doc = _read_label_file(label_file_post)
    scene_id = scene_id_from_path(label_file_post)

    pre_img = load_image(image_pre)
    post_img = load_image(image_post)
    for doc, img, name in ((pre_doc, pre_img, image_pre), (post_doc, post_img, image_post)):
        if img.shape[:2] != (doc["height"], doc["width"]):
            raise SchemaError(
                f"{name}: image is {img.shape[1]}x{img.shape[0]}, label metadata says {doc['width']}x{doc['height']}"
            )

    buildings = []
    pre_b, post_b = pre_doc["buildings"], post_doc["buildings"]
    for uid, (poly, label) in post_b.items():
        buildings.append(BuildingRecord(uid, poly, label, counterpart_missing=uid not in pre_b))
    for uid, (poly, label) in pre_b.items():
        if uid not in post_b:
            buildings.append(BuildingRecord(uid, poly, label, counterpart_missing=True))
    for b in buildings:
        b.check_within(post_doc["width"], post_doc["height"])

    pre = make_pseudo_frames(pre_img, pseudo_count, Phase.PRE, scene_id)
    post = make_pseudo_frames(post_img, pseudo_count, Phase.POST, scene_id)
    return ScenePair(scene_id, pre, post, tuple(buildings))


@dataclass(frozen=True)
class XbdPair:
    scene_id: str
    label_pre: Path
    label_post: Path
    image_pre: Path
    image_post: Path

    def load(self, pseudo_count: int = DEFAULT_PSEUDO_COUNT) -> ScenePair:
        return load_xbd_scene(self.label_pre, self.label_post, self.image_pre, self.image_post, pseudo_count)


def discover_xbd(data_dir: str | Path, subset: str | None = None) -> list[XbdPair]:
    """Find ``labels/*_post_disaster.json`` with matching pre labels and images.

    ``subset`` is a scene-id prefix such as ``moore-tornado``.
    """
    data_dir = Path(data_dir)
    labels, images = data_dir / "labels", data_dir / "images"
    if not labels.is_dir() or not images.is_dir():
        raise SchemaError(f"{data_dir}: expected labels/ and images/ subdirectories")
    pairs = []
    for post_label in sorted(labels.glob("*_post_disaster.json")):
        sid = scene_id_from_path(post_label)
        if subset and not sid.startswith(subset):
            continue
        pair = XbdPair(
            sid,
            labels / f"{sid}_pre_disaster.json",
            post_label,
            images / f"{sid}_pre_disaster.png",
            images / f"{sid}_post_disaster.png",
        )
        missing = [p for p in (pair.label_pre, pair.image_pre, pair.image_post) if not p.exists()]
        if missing:
            raise SchemaError(f"scene {sid}: missing {', '.join(str(m) for m in missing)}")
        pairs.append(pair)
    return pairs


def crop_building(frame: Frame, building: BuildingRecord, pad_fraction: float = DEFAULT_PAD, scale: int = 1) -> Frame:
    """Axis-aligned crop around a building, padded per side and clamped to the frame.

    ``scale`` maps label-space coordinates onto an upscaled frame.
    """
    if not 0 <= pad_fraction <= 1:
        raise ValueError("pad_fraction must lie in [0, 1]")
    x0, y0, x1, y1 = (v * scale for v in building.bounds())
    if x1 <= x0 or y1 <= y0:
        raise DegeneratePolygon(f"building {building.building_id}: zero-area bounding box")
    if x0 < 0 or y0 < 0 or x1 > frame.width or y1 > frame.height:
        raise GeometryError(f"building {building.building_id}: polygon outside frame bounds")
    px, py = (x1 - x0) * pad_fraction, (y1 - y0) * pad_fraction
    left = max(0, math.floor(x0 - px))
    top = max(0, math.floor(y0 - py))
    right = min(frame.width - 1, math.ceil(x1 + px))
    bottom = min(frame.height - 1, math.ceil(y1 + py))
    pixels = np.ascontiguousarray(frame.pixels[top : bottom + 1, left : right + 1])
    return replace(frame, pixels=pixels)


def frames_from_source(source: str | Path, phase: Phase, scene_id: str, stride: int = DEFAULT_STRIDE,
                       pseudo_count: int = DEFAULT_PSEUDO_COUNT, fps_override: float | None = None) -> FrameSequence:
    """Frame directory, still image or video file, whichever ``source`` is."""
    source = Path(source)
    if source.is_dir():
        return read_frame_dir(source, phase, scene_id)
    if source.suffix.lower() in {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}:
        return make_pseudo_frames(source, pseudo_count, phase, scene_id)
    return sample_frames(FfmpegVideo(source, fps_override), stride, phase, scene_id)

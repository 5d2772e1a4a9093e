"""Synthetic xBD-layout scenes: coloured building blocks on a plain background."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from aftermath.ingest import XbdPair, save_png
from aftermath.taxonomy import XbdLabel

CELL = 32
MARGIN = 6


def random_labels(n: int, seed: int = 0, include_unclassified: bool = False) -> list[XbdLabel]:
    pool = list(XbdLabel) if include_unclassified else [l for l in XbdLabel if l is not XbdLabel.UN_CLASSIFIED]
    rng = np.random.default_rng(seed)
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


def _damage(post: np.ndarray, box: tuple[int, int, int, int], label: XbdLabel, rng) -> None:
    x0, y0, x1, y1 = box
    h, w = y1 - y0, x1 - x0
    if label is XbdLabel.MINOR_DAMAGE:
        post[y0 : y0 + h // 3, x0 : x0 + w // 3] = (60, 60, 60)
    elif label is XbdLabel.MAJOR_DAMAGE:
        post[y0 : y0 + h // 2, x0:x1] = rng.integers(60, 140, size=(h // 2, w, 3), dtype=np.uint8)
    elif label is XbdLabel.DESTROYED:
        post[y0:y1, x0:x1] = rng.integers(90, 170, size=(h, w, 3), dtype=np.uint8)


def gen_fixture_scene(out_dir: str | Path, n_buildings: int, labels: Sequence[XbdLabel | str] | None = None,
                      scene_id: str = "fixture-tornado_00000000", seed: int = 0) -> XbdPair:
    """Write ``images/`` and ``labels/`` for one pre/post pair; returns the pair's paths."""
    labels = [XbdLabel.parse(l) if isinstance(l, str) else l for l in (labels or random_labels(n_buildings, seed))]
    if len(labels) != n_buildings:
        raise ValueError("need one label per building")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    side = max(2, math.ceil(math.sqrt(max(n_buildings, 1))))
    size = side * CELL
    pre = np.empty((size, size, 3), dtype=np.uint8)
    pre[...] = (96, 128, 72)
    features_pre, features_post = [], []
    boxes = []
    for i in range(n_buildings):
        gx, gy = i % side, i // side
        x0, y0 = gx * CELL + MARGIN, gy * CELL + MARGIN
        x1, y1 = x0 + CELL - 2 * MARGIN, y0 + CELL - 2 * MARGIN
        color = rng.integers(150, 256, size=3, dtype=np.uint8)
        pre[y0:y1, x0:x1] = color
        boxes.append((x0, y0, x1, y1))
    post = pre.copy()
    for i, (box, label) in enumerate(zip(boxes, labels)):
        _damage(post, box, label, rng)
        x0, y0, x1, y1 = box
        wkt = f"POLYGON (({x0} {y0}, {x1} {y0}, {x1} {y1}, {x0} {y1}, {x0} {y0}))"
        uid = f"b{i:04d}"
        features_pre.append({"wkt": wkt, "properties": {"feature_type": "building", "uid": uid}})
        features_post.append(
            {"wkt": wkt, "properties": {"feature_type": "building", "subtype": label.value, "uid": uid}}
        )

    for phase, raster, feats in (("pre", pre, features_pre), ("post", post, features_post)):
        name = f"{scene_id}_{phase}_disaster"
        save_png(raster, out_dir / "images" / f"{name}.png")
        doc = {
            "features": {"lng_lat": [], "xy": feats},
            "metadata": {"width": size, "height": size, "img_name": f"{name}.png", "disaster_type": "wind"},
        }
        (out_dir / "labels" / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")

    return XbdPair(
        scene_id,
        out_dir / "labels" / f"{scene_id}_pre_disaster.json",
        out_dir / "labels" / f"{scene_id}_post_disaster.json",
        out_dir / "images" / f"{scene_id}_pre_disaster.png",
        out_dir / "images" / f"{scene_id}_post_disaster.png",
    )

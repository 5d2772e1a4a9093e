"""MMI ranking with and without enhancement, side by side.

Takes a scene list (JSON list of {scene_id, pre, post}); pre/post may be frame
directories, still images or video files. Without ``--vlm-url`` a mock VLM
answers with a fixed rank per scene, which is handy for checking the plumbing.

    python scripts/run_mmi_ablation.py --scenes scenes.json --backends identity,bicubic --repetitions 3
    python scripts/run_mmi_ablation.py --demo --out out/mmi-demo
"""

import argparse
import json
from pathlib import Path

import numpy as np

from aftermath.cli import main as cli
from aftermath.imaging import encode_png
from aftermath.taxonomy import to_roman
from aftermath.testkit import MockScript, serve_mock_vlm


def demo_scenes(root: Path, n: int = 4) -> Path:
    rng = np.random.default_rng(0)
    entries = []
    for i in range(n):
        for phase in ("pre", "post"):
            (root / f"s{i}_{phase}.png").write_bytes(encode_png(rng.integers(0, 256, (48, 64, 3), dtype=np.uint8)))
        entries.append({"scene_id": f"s{i}", "pre": str(root / f"s{i}_pre.png"), "post": str(root / f"s{i}_post.png")})
    path = root / "scenes.json"
    path.write_text(json.dumps(entries, indent=2))
    return path


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenes")
    p.add_argument("--demo", action="store_true", help="generate synthetic scenes and use a mock VLM")
    p.add_argument("--backends", default="identity,bicubic")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--vlm-url")
    p.add_argument("--sr-url")
    p.add_argument("--out", default="out/mmi-ablation")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = Path(args.scenes) if args.scenes else None
    if args.demo or scenes is None:
        scenes = demo_scenes(out)
    argv = ["mmi", "--scenes", str(scenes), "--backends", args.backends, "--scale", str(args.scale),
            "--repetitions", str(args.repetitions), "--out", str(out)]
    if args.sr_url:
        argv += ["--sr-url", args.sr_url]
    if args.vlm_url:
        raise SystemExit(cli(argv + ["--vlm-url", args.vlm_url]))
    ids = [e["scene_id"] for e in json.loads(scenes.read_text())]
    script = MockScript({sid: f"Estimated intensity MMI-{to_roman(8 + i % 4)}." for i, sid in enumerate(ids)})
    with serve_mock_vlm(script) as vlm:
        raise SystemExit(cli(argv + ["--vlm-url", vlm.url]))


if __name__ == "__main__":
    main()

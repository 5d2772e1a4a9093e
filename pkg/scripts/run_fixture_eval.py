"""Building-level evaluation on a generated fixture, fully offline.

Generates an xBD-layout scene, starts the mock VLM (truthful, optionally with
a fraction of buildings answered wrongly) and the nearest-neighbour SR mock,
then runs ``aftermath eval-xbd`` and prints the per-class table.

    python scripts/run_fixture_eval.py --buildings 200 --noise 0.2 --out out/fixture
"""

import argparse
import random
from pathlib import Path

from aftermath.cli import main as cli
from aftermath.taxonomy import DamageCategory
from aftermath.testkit import MockScript, fixture_labels, gen_fixture_scene, random_labels, serve_mock_sr, serve_mock_vlm


def noisy(labels: dict, noise: float, seed: int) -> dict:
    """Swap a fraction of the truthful answers for a neighbouring category."""
    rng = random.Random(seed)
    out = {}
    for key, cat in labels.items():
        if rng.random() < noise:
            step = rng.choice([-1, 1])
            if not 1 <= cat + step <= 4:
                step = -step
            cat = DamageCategory(cat + step)
        out[key] = cat
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--buildings", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.0, help="fraction of deliberately wrong answers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", default="out/fixture-eval")
    args = p.parse_args()

    out = Path(args.out)
    data = out / "data"
    gen_fixture_scene(data, args.buildings, random_labels(args.buildings, args.seed),
                      scene_id="fixture-tornado_00000000", seed=args.seed)
    script = MockScript.truthful(noisy(fixture_labels(data), args.noise, args.seed))
    with serve_mock_vlm(script) as vlm, serve_mock_sr("nearest") as sr:
        code = cli([
            "eval-xbd", "--data", str(data), "--enhance", "service", "--scale", str(args.scale),
            "--sr-url", sr.url, "--vlm-url", vlm.url, "--created-at", "2024-01-01T00:00:00Z",
            "--out", str(out / "results"),
        ])
    raise SystemExit(code)


if __name__ == "__main__":
    main()

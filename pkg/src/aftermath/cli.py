"""Command-line entry point: ``aftermath <subcommand>``.

Exit codes: 0 success, 2 ingest, 3 assessment, 4 dataset, 5 config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from aftermath import config as cfgmod
from aftermath.enhance import EnhanceError, enhance_sequence
from aftermath.ingest import (
    FfmpegVideo,
    Frame,
    FrameSequence,
    IngestError,
    Phase,
    discover_xbd,
    frames_from_source,
    make_pseudo_frames,
    read_frame_dir,
    sample_frames,
    write_frame_dir,
)
from aftermath.metrics import (
    baseline_table,
    compare_to_baseline,
    matrix_from_predictions,
    read_predictions,
    render_table,
    summarize,
    write_predictions,
)
from aftermath.pipeline import assess_scene, evaluate_xbd_scene, mmi_study
from aftermath.protocol import PromptSet, aggregate_mmi
from aftermath.report import AssessmentReport, NoGeometry, parse_json, render_geojson, render_json, render_markdown
from aftermath.vlm import VlmClient, VlmError

log = logging.getLogger("aftermath")

EXIT_OK, EXIT_INGEST, EXIT_ASSESS, EXIT_DATASET, EXIT_CONFIG = 0, 2, 3, 4, 5

# flag dest -> (section, key)
CONFIG_FLAGS = {
    "stride": ("ingest", "stride"),
    "pseudo_count": ("ingest", "pseudo_count"),
    "pad": ("ingest", "pad"),
    "fps_override": ("ingest", "fps_override"),
    "enhance": ("enhance", "backend"),
    "scale": ("enhance", "scale"),
    "sr_url": ("enhance", "service_url"),
    "window": ("enhance", "window"),
    "cache_dir": ("enhance", "cache_dir"),
    "vlm_url": ("vlm", "endpoint"),
    "model": ("vlm", "model"),
    "temperature": ("vlm", "temperature"),
    "repetitions": ("vlm", "repetitions"),
    "concurrency": ("vlm", "concurrency"),
    "max_image_edge": ("vlm", "max_image_edge"),
    "adapter": ("vlm", "adapter"),
    "prompts": ("run", "prompts_dir"),
    "out": ("run", "out"),
    "created_at": ("run", "created_at"),
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration (flags beat --config file values)")
    g.add_argument("--config", help="TOML config file")
    g.add_argument("--stride", type=int)
    g.add_argument("--pseudo-count", type=int)
    g.add_argument("--pad", type=float)
    g.add_argument("--fps-override", type=float)
    g.add_argument("--enhance", choices=["service", "bicubic", "identity"])
    g.add_argument("--scale", type=int)
    g.add_argument("--sr-url")
    g.add_argument("--window", type=int)
    g.add_argument("--cache-dir")
    g.add_argument("--vlm-url")
    g.add_argument("--model")
    g.add_argument("--temperature", type=float)
    g.add_argument("--repetitions", type=int)
    g.add_argument("--concurrency", type=int)
    g.add_argument("--max-image-edge", type=int)
    g.add_argument("--adapter", choices=["native", "openai", "ollama"])
    g.add_argument("--prompts", help="directory holding the prompt templates")
    g.add_argument("--out", help="output directory")
    g.add_argument("--created-at", help="timestamp recorded in reports (default: now)")
    return p


def resolve_config(args) -> cfgmod.RunConfig:
    overrides: dict[str, dict] = {}
    for dest, (section, key) in CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    try:
        return cfgmod.load_config(getattr(args, "config", None), overrides)
    except cfgmod.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _out_dir(cfg) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.toml").write_text(cfgmod.dump_config(cfg))
    return out


def _prompts(cfg) -> PromptSet:
    try:
        return PromptSet.load(cfg.run.prompts_dir or None)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot load prompt templates: {exc}") from exc


def _client(cfg) -> VlmClient:
    try:
        return VlmClient(cfg.vlm_config())
    except cfgmod.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _enhancement(cfg, backend: str | None = None):
    try:
        return cfg.enhancement(backend)
    except cfgmod.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _snapshot(cfg, prompts: PromptSet) -> dict:
    snap = cfg.snapshot()
    snap["prompt_version"] = prompts.version
    return snap


def _write_report(out: Path, report: AssessmentReport) -> None:
    (out / "report.json").write_bytes(render_json(report))
    (out / "report.md").write_text(render_markdown(report), encoding="utf-8")


def _load_scene_list(path: str) -> list[dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read scene list {path}: {exc}") from exc
    if not isinstance(doc, list) or not all(isinstance(d, dict) and {"scene_id", "pre", "post"} <= d.keys() for d in doc):
        raise CliError(EXIT_CONFIG, f"{path}: expected a JSON list of {{scene_id, pre, post}} objects")
    return doc


def _load_sources(cfg, entries: list[dict]) -> list[tuple[FrameSequence, FrameSequence]]:
    ing = cfg.ingest
    out = []
    for e in entries:
        sid = str(e["scene_id"])
        try:
            pre = frames_from_source(e["pre"], Phase.PRE, sid, ing.stride, ing.pseudo_count, ing.fps_override or None)
            post = frames_from_source(e["post"], Phase.POST, sid, ing.stride, ing.pseudo_count, ing.fps_override or None)
        except IngestError as exc:
            raise CliError(EXIT_INGEST, f"scene {sid}: {exc}") from exc
        out.append((pre, post))
    return out


# --- subcommands -----------------------------------------------------------------------


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    try:
        video = FfmpegVideo(args.input, cfg.ingest.fps_override or None)
        seq = sample_frames(video, cfg.ingest.stride, Phase(args.phase), args.scene)
    except IngestError as exc:
        raise CliError(EXIT_INGEST, str(exc)) from exc
    path = write_frame_dir(seq, cfg.run.out)
    print(f"{len(seq)} frames at {seq.effective_fps:g} fps -> {path}")
    return EXIT_OK


def cmd_pseudo(args) -> int:
    cfg = resolve_config(args)
    try:
        seq = make_pseudo_frames(Path(args.image), cfg.ingest.pseudo_count, Phase(args.phase), args.scene)
    except IngestError as exc:
        raise CliError(EXIT_INGEST, str(exc)) from exc
    path = write_frame_dir(seq, cfg.run.out)
    print(f"{len(seq)} pseudo-frames -> {path}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    cfg = resolve_config(args)
    try:
        seq = read_frame_dir(args.frames, Phase(args.phase) if args.phase else None, args.scene)
    except IngestError as exc:
        raise CliError(EXIT_INGEST, str(exc)) from exc
    enh = _enhancement(cfg)
    try:
        frames = enhance_sequence(seq, enh)
    except EnhanceError as exc:
        raise CliError(EXIT_ASSESS, f"enhancement failed: {exc}") from exc
    enhanced = FrameSequence(
        seq.scene_id, seq.phase, seq.source_fps, seq.stride,
        tuple(Frame(f.index, f.source_index, f.timestamp_s, f.pixels) for f in frames),
    )
    path = write_frame_dir(enhanced, Path(cfg.run.out) / f"{enh.backend}-x{enh.effective_scale}")
    print(f"{len(frames)} frames enhanced ({enh.backend}, x{enh.effective_scale}) -> {path}")
    return EXIT_OK


def cmd_assess_scene(args) -> int:
    cfg = resolve_config(args)
    if args.scenes:
        entries = _load_scene_list(args.scenes)
    elif args.pre and args.post:
        entries = [{"scene_id": args.scene, "pre": args.pre, "post": args.post}]
    else:
        raise CliError(EXIT_CONFIG, "give --pre and --post, or --scenes")
    sources = _load_sources(cfg, entries)
    prompts, client = _prompts(cfg), _client(cfg)
    enh = _enhancement(cfg)
    out = _out_dir(cfg)

    def run(pair):
        pre, post = pair
        try:
            return assess_scene(pre, post, enh, client, prompts, args.mmi, cfg.vlm.repetitions, cfg.vlm.frame_budget), None
        except (EnhanceError, VlmError, ValueError) as exc:
            log.error("scene %s failed: %s", pre.scene_id, exc)
            return None, f"scene {pre.scene_id} failed: {exc}"

    with ThreadPoolExecutor(max_workers=cfg.vlm.concurrency) as pool:
        results = list(pool.map(run, sources))
    scenes = [s for s, _ in results if s is not None]
    notes = sorted(n for _, n in results if n)
    ranks = [s.mmi for s in scenes if s.mmi is not None]
    snap = _snapshot(cfg, prompts)
    report = AssessmentReport(
        cfgmod.run_id("assess-scene", snap, sorted(e["scene_id"] for e in entries)),
        cfg.run.created_at, snap, tuple(scenes), None,
        aggregate_mmi(ranks) if ranks else None, tuple(notes),
    )
    _write_report(out, report)
    print(f"{len(scenes)}/{len(sources)} scenes assessed -> {out / 'report.json'}")
    return EXIT_OK if scenes else EXIT_ASSESS


def cmd_eval_xbd(args) -> int:
    cfg = resolve_config(args)
    try:
        pairs = discover_xbd(args.data, args.subset)
        scenes = [p.load(cfg.ingest.pseudo_count) for p in pairs]
    except IngestError as exc:
        raise CliError(EXIT_DATASET, f"dataset error: {exc}") from exc
    if not scenes:
        raise CliError(EXIT_DATASET, f"no scenes found under {args.data} (subset {args.subset!r})")
    prompts, client = _prompts(cfg), _client(cfg)
    enh = _enhancement(cfg)
    out = _out_dir(cfg)

    results = [
        evaluate_xbd_scene(s, enh, client, prompts, cfg.ingest.pad, cfg.vlm.concurrency)
        for s in sorted(scenes, key=lambda s: s.scene_id)
    ]
    preds = [p for r in results for p in r.predictions]
    write_predictions(preds, out / "predictions.jsonl")

    baseline = baseline_table()
    summary = summarize(matrix_from_predictions(preds))
    summary = summary.with_deltas(compare_to_baseline(summary, baseline))
    (out / "metrics.json").write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n")
    (out / "metrics.txt").write_text(render_table(summary, baseline))

    snap = _snapshot(cfg, prompts)
    notes = [f for r in results for f in r.failures]
    report = AssessmentReport(
        cfgmod.run_id("eval-xbd", snap, [s.scene_id for s in scenes]),
        cfg.run.created_at, snap, tuple(r.scene for r in results), summary, None, tuple(notes),
    )
    _write_report(out, report)
    for s in scenes:
        if s.buildings:
            (out / f"scene_{s.scene_id}.geojson").write_bytes(render_geojson(report, s))
    sys.stdout.write(render_table(summary, baseline))
    scored = summary.matrix.total
    return EXIT_OK if scored or not preds else EXIT_ASSESS


def cmd_mmi(args) -> int:
    cfg = resolve_config(args)
    sources = _load_sources(cfg, _load_scene_list(args.scenes))
    prompts, client = _prompts(cfg), _client(cfg)
    backends = [b.strip() for b in (args.backends or cfg.enhance.backend).split(",") if b.strip()]
    enh = {b: _enhancement(cfg, b) for b in backends}
    out = _out_dir(cfg)
    study = mmi_study(sources, enh, client, prompts, cfg.vlm.repetitions, cfg.vlm.frame_budget)
    doc = study.to_dict(backends)
    doc["config"] = _snapshot(cfg, prompts)
    (out / "mmi.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    table = study.render_table(backends)
    (out / "mmi.md").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = parse_json(Path(args.input).read_bytes())
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read report {args.input}: {exc}") from exc
    out = Path(args.out or Path(args.input).parent)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, report)
    if args.data:
        try:
            for pair in discover_xbd(args.data, args.subset):
                try:
                    (out / f"scene_{pair.scene_id}.geojson").write_bytes(render_geojson(report, pair.load(1)))
                except NoGeometry:
                    continue
        except IngestError as exc:
            raise CliError(EXIT_DATASET, str(exc)) from exc
    print(f"rendered {out / 'report.md'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        preds = read_predictions(args.predictions)
        baseline = baseline_table(args.baseline)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read inputs: {exc}") from exc
    summary = summarize(matrix_from_predictions(preds))
    summary = summary.with_deltas(compare_to_baseline(summary, baseline))
    text = render_table(summary, baseline)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n")
        (out / "metrics.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aftermath", description="Post-disaster building damage assessment.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _config_parent()

    p = sub.add_parser("sample", parents=[common], help="sample every Nth frame of a video")
    p.add_argument("--input", required=True)
    p.add_argument("--phase", choices=["pre", "post"], default="pre")
    p.add_argument("--scene", default="scene")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pseudo", parents=[common], help="duplicate a still image into pseudo-frames")
    p.add_argument("--image", required=True)
    p.add_argument("--count", dest="pseudo_count", type=int)
    p.add_argument("--phase", choices=["pre", "post"], default="pre")
    p.add_argument("--scene", default="scene")
    p.set_defaults(func=cmd_pseudo)

    p = sub.add_parser("enhance", parents=[common], help="enhance one frame directory")
    p.add_argument("--frames", required=True, help="<scene>/<phase> frame directory")
    p.add_argument("--phase", choices=["pre", "post"])
    p.add_argument("--scene")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("assess-scene", parents=[common], help="two-phase scene assessment")
    p.add_argument("--pre", help="pre-disaster frame dir, image or video")
    p.add_argument("--post", help="post-disaster frame dir, image or video")
    p.add_argument("--scene", default="scene")
    p.add_argument("--scenes", help="JSON list of {scene_id, pre, post}")
    p.add_argument("--mmi", action="store_true", help="also rank each scene on the MMI scale")
    p.set_defaults(func=cmd_assess_scene)

    p = sub.add_parser("eval-xbd", parents=[common], help="per-building evaluation on xBD-layout data")
    p.add_argument("--data", required=True, help="directory with images/ and labels/")
    p.add_argument("--subset", default=None, help="scene-id prefix, e.g. moore-tornado")
    p.set_defaults(func=cmd_eval_xbd)

    p = sub.add_parser("mmi", parents=[common], help="MMI ranking study across enhancement backends")
    p.add_argument("--scenes", required=True, help="JSON list of {scene_id, pre, post}")
    p.add_argument("--backends", help="comma-separated enhancement backends to compare")
    p.set_defaults(func=cmd_mmi)

    p = sub.add_parser("report", help="re-render report.md (and GeoJSON) from report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--data", help="xBD-layout directory, for GeoJSON output")
    p.add_argument("--subset")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="metrics and baseline deltas from a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--baseline", help="reference table JSON (default: shipped table)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"aftermath {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

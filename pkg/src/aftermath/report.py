"""report.json (canonical), report.md and per-scene GeoJSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from aftermath.ingest import ScenePair
from aftermath.metrics import CLASSES, ConfusionMatrix, EvaluationSummary, summarize
from aftermath.protocol import SceneAssessment, StructureAssessment
from aftermath.taxonomy import DamageCategory, MmiRank, map_xbd_to_category

REPORT_VERSION = 1


class NoGeometry(ValueError):
    pass


@dataclass(frozen=True)
class AssessmentReport:
    run_id: str
    created_at: str
    config: Mapping[str, object]
    scenes: tuple[SceneAssessment, ...] = ()
    evaluation: EvaluationSummary | None = None
    overall_mmi: MmiRank | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(sorted(self.scenes, key=lambda s: s.scene_id)))
        object.__setattr__(self, "notes", tuple(self.notes))


# --- dict conversion ---------------------------------------------------------------


def _mmi_dict(mmi: MmiRank | None):
    return None if mmi is None else {"value": mmi.value, "roman": mmi.roman, "label": mmi.label}


def _structure_dict(a: StructureAssessment) -> dict:
    return {
        "structure_id": a.structure_id,
        "category": a.category.canonical,
        "level": a.category.level,
        "concern": a.concern.value,
        "rationale": a.rationale,
        "confidence": a.confidence,
        "matched_building_id": a.matched_building_id,
    }


def scene_to_dict(s: SceneAssessment) -> dict:
    return {
        "scene_id": s.scene_id,
        "assessments": [_structure_dict(a) for a in s.assessments],
        "distribution": {c.canonical: v for c, v in sorted(s.distribution.items())},
        "mmi": _mmi_dict(s.mmi),
        "caveats": s.caveats,
        "provenance": dict(s.provenance),
        "flags": list(s.flags),
    }


def report_to_dict(report: AssessmentReport) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "run_id": report.run_id,
        "created_at": report.created_at,
        "config": report.config,
        "scenes": [scene_to_dict(s) for s in report.scenes],
        "evaluation": report.evaluation.to_dict() if report.evaluation is not None else None,
        "overall_mmi": _mmi_dict(report.overall_mmi),
        "notes": list(report.notes),
    }


def _scene_from_dict(d: dict) -> SceneAssessment:
    return SceneAssessment(
        d["scene_id"],
        tuple(
            StructureAssessment(
                a["structure_id"],
                DamageCategory.from_canonical(a["category"]),
                a.get("rationale", ""),
                a.get("confidence", "medium"),
                a.get("matched_building_id"),
            )
            for a in d.get("assessments", [])
        ),
        {DamageCategory.from_canonical(k): v for k, v in d.get("distribution", {}).items()},
        MmiRank(d["mmi"]["value"]) if d.get("mmi") else None,
        d.get("caveats", ""),
        d.get("provenance", {}),
        tuple(d.get("flags", ())),
    )


def _evaluation_from_dict(d: dict | None) -> EvaluationSummary | None:
    if d is None:
        return None
    cm = d["confusion_matrix"]
    summary = summarize(ConfusionMatrix(tuple(map(tuple, cm["counts"])), cm["unscored"]))
    if d.get("baseline_deltas"):
        summary = summary.with_deltas({
            DamageCategory.from_canonical(k): (v["precision"], v["recall"], v["f1"])
            for k, v in d["baseline_deltas"].items()
        })
    return summary


def report_from_dict(d: dict) -> AssessmentReport:
    return AssessmentReport(
        d["run_id"],
        d["created_at"],
        d.get("config", {}),
        tuple(_scene_from_dict(s) for s in d.get("scenes", [])),
        _evaluation_from_dict(d.get("evaluation")),
        MmiRank(d["overall_mmi"]["value"]) if d.get("overall_mmi") else None,
        tuple(d.get("notes", ())),
    )


# --- renderers ---------------------------------------------------------------------------


def render_json(report: AssessmentReport) -> bytes:
    """Canonical form: sorted keys, two-space indent, shortest round-trip floats."""
    return (json.dumps(report_to_dict(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def parse_json(data: bytes | str) -> AssessmentReport:
    return report_from_dict(json.loads(data))


def _fmt3(x) -> str:
    return f"{float(x):.3f}"


def _scene_markdown(s: SceneAssessment) -> list[str]:
    out = [f"## Scene `{s.scene_id}`", ""]
    prov = s.provenance
    if prov:
        bits = [f"{k}: {prov[k]}" for k in ("enhancement_backend", "scale", "model_name") if k in prov]
        if bits:
            out += ["_" + ", ".join(bits) + "_", ""]
    for cat in sorted(DamageCategory, reverse=True):
        members = [a for a in s.assessments if a.category is cat]
        if not members:
            continue
        out += [f"### {cat.concern.label}: {cat.title}", ""]
        for a in members:
            where = f" (building {a.matched_building_id})" if a.matched_building_id and a.matched_building_id != a.structure_id else ""
            reason = f": {a.rationale}" if a.rationale else ""
            out.append(f"- **{a.structure_id}**{where}{reason} _[confidence: {a.confidence}]_")
        out.append("")
    if s.distribution:
        out += ["| Category | Concern | Share |", "|---|---|---:|"]
        for cat in sorted(s.distribution, reverse=True):
            out.append(f"| {cat.title} | {cat.concern.label} | {100 * s.distribution[cat]:.1f}% |")
        out.append("")
    out.append(f"**MMI:** {s.mmi if s.mmi is not None else 'unranked'}")
    out.append("")
    if s.caveats:
        out += [f"**Caveats:** {s.caveats}", ""]
    if s.flags:
        out += [f"**Flags:** {', '.join(s.flags)}", ""]
    return out


def _evaluation_markdown(ev: EvaluationSummary) -> list[str]:
    out = ["## Evaluation", ""]
    has_deltas = ev.baseline_deltas is not None
    head = "| Damage Type | Precision | Recall | F1 Score | Support |"
    sep = "|---|---:|---:|---:|---:|"
    if has_deltas:
        head += " ΔPrecision | ΔRecall | ΔF1 |"
        sep += "---:|---:|---:|"
    out += [head, sep]
    for m in ev.per_class:
        row = f"| {m.category.title} | {_fmt3(m.precision)} | {_fmt3(m.recall)} | {_fmt3(m.f1)} | {m.support} |"
        if has_deltas:
            d = ev.baseline_deltas[m.category]
            row += " " + " | ".join(f"{x:+.3f}" for x in d) + " |"
        out.append(row)
    acc = "N/A" if ev.overall_accuracy is None else f"{100 * float(ev.overall_accuracy):.1f}%"
    out += ["", f"**Overall accuracy:** {acc} (unscored: {ev.matrix.unscored})", "", f"> {ev.accuracy_caveat}", ""]
    return out


def render_markdown(report: AssessmentReport) -> str:
    lines = [
        "# Damage assessment report",
        "",
        f"- run: `{report.run_id}`",
        f"- created: {report.created_at}",
    ]
    version = report.config.get("prompt_version") if isinstance(report.config, Mapping) else None
    if version:
        lines.append(f"- prompt templates: `{version}`")
    lines.append("")
    if report.overall_mmi is not None:
        lines += [f"**Overall MMI:** {report.overall_mmi}", ""]
    for s in report.scenes:
        lines += _scene_markdown(s)
    if report.evaluation is not None:
        lines += _evaluation_markdown(report.evaluation)
    for note in report.notes:
        lines.append(f"- {note}")
    return "\n".join(lines).rstrip("\n") + "\n"


def render_geojson(report: AssessmentReport, scene_pair: ScenePair) -> bytes:
    """One pixel-space polygon feature per building with predicted/truth labels."""
    if not scene_pair.buildings:
        raise NoGeometry(f"scene {scene_pair.scene_id} has no building polygons")
    scene = next((s for s in report.scenes if s.scene_id == scene_pair.scene_id), None)
    by_building = {}
    if scene is not None:
        by_building = {a.matched_building_id: a for a in scene.assessments if a.matched_building_id}
    features = []
    for b in scene_pair.buildings:
        a = by_building.get(b.building_id)
        truth = map_xbd_to_category(b.truth_label) if b.truth_label is not None else None
        ring = [list(p) for p in b.polygon]
        ring.append(ring[0])
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {
                "building_id": b.building_id,
                "predicted": a.category.canonical if a is not None else "unscored",
                "truth": truth.canonical if truth is not None else None,
                "concern": a.concern.value if a is not None else None,
            },
        })
    doc = {"type": "FeatureCollection", "properties": {"scene_id": scene_pair.scene_id, "crs": "pixel"},
           "features": features}
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def category_shares(categories) -> dict[DamageCategory, float]:
    """Exact-sum shares of each predicted category, for scenes scored building by building."""
    categories = list(categories)
    if not categories:
        return {}
    shares = {c: Fraction(sum(1 for x in categories if x is c), len(categories)) for c in CLASSES}
    return {c: float(v) for c, v in shares.items() if v}

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aftermath.ingest import BuildingRecord, Phase, ScenePair, make_pseudo_frames
from aftermath.metrics import accumulate, baseline_table, compare_to_baseline, summarize
from aftermath.protocol import SceneAssessment, StructureAssessment
from aftermath.report import (
    AssessmentReport,
    NoGeometry,
    category_shares,
    parse_json,
    render_geojson,
    render_json,
    render_markdown,
)
from aftermath.taxonomy import DamageCategory as D, MmiRank, XbdLabel

GOLDEN = Path(__file__).parent / "data" / "report_golden.json"


def fixture_report():
    scene = SceneAssessment(
        "scene-1",
        (
            StructureAssessment("roundabout", D(2), "monument cracked", "medium"),
            StructureAssessment("gov", D(3), "leaning facade", "high"),
            StructureAssessment("semi", D(4), "collapsed", "high", matched_building_id="b7"),
        ),
        {D(4): 0.125, D(3): 0.45, D(2): 0.35, D(1): 0.075},
        MmiRank(10),
        "Background buildings are partly occluded.",
        {"enhancement_backend": "bicubic", "scale": 4, "model_name": "gemma3:27b",
         "session_ids": ["scene-1/assess"], "prompt_version": "0123456789abcdef"},
        (),
    )
    cm = accumulate([(D(1), D(1))] * 3 + [(D(2), D(2)), (D(3), D(2)), (D(4), D(4)), (D(4), None)])
    ev = summarize(cm)
    ev = ev.with_deltas(compare_to_baseline(ev, baseline_table()))
    return AssessmentReport(
        "abc123def456", "2024-01-01T00:00:00Z",
        {"enhance": {"backend": "bicubic", "scale": 4}, "prompt_version": "0123456789abcdef"},
        (scene,), ev, MmiRank(10), ("fixture",),
    )


def test_json_round_trip():
    r = fixture_report()
    assert parse_json(render_json(r)) == r


def test_json_byte_stable():
    assert render_json(fixture_report()) == render_json(fixture_report())
    assert render_json(parse_json(render_json(fixture_report()))) == render_json(fixture_report())


def test_json_golden():
    assert render_json(fixture_report()) == GOLDEN.read_bytes()


def test_markdown_severity_order():
    md = render_markdown(fixture_report())
    rows = [l for l in md.splitlines() if l.startswith("| ") and "%" in l]
    assert [r.split("|")[1].strip() for r in rows] == [
        "Totally Destroyed", "Major Damage", "Moderate Damage", "No/Slight Damage",
    ]
    sections = [l for l in md.splitlines() if l.startswith("### ")]
    assert sections == [
        "### Severe Concern: Totally Destroyed",
        "### High Concern: Major Damage",
        "### Moderate Concern: Moderate Damage",
    ]
    assert "**MMI:** MMI-X (Extreme)" in md
    assert "**Caveats:** Background" in md


def test_markdown_each_structure_once():
    md = render_markdown(fixture_report())
    for sid in ("roundabout", "gov", "semi"):
        assert md.count(f"**{sid}**") == 1


def test_markdown_empty_report():
    md = render_markdown(AssessmentReport("r", "t", {}))
    assert md.startswith("# Damage assessment report")
    assert "##" not in md


def test_markdown_metrics_table():
    md = render_markdown(fixture_report())
    table = md.split("## Evaluation")[1]
    rows = [l for l in table.splitlines() if l.startswith("| ") and not l.startswith("| Damage")]
    assert len(rows) == 4
    assert rows[0].startswith("| No/Slight Damage | 1.000 | 1.000 | 1.000 | 3 |")
    assert "**Overall accuracy:** 83.3% (unscored: 1)" in table


@given(st.lists(st.sampled_from(list(D)), max_size=12))
def test_markdown_concern_non_increasing(cats):
    scene = SceneAssessment("s", tuple(StructureAssessment(f"x{i}", c) for i, c in enumerate(cats)),
                            category_shares(cats))
    md = render_markdown(AssessmentReport("r", "t", {}, (scene,)))
    order = [l for l in md.splitlines() if l.startswith("### ")]
    levels = [next(c.level for c in D if l.endswith(c.title)) for l in order]
    assert levels == sorted(levels, reverse=True)
    assert sum(md.count(f"**x{i}**") for i in range(len(cats))) == len(cats)


def _pair(buildings):
    px = np.zeros((32, 32, 3), dtype=np.uint8)
    return ScenePair("fx", make_pseudo_frames(px, 1, Phase.PRE, "fx"), make_pseudo_frames(px, 1, Phase.POST, "fx"),
                     buildings)


SQUARE = ((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0))


def test_geojson_two_buildings():
    pair = _pair([
        BuildingRecord("b0", SQUARE, XbdLabel.DESTROYED),
        BuildingRecord("b1", tuple((x + 20, y) for x, y in SQUARE), XbdLabel.NO_DAMAGE),
    ])
    scene = SceneAssessment("fx", (
        StructureAssessment("b0", D(4), matched_building_id="b0"),
        StructureAssessment("b1", D(2), matched_building_id="b1"),
    ), {D(4): 0.5, D(2): 0.5})
    doc = json.loads(render_geojson(AssessmentReport("r", "t", {}, (scene,)), pair))
    assert doc["type"] == "FeatureCollection" and len(doc["features"]) == 2
    props = [f["properties"] for f in doc["features"]]
    assert props[0] == {"building_id": "b0", "predicted": "totally_destroyed",
                        "truth": "totally_destroyed", "concern": "Severe"}
    assert props[1]["predicted"] == "moderate_damage" and props[1]["truth"] == "no_slight_damage"
    ring = doc["features"][0]["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1] and len(ring) == 5


def test_geojson_unclassified_and_unscored():
    pair = _pair([BuildingRecord("u", SQUARE, XbdLabel.UN_CLASSIFIED), BuildingRecord("v", SQUARE, None)])
    scene = SceneAssessment("fx", (StructureAssessment("u", D(3), matched_building_id="u"),), {D(3): 1.0})
    props = [f["properties"] for f in json.loads(render_geojson(AssessmentReport("r", "t", {}, (scene,)), pair))["features"]]
    assert props[0]["truth"] is None and props[0]["predicted"] == "major_damage"
    assert props[1]["predicted"] == "unscored" and props[1]["concern"] is None


def test_geojson_no_geometry():
    with pytest.raises(NoGeometry):
        render_geojson(AssessmentReport("r", "t", {}), _pair([]))


def test_category_shares_sum_to_one():
    shares = category_shares([D(1), D(1), D(4)])
    assert shares == {D(1): 2 / 3, D(4): 1 / 3}
    assert category_shares([]) == {}

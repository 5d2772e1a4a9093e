"""Two-phase VLM assessment: pre-disaster inventory, then post-disaster comparison.

Also the single-exchange per-building classifier used for labelled evaluation,
and MMI ranking of a scene.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from aftermath.ingest import Frame, Phase
from aftermath.taxonomy import (
    ConcernLevel,
    DamageCategory,
    MmiRank,
    NoMmiFound,
    find_category,
    parse_mmi,
)
from aftermath.vlm import ChatSession, ImagePart, Message, send

log = logging.getLogger(__name__)

FRAME_BUDGET = 4
CONFIDENCES = ("low", "medium", "high")
TEMPLATE_NAMES = ("baseline", "comparison", "building_pair", "mmi")

BASELINE_SCHEMA = (
    '{"structures": [{"id": string, "description": string, "landmarks": [string]}]}'
)
ASSESSMENT_SCHEMA = (
    '{"structures": [{"id": string, "category": 1-4, "rationale": string, '
    '"confidence": "low|medium|high"}], "distribution": {"1": fraction, "2": fraction, '
    '"3": fraction, "4": fraction}, "mmi": "MMI-<roman>" (optional), "caveats": string}'
)


class ParseFailure(ValueError):
    pass


class EmptyInput(ValueError):
    pass


# --- prompt templates -------------------------------------------------------------


def category_definitions() -> str:
    return "\n".join(f"({c.level}) {c.display_string()}" for c in DamageCategory)


@dataclass(frozen=True)
class PromptSet:
    templates: Mapping[str, str]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptSet":
        if directory is None:
            root = resources.files("aftermath") / "prompts"
            texts = {n: (root / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}
        else:
            texts = {n: (Path(directory) / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}
        return cls(texts)

    @property
    def version(self) -> str:
        h = hashlib.sha256()
        for name in TEMPLATE_NAMES:
            h.update(name.encode() + b"\0" + self.templates[name].encode("utf-8") + b"\0")
        return h.hexdigest()[:16]

    def render(self, name: str, scene_id: str, schema: str = "", building_id: str = "") -> str:
        text = self.templates[name]
        for key, value in (
            ("{scene_id}", scene_id),
            ("{building_id}", building_id),
            ("{category_definitions}", category_definitions()),
            ("{schema}", schema),
        ):
            text = text.replace(key, value)
        return text


# --- domain types -------------------------------------------------------------------


@dataclass(frozen=True)
class InventoryItem:
    structure_id: str
    description: str
    landmark_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class BaselineInventory:
    scene_id: str
    structures: tuple[InventoryItem, ...]
    raw_response: str = ""

    def __post_init__(self):
        ids = [s.structure_id for s in self.structures]
        if len(ids) != len(set(ids)):
            raise ValueError("structure ids must be unique within a scene")

    @property
    def ids(self) -> list[str]:
        return [s.structure_id for s in self.structures]


@dataclass(frozen=True)
class StructureAssessment:
    structure_id: str
    category: DamageCategory
    rationale: str = ""
    confidence: str = "medium"
    matched_building_id: str | None = None
    concern: ConcernLevel | None = None

    def __post_init__(self):
        object.__setattr__(self, "category", DamageCategory(self.category))
        if self.concern is None:
            object.__setattr__(self, "concern", self.category.concern)
        elif self.concern is not self.category.concern:
            raise ValueError(f"concern {self.concern} does not match category {self.category.name}")
        if self.confidence not in CONFIDENCES:
            raise ValueError(f"confidence must be one of {CONFIDENCES}")


@dataclass(frozen=True)
class SceneAssessment:
    scene_id: str
    assessments: tuple[StructureAssessment, ...]
    distribution: Mapping[DamageCategory, float] = field(default_factory=dict)
    mmi: MmiRank | None = None
    caveats: str = ""
    provenance: Mapping[str, object] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "assessments", tuple(self.assessments))
        object.__setattr__(self, "flags", tuple(self.flags))
        dist = {DamageCategory(k): float(v) for k, v in self.distribution.items()}
        object.__setattr__(self, "distribution", dist)
        if dist:
            if any(not 0 <= v <= 1 for v in dist.values()):
                raise ValueError("distribution fractions must lie in [0, 1]")
            if not 0.99 <= sum(dist.values()) <= 1.01:
                raise ValueError("distribution fractions must sum to 1")


# --- response parsing -----------------------------------------------------------------

_FENCE_RE = re.compile(r"```[ \t]*(?:json|JSON)?[ \t]*\n(.*?)```", re.DOTALL)
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")


def extract_json_block(text: str) -> dict | None:
    """First fenced block in ``text`` that decodes to a JSON object."""
    for body in _FENCE_RE.findall(text or ""):
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    return None


def parse_fraction(value) -> float:
    """Accept 0.35, 35, "35%", "30% to 40%" (midpoint) and similar."""
    if isinstance(value, bool):
        raise ParseFailure(f"not a fraction: {value!r}")
    if isinstance(value, (int, float)):
        v = float(value)
        return v / 100 if v > 1 else v
    if not isinstance(value, str):
        raise ParseFailure(f"not a fraction: {value!r}")
    nums = [float(n) for n in _NUMBER_RE.findall(value)]
    if not nums:
        raise ParseFailure(f"no number in {value!r}")
    v = (nums[0] + nums[1]) / 2 if len(nums) >= 2 else nums[0]
    return v / 100 if "%" in value or v > 1 else v


def normalize_distribution(dist: Mapping[DamageCategory, float]) -> dict[DamageCategory, float]:
    total = sum(dist.values())
    if total <= 0:
        return {}
    if abs(total - 1.0) <= 1e-9:
        return dict(dist)
    return {k: v / total for k, v in dist.items()}


def _parse_distribution(raw) -> dict[DamageCategory, float]:
    if raw in (None, {}):
        return {}
    if not isinstance(raw, dict):
        raise ParseFailure("distribution must be an object")
    dist = {}
    for key, value in raw.items():
        try:
            cat = DamageCategory(int(key))
        except ValueError:
            raise ParseFailure(f"distribution key {key!r} is not a category level") from None
        dist[cat] = parse_fraction(value)
    return normalize_distribution(dist)


def _parse_structure(item) -> StructureAssessment:
    if not isinstance(item, dict):
        raise ParseFailure("structure entries must be objects")
    try:
        sid = str(item["id"])
        raw_cat = item["category"]
        category = (
            DamageCategory(int(raw_cat))
            if isinstance(raw_cat, (int, float)) or str(raw_cat).strip().isdigit()
            else find_category(str(raw_cat))
        )
    except (KeyError, ValueError) as exc:
        raise ParseFailure(f"bad structure entry {item!r}: {exc}") from exc
    if category is None:
        raise ParseFailure(f"unrecognised category {raw_cat!r}")
    confidence = str(item.get("confidence", "medium")).lower()
    if confidence not in CONFIDENCES:
        confidence = "low"
    return StructureAssessment(sid, category, str(item.get("rationale", "")), confidence)


@dataclass
class ParsedAssessment:
    assessments: list[StructureAssessment]
    distribution: dict[DamageCategory, float]
    mmi: MmiRank | None
    caveats: str


def parse_assessment_block(doc: dict) -> ParsedAssessment:
    structures = doc.get("structures")
    if not isinstance(structures, list):
        raise ParseFailure("'structures' must be a list")
    mmi = None
    if doc.get("mmi"):
        try:
            mmi = parse_mmi(str(doc["mmi"]))
        except ValueError:
            mmi = None
    return ParsedAssessment(
        [_parse_structure(s) for s in structures],
        _parse_distribution(doc.get("distribution")),
        mmi,
        str(doc.get("caveats") or ""),
    )


def parse_assessment_response(text: str) -> ParsedAssessment:
    doc = extract_json_block(text)
    if doc is None:
        raise ParseFailure("no fenced JSON block in response")
    return parse_assessment_block(doc)


def render_structured_block(scene: SceneAssessment) -> str:
    """Inverse of :func:`parse_assessment_response` for the fields it reads."""
    doc = {
        "structures": [
            {"id": a.structure_id, "category": a.category.level, "rationale": a.rationale, "confidence": a.confidence}
            for a in scene.assessments
        ],
        "distribution": {str(k.level): v for k, v in sorted(scene.distribution.items())},
        "caveats": scene.caveats,
    }
    if scene.mmi is not None:
        doc["mmi"] = f"MMI-{scene.mmi.roman}"
    return "```json\n" + json.dumps(doc, indent=2) + "\n```\n"


def keyword_fallback(text: str, structure_ids: Iterable[str]) -> list[StructureAssessment]:
    """Classify each structure from the first category phrase after its mention."""
    lines = (text or "").splitlines()
    out = []
    for sid in structure_ids:
        pattern = re.compile(r"(?<![\w-])" + re.escape(sid) + r"(?![\w-])", re.IGNORECASE)
        for line in lines:
            m = pattern.search(line)
            if m is None:
                continue
            cat = find_category(line[m.end():]) or find_category(line)
            if cat is not None:
                out.append(StructureAssessment(sid, cat, line.strip(), "low"))
                break
    return out


def prose_distribution(text: str) -> dict[DamageCategory, float]:
    """Percentages stated next to category phrases, e.g. "30% to 40% ... moderately damaged"."""
    dist: dict[DamageCategory, float] = {}
    last: DamageCategory | None = None
    for sentence in re.split(r"(?<=[.!?])\s+|\n", text or ""):
        cat = find_category(sentence)
        if "%" not in sentence:
            last = cat
            continue
        # a bare "this category" points at the category of the previous sentence
        if cat is None and re.search(r"\bth(?:is|at) category\b", sentence, re.I):
            cat = last
        if cat is None or cat in dist:
            continue
        pct = re.search(r"\d+(?:\.\d+)?\s*%(?:\s*(?:to|-|–)\s*\d+(?:\.\d+)?\s*%)?", sentence)
        if pct:
            dist[cat] = parse_fraction(pct.group(0))
    return normalize_distribution(dist)


def parse_inventory(text: str, scene_id: str) -> BaselineInventory:
    doc = extract_json_block(text)
    items: list[InventoryItem] = []
    if doc is not None and isinstance(doc.get("structures"), list):
        seen: set[str] = set()
        for n, s in enumerate(doc["structures"], start=1):
            if not isinstance(s, dict):
                continue
            sid = str(s.get("id") or f"s{n}")
            base, k = sid, 2
            while sid in seen:
                sid, k = f"{base}-{k}", k + 1
            seen.add(sid)
            landmarks = s.get("landmarks") or s.get("landmark_refs") or []
            if isinstance(landmarks, str):
                landmarks = [landmarks]
            items.append(InventoryItem(sid, str(s.get("description", "")), tuple(str(x) for x in landmarks)))
    if not items:
        prose = _FENCE_RE.sub("", text or "").strip()
        items = [InventoryItem("scene", prose)]
    return BaselineInventory(scene_id, tuple(items), text)


# --- phases ---------------------------------------------------------------------------


def select_frames(frames: Sequence[Frame], budget: int = FRAME_BUDGET) -> list[Frame]:
    """Up to ``budget`` frames spaced evenly across the sequence, ends included."""
    n = len(frames)
    if n <= budget:
        return list(frames)
    if budget == 1:
        return [frames[0]]
    picks = sorted({round(i * (n - 1) / (budget - 1)) for i in range(budget)})
    return [frames[i] for i in picks]


def _check_phase(frames: Sequence[Frame], phase: Phase) -> None:
    for f in frames:
        prov = getattr(f, "provenance", None)
        if prov is not None and prov.phase is not phase:
            raise ValueError(f"expected {phase.value}-disaster frames, got a {prov.phase.value} frame")


def _images(frames: Sequence[Frame]) -> list[ImagePart]:
    return [ImagePart(f.pixels) for f in frames]


def run_baseline_phase(session: ChatSession, pre_frames: Sequence[Frame], scene_id: str,
                       prompts: PromptSet | None = None, budget: int = FRAME_BUDGET) -> BaselineInventory:
    if not pre_frames:
        raise EmptyInput("baseline phase needs at least one frame")
    if session.transcript:
        raise ValueError("baseline phase must start on a fresh session")
    _check_phase(pre_frames, Phase.PRE)
    prompts = prompts or PromptSet.load()
    text = prompts.render("baseline", scene_id, BASELINE_SCHEMA)
    reply = send(session, Message("user", (text, *_images(select_frames(pre_frames, budget)))))
    return parse_inventory(reply, scene_id)


def run_comparison_phase(session: ChatSession, inventory: BaselineInventory, post_frames: Sequence[Frame],
                         prompts: PromptSet | None = None, budget: int = FRAME_BUDGET) -> SceneAssessment:
    if not post_frames:
        raise EmptyInput("comparison phase needs at least one frame")
    if not session.transcript:
        raise ValueError("comparison phase must reuse the session that ran the baseline phase")
    _check_phase(post_frames, Phase.POST)
    prompts = prompts or PromptSet.load()
    text = prompts.render("comparison", inventory.scene_id, ASSESSMENT_SCHEMA)
    reply = send(session, Message("user", (text, *_images(select_frames(post_frames, budget)))))

    known = set(inventory.ids)
    flags: list[str] = []
    try:
        parsed = parse_assessment_response(reply)
        assessments = []
        for a in parsed.assessments:
            if a.structure_id not in known:
                a = StructureAssessment(a.structure_id, a.category, a.rationale, "low")
            assessments.append(a)
        distribution, mmi, caveats = parsed.distribution, parsed.mmi, parsed.caveats
    except ParseFailure as exc:
        log.info("scene %s: structured parse failed (%s); using keyword fallback", inventory.scene_id, exc)
        flags.append("keyword_fallback")
        assessments = keyword_fallback(reply, inventory.ids)
        distribution = prose_distribution(reply)
        try:
            mmi = parse_mmi(reply)
        except ValueError:
            mmi = None
        caveats = ""
    return SceneAssessment(
        inventory.scene_id,
        tuple(assessments),
        distribution,
        mmi,
        caveats,
        {"session_ids": [session.session_id]},
        tuple(flags),
    )


def assess_building_pair(session: ChatSession, pre_crop: Frame, post_crop: Frame, building_id: str,
                         scene_id: str = "", prompts: PromptSet | None = None) -> StructureAssessment | None:
    """Classify one building from a pre/post crop pair; ``None`` means unscored."""
    if session.transcript:
        raise ValueError("each building needs a fresh session")
    prompts = prompts or PromptSet.load()
    text = prompts.render("building_pair", scene_id, ASSESSMENT_SCHEMA, building_id)
    reply = send(session, Message("user", (text, ImagePart(pre_crop.pixels), ImagePart(post_crop.pixels))))
    try:
        parsed = parse_assessment_response(reply)
        if not parsed.assessments:
            raise ParseFailure("no structures in response")
        match = next((a for a in parsed.assessments if a.structure_id == building_id), parsed.assessments[0])
        return StructureAssessment(building_id, match.category, match.rationale, match.confidence, building_id)
    except ParseFailure:
        cat = find_category(_FENCE_RE.sub("", reply))
        if cat is None:
            return None
        return StructureAssessment(building_id, cat, reply.strip()[:500], "low", building_id)


def assess_mmi(session: ChatSession, pre_frames: Sequence[Frame], post_frames: Sequence[Frame], scene_id: str,
               prompts: PromptSet | None = None, budget: int = FRAME_BUDGET) -> MmiRank | None:
    """Rank the scene on the MMI scale in a fresh session; ``None`` means unranked."""
    if session.transcript:
        raise ValueError("MMI ranking needs a fresh session")
    _check_phase(pre_frames, Phase.PRE)
    _check_phase(post_frames, Phase.POST)
    prompts = prompts or PromptSet.load()
    parts = (
        prompts.render("mmi", scene_id),
        "BEFORE:", *_images(select_frames(pre_frames, budget)),
        "AFTER:", *_images(select_frames(post_frames, budget)),
    )
    reply = send(session, Message("user", parts))
    try:
        return parse_mmi(reply)
    except (NoMmiFound, ValueError):
        log.warning("scene %s: no parseable MMI rank in response", scene_id)
        return None


def aggregate_mmi(ranks: Iterable[MmiRank]) -> MmiRank:
    """Overall rank across scenes: the maximum."""
    ranks = list(ranks)
    if not ranks:
        raise EmptyInput("no MMI ranks to aggregate")
    return max(ranks)


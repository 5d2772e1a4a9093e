"""End-to-end flows shared by the CLI and the experiment scripts."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from aftermath.enhance import EnhanceError, EnhancementConfig, enhance_pair
from aftermath.ingest import FrameSequence, ScenePair, crop_building
from aftermath.metrics import Prediction
from aftermath.protocol import (
    PromptSet,
    SceneAssessment,
    StructureAssessment,
    aggregate_mmi,
    assess_building_pair,
    assess_mmi,
    run_baseline_phase,
    run_comparison_phase,
)
from aftermath.report import category_shares
from aftermath.taxonomy import MmiRank, map_xbd_to_category
from aftermath.vlm import VlmClient, VlmError

log = logging.getLogger(__name__)


def _provenance(cfg: EnhancementConfig, client: VlmClient, prompts: PromptSet, session_ids) -> dict:
    return {
        "enhancement_backend": cfg.backend,
        "scale": cfg.effective_scale,
        "model_name": client.config.model_name,
        "session_ids": sorted(session_ids),
        "prompt_version": prompts.version,
    }


def assess_scene(pre: FrameSequence, post: FrameSequence, enh: EnhancementConfig, client: VlmClient,
                 prompts: PromptSet, with_mmi: bool = False, repetitions: int = 1,
                 frame_budget: int = 4) -> SceneAssessment:
    """Enhance, inventory the pre frames, compare against the post frames, optionally rank MMI."""
    scene_id = pre.scene_id
    pre_e, post_e = enhance_pair(pre, post, enh)
    session = client.new_session(f"{scene_id}/assess")
    inventory = run_baseline_phase(session, pre_e, scene_id, prompts, frame_budget)
    result = run_comparison_phase(session, inventory, post_e, prompts, frame_budget)
    session_ids = [session.session_id]
    mmi, flags = result.mmi, list(result.flags)
    if with_mmi:
        ranks = []
        for rep in range(repetitions):
            s = client.new_session(f"{scene_id}/mmi-{rep}")
            session_ids.append(s.session_id)
            rank = assess_mmi(s, pre_e, post_e, scene_id, prompts, frame_budget)
            if rank is not None:
                ranks.append(rank)
        if ranks:
            mmi = aggregate_mmi(ranks)
        else:
            flags.append("unranked")
    return SceneAssessment(
        scene_id, result.assessments, result.distribution, mmi, result.caveats,
        _provenance(enh, client, prompts, session_ids), tuple(flags),
    )


@dataclass
class XbdSceneResult:
    scene: SceneAssessment
    predictions: list[Prediction]
    failures: list[str] = field(default_factory=list)


def evaluate_xbd_scene(pair: ScenePair, enh: EnhancementConfig, client: VlmClient, prompts: PromptSet,
                       pad: float = 0.25, workers: int = 1) -> XbdSceneResult:
    """Per-building classification of one labelled scene; failures become unscored predictions."""
    failures: list[str] = []
    buildings = sorted(pair.buildings, key=lambda b: b.building_id)
    try:
        pre_e, post_e = enhance_pair(pair.pre, pair.post, enh)
    except EnhanceError as exc:
        log.error("scene %s: enhancement failed: %s", pair.scene_id, exc)
        failures.append(f"{pair.scene_id}: enhancement failed: {exc}")
        pre_e = post_e = None

    def one(b) -> StructureAssessment | None:
        if pre_e is None:
            return None
        scale = pre_e[0].provenance.scale
        try:
            pre_crop = crop_building(pre_e[0], b, pad, scale)
            post_crop = crop_building(post_e[0], b, pad, scale)
            session = client.new_session(f"{pair.scene_id}/{b.building_id}")
            return assess_building_pair(session, pre_crop, post_crop, b.building_id, pair.scene_id, prompts)
        except (VlmError, ValueError) as exc:
            log.warning("scene %s building %s unscored: %s", pair.scene_id, b.building_id, exc)
            failures.append(f"{pair.scene_id}/{b.building_id}: {exc}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, buildings))

    preds, assessments = [], []
    for b, a in zip(buildings, results):
        truth = map_xbd_to_category(b.truth_label) if b.truth_label is not None else None
        preds.append(Prediction(pair.scene_id, b.building_id, truth, a.category if a else None))
        if a is not None:
            assessments.append(a)
    session_ids = [f"{pair.scene_id}/{b.building_id}" for b, a in zip(buildings, results) if a is not None]
    scene = SceneAssessment(
        pair.scene_id,
        tuple(assessments),
        category_shares(a.category for a in assessments),
        None,
        "Single pre/post image per building; one view per structure.",
        _provenance(enh, client, prompts, session_ids),
        ("unscored",) if any(a is None for a in results) else (),
    )
    return XbdSceneResult(scene, preds, sorted(failures))


@dataclass
class MmiStudy:
    """Ranks per scene, per backend, per repetition."""

    ranks: dict[str, dict[str, list[MmiRank | None]]]

    def scene_rank(self, scene_id: str, backend: str) -> MmiRank | None:
        got = [r for r in self.ranks[scene_id][backend] if r is not None]
        return aggregate_mmi(got) if got else None

    def overall(self, backend: str) -> MmiRank | None:
        got = [self.scene_rank(s, backend) for s in self.ranks]
        got = [r for r in got if r is not None]
        return aggregate_mmi(got) if got else None

    def to_dict(self, backends: list[str]) -> dict:
        def fmt(r):
            return None if r is None else r.roman

        return {
            "scenes": {
                s: {b: {"ranks": [fmt(r) for r in self.ranks[s][b]], "scene_rank": fmt(self.scene_rank(s, b))}
                    for b in backends}
                for s in sorted(self.ranks)
            },
            "overall": {b: fmt(self.overall(b)) for b in backends},
        }

    def render_table(self, backends: list[str]) -> str:
        head = "| Scene | " + " | ".join(backends) + " |"
        lines = [head, "|---|" + "---|" * len(backends)]
        for s in sorted(self.ranks):
            cells = []
            for b in backends:
                reps = "/".join(r.roman if r else "?" for r in self.ranks[s][b])
                agg = self.scene_rank(s, b)
                cells.append(f"{agg.roman if agg else 'unranked'} ({reps})")
            lines.append(f"| {s} | " + " | ".join(cells) + " |")
        lines.append("| **overall** | " + " | ".join(
            str(self.overall(b)) if self.overall(b) else "unranked" for b in backends) + " |")
        return "\n".join(lines) + "\n"


def mmi_study(scenes: list[tuple[FrameSequence, FrameSequence]], enh_configs: dict[str, EnhancementConfig],
              client: VlmClient, prompts: PromptSet, repetitions: int = 1, frame_budget: int = 4) -> MmiStudy:
    """Fresh session for every (scene, backend, repetition); failures leave a ``None`` rank."""
    ranks: dict[str, dict[str, list[MmiRank | None]]] = {}
    for pre, post in sorted(scenes, key=lambda p: p[0].scene_id):
        sid = pre.scene_id
        ranks[sid] = {}
        for backend, enh in enh_configs.items():
            out: list[MmiRank | None] = []
            try:
                pre_e, post_e = enhance_pair(pre, post, enh)
            except EnhanceError as exc:
                log.error("scene %s (%s): enhancement failed: %s", sid, backend, exc)
                ranks[sid][backend] = [None] * repetitions
                continue
            for rep in range(repetitions):
                session = client.new_session(f"{sid}/{backend}/mmi-{rep}")
                try:
                    out.append(assess_mmi(session, pre_e, post_e, sid, prompts, frame_budget))
                except VlmError as exc:
                    log.error("scene %s (%s) rep %d: %s", sid, backend, rep, exc)
                    out.append(None)
            ranks[sid][backend] = out
    return MmiStudy(ranks)

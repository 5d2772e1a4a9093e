"""Confusion matrices and per-class precision / recall / F1 in exact arithmetic."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from aftermath.taxonomy import DamageCategory

CLASSES = tuple(DamageCategory)
UNSCORED = "unscored"

ACCURACY_CAVEAT = (
    "Overall accuracy is dominated by the majority class: when most buildings are "
    "undamaged, labelling everything as no/slight damage already scores high. "
    "Judge performance by the per-class precision, recall and F1 instead."
)


class EmptyMatrix(ValueError):
    pass


class MissingClass(KeyError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[t][p]``: buildings with truth ``t`` predicted as ``p`` (0-based level - 1)."""

    counts: tuple[tuple[int, ...], ...] = ((0,) * 4,) * 4
    unscored: int = 0
    classes: tuple[DamageCategory, ...] = CLASSES

    def __post_init__(self):
        counts = tuple(tuple(int(v) for v in row) for row in self.counts)
        if len(counts) != 4 or any(len(r) != 4 for r in counts):
            raise ValueError("confusion matrix must be 4x4")
        if any(v < 0 for r in counts for v in r) or self.unscored < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def count(self, truth: DamageCategory, predicted: DamageCategory) -> int:
        return self.counts[truth - 1][predicted - 1]

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(4))

    def tp(self, c: DamageCategory) -> int:
        return self.counts[c - 1][c - 1]

    def fp(self, c: DamageCategory) -> int:
        return sum(self.counts[t][c - 1] for t in range(4)) - self.tp(c)

    def fn(self, c: DamageCategory) -> int:
        return sum(self.counts[c - 1]) - self.tp(c)

    def support(self, c: DamageCategory) -> int:
        return sum(self.counts[c - 1])

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        counts = tuple(tuple(a + b for a, b in zip(r1, r2)) for r1, r2 in zip(self.counts, other.counts))
        return ConfusionMatrix(counts, self.unscored + other.unscored)

    def to_dict(self) -> dict:
        return {
            "classes": [c.canonical for c in self.classes],
            "counts": [list(r) for r in self.counts],
            "unscored": self.unscored,
        }


def accumulate(pairs: Iterable[tuple[DamageCategory, DamageCategory | None]]) -> ConfusionMatrix:
    """Tally (truth, predicted) pairs; a predicted ``None``/"unscored" is counted separately."""
    counts = [[0] * 4 for _ in range(4)]
    unscored = 0
    for truth, predicted in pairs:
        if predicted is None or predicted == UNSCORED:
            unscored += 1
            continue
        counts[DamageCategory(truth) - 1][DamageCategory(predicted) - 1] += 1
    return ConfusionMatrix(tuple(map(tuple, counts)), unscored)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def precision(cm: ConfusionMatrix, c: DamageCategory) -> Fraction:
    return _ratio(cm.tp(c), cm.tp(c) + cm.fp(c))


def recall(cm: ConfusionMatrix, c: DamageCategory) -> Fraction:
    return _ratio(cm.tp(c), cm.tp(c) + cm.fn(c))


def f1_from(p, r):
    """Harmonic mean, 0 when both are 0. Exact for Fractions, float otherwise."""
    if p + r == 0:
        return type(p + r)(0)
    return 2 * p * r / (p + r)


def f1(cm: ConfusionMatrix, c: DamageCategory) -> Fraction:
    return f1_from(precision(cm, c), recall(cm, c))


def overall_accuracy(cm: ConfusionMatrix) -> Fraction:
    if cm.total == 0:
        raise EmptyMatrix("no scored buildings")
    return Fraction(cm.trace, cm.total)


@dataclass(frozen=True)
class ClassMetrics:
    category: DamageCategory
    precision: Fraction
    recall: Fraction
    f1: Fraction
    support: int

    def as_floats(self) -> dict:
        return {
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
            "support": self.support,
        }


Deltas = Mapping[DamageCategory, tuple[float, float, float]]


@dataclass(frozen=True)
class EvaluationSummary:
    per_class: tuple[ClassMetrics, ...]
    overall_accuracy: Fraction | None
    matrix: ConfusionMatrix
    accuracy_caveat: str = ACCURACY_CAVEAT
    baseline_deltas: Deltas | None = None

    def with_deltas(self, deltas: Deltas) -> "EvaluationSummary":
        return EvaluationSummary(self.per_class, self.overall_accuracy, self.matrix, self.accuracy_caveat, dict(deltas))

    def to_dict(self) -> dict:
        out = {
            "per_class": {m.category.canonical: m.as_floats() for m in self.per_class},
            "overall_accuracy": None if self.overall_accuracy is None else float(self.overall_accuracy),
            "accuracy_caveat": self.accuracy_caveat,
            "unscored": self.matrix.unscored,
            "confusion_matrix": self.matrix.to_dict(),
            "baseline_deltas": None,
        }
        if self.baseline_deltas is not None:
            out["baseline_deltas"] = {
                c.canonical: {"precision": d[0], "recall": d[1], "f1": d[2]}
                for c, d in sorted(self.baseline_deltas.items())
            }
        return out


def summarize(cm: ConfusionMatrix) -> EvaluationSummary:
    per_class = tuple(
        ClassMetrics(c, precision(cm, c), recall(cm, c), f1(cm, c), cm.support(c)) for c in CLASSES
    )
    acc = overall_accuracy(cm) if cm.total else None
    return EvaluationSummary(per_class, acc, cm)


# --- reference table ---------------------------------------------------------------

Table = Mapping[DamageCategory, Mapping[str, float]]


def load_reference_table(path: str | Path | None = None) -> dict[str, dict]:
    if path is None:
        text = (resources.files("aftermath") / "data" / "table1.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def _as_table(raw: Mapping[str, Mapping[str, float]]) -> dict[DamageCategory, dict[str, float]]:
    table = {}
    for c in CLASSES:
        if c.canonical not in raw:
            raise MissingClass(c.canonical)
        table[c] = {k: float(raw[c.canonical][k]) for k in ("precision", "recall", "f1")}
    return table


def baseline_table(path: str | Path | None = None) -> dict[DamageCategory, dict[str, float]]:
    return _as_table(load_reference_table(path)["baseline"])


def proposed_table(path: str | Path | None = None) -> dict[DamageCategory, dict[str, float]]:
    return _as_table(load_reference_table(path)["proposed"])


def compare_to_baseline(summary: EvaluationSummary | Table, baseline: Table) -> dict[DamageCategory, tuple[float, float, float]]:
    """Per-class (delta precision, delta recall, delta f1) of ``summary`` minus ``baseline``."""
    if isinstance(summary, EvaluationSummary):
        ours = {m.category: {"precision": float(m.precision), "recall": float(m.recall), "f1": float(m.f1)}
                for m in summary.per_class}
    else:
        ours = {DamageCategory(k): v for k, v in summary.items()}
    deltas = {}
    for c in CLASSES:
        if c not in baseline:
            raise MissingClass(c.canonical)
        if c not in ours:
            raise MissingClass(c.canonical)
        deltas[c] = tuple(ours[c][k] - baseline[c][k] for k in ("precision", "recall", "f1"))
    return deltas


def render_table(summary: EvaluationSummary, baseline: Table | None = None) -> str:
    """Plain-text table laid out like the published per-class comparison."""
    head = f"{'Damage Type':<20}"
    if baseline is not None:
        head += f"{'Base P':>9}{'Base R':>9}{'Base F1':>9} |"
    head += f"{'Precision':>10}{'Recall':>9}{'F1':>9}{'Support':>9}"
    lines = [head, "-" * len(head)]
    for m in summary.per_class:
        row = f"{m.category.title:<20}"
        if baseline is not None:
            b = baseline[m.category]
            row += f"{b['precision']:>9.4f}{b['recall']:>9.4f}{b['f1']:>9.4f} |"
        row += f"{float(m.precision):>10.3f}{float(m.recall):>9.3f}{float(m.f1):>9.3f}{m.support:>9d}"
        lines.append(row)
    lines.append("-" * len(head))
    acc = "N/A" if summary.overall_accuracy is None else f"{100 * float(summary.overall_accuracy):.1f}%"
    lines.append(f"{'Overall Accuracy':<20}{acc}")
    lines.append(f"Unscored buildings: {summary.matrix.unscored}")
    return "\n".join(lines) + "\n"


# --- predictions file ----------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    scene: str
    building_id: str
    truth: DamageCategory | None
    predicted: DamageCategory | None  # None == unscored

    def to_json(self) -> str:
        return json.dumps(
            {
                "scene": self.scene,
                "building_id": self.building_id,
                "truth": self.truth.canonical if self.truth is not None else None,
                "predicted": self.predicted.canonical if self.predicted is not None else UNSCORED,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Prediction":
        d = json.loads(line)
        truth = DamageCategory.from_canonical(d["truth"]) if d.get("truth") is not None else None
        pred = None if d["predicted"] == UNSCORED else DamageCategory.from_canonical(d["predicted"])
        return cls(str(d["scene"]), str(d["building_id"]), truth, pred)


def write_predictions(preds: Sequence[Prediction], path: str | Path) -> None:
    Path(path).write_text("".join(p.to_json() + "\n" for p in preds), encoding="utf-8")


def read_predictions(path: str | Path) -> list[Prediction]:
    return [Prediction.from_json(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def matrix_from_predictions(preds: Iterable[Prediction]) -> ConfusionMatrix:
    """Buildings without truth (un-classified) never enter the matrix."""
    return accumulate((p.truth, p.predicted) for p in preds if p.truth is not None)

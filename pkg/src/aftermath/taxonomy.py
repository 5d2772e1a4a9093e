"""Severity scales: the four damage categories, concern levels, MMI ranks, xBD labels."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import total_ordering


class NoCategoryFound(ValueError):
    pass


class NoMmiFound(ValueError):
    pass


class InvalidRoman(ValueError):
    pass


class ConcernLevel(enum.Enum):
    LEAST = "Least"
    MODERATE = "Moderate"
    HIGH = "High"
    SEVERE = "Severe"

    @property
    def label(self) -> str:
        return f"{self.value} Concern"


class DamageCategory(enum.IntEnum):
    NO_SLIGHT_DAMAGE = 1
    MODERATE_DAMAGE = 2
    MAJOR_DAMAGE = 3
    TOTALLY_DESTROYED = 4

    @property
    def level(self) -> int:
        return int(self)

    @property
    def canonical(self) -> str:
        """Bit-exact identifier used in report and prediction files."""
        return self.name.lower()

    @property
    def title(self) -> str:
        return _TITLES[self]

    @property
    def concern(self) -> ConcernLevel:
        return _CONCERN[self]

    def display_string(self) -> str:
        return f"{self.title} - {self.concern.label}"

    @classmethod
    def from_canonical(cls, text: str) -> "DamageCategory":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"not a canonical category string: {text!r}") from None

    @classmethod
    def from_concern(cls, concern: ConcernLevel) -> "DamageCategory":
        return _CATEGORY_BY_CONCERN[concern]


_TITLES = {
    DamageCategory.NO_SLIGHT_DAMAGE: "No/Slight Damage",
    DamageCategory.MODERATE_DAMAGE: "Moderate Damage",
    DamageCategory.MAJOR_DAMAGE: "Major Damage",
    DamageCategory.TOTALLY_DESTROYED: "Totally Destroyed",
}
_CONCERN = dict(zip(DamageCategory, ConcernLevel))
_CATEGORY_BY_CONCERN = {v: k for k, v in _CONCERN.items()}


class XbdLabel(enum.Enum):
    NO_DAMAGE = "no-damage"
    MINOR_DAMAGE = "minor-damage"
    MAJOR_DAMAGE = "major-damage"
    DESTROYED = "destroyed"
    UN_CLASSIFIED = "un-classified"

    @classmethod
    def parse(cls, text: str) -> "XbdLabel":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown xBD damage subtype: {text!r}") from None


_XBD_TO_CATEGORY = {
    XbdLabel.NO_DAMAGE: DamageCategory.NO_SLIGHT_DAMAGE,
    XbdLabel.MINOR_DAMAGE: DamageCategory.MODERATE_DAMAGE,
    XbdLabel.MAJOR_DAMAGE: DamageCategory.MAJOR_DAMAGE,
    XbdLabel.DESTROYED: DamageCategory.TOTALLY_DESTROYED,
}


def map_xbd_to_category(label: XbdLabel) -> DamageCategory | None:
    """Order-preserving map from xBD subtypes; ``None`` marks un-classified (excluded)."""
    return _XBD_TO_CATEGORY.get(label)


# Phrases the VLM is likely to use, category names and concern phrases alike.
# Matching is case-insensitive; the earliest match in the text wins, ties go
# to the longest phrase ("no/slight damage" over "slight damage").
CATEGORY_KEYWORDS: dict[str, DamageCategory] = {
    "no/slight damage": DamageCategory.NO_SLIGHT_DAMAGE,
    "no or slight damage": DamageCategory.NO_SLIGHT_DAMAGE,
    "no damage": DamageCategory.NO_SLIGHT_DAMAGE,
    "slight damage": DamageCategory.NO_SLIGHT_DAMAGE,
    "least concern": DamageCategory.NO_SLIGHT_DAMAGE,
    "moderate damage": DamageCategory.MODERATE_DAMAGE,
    "moderately damaged": DamageCategory.MODERATE_DAMAGE,
    "moderate concern": DamageCategory.MODERATE_DAMAGE,
    "major damage": DamageCategory.MAJOR_DAMAGE,
    "severely damaged": DamageCategory.MAJOR_DAMAGE,
    "high concern": DamageCategory.MAJOR_DAMAGE,
    "totally destroyed": DamageCategory.TOTALLY_DESTROYED,
    "total destruction": DamageCategory.TOTALLY_DESTROYED,
    "destroyed": DamageCategory.TOTALLY_DESTROYED,
    "severe concern": DamageCategory.TOTALLY_DESTROYED,
}

_KEYWORD_RE = re.compile(
    "|".join(re.escape(k) for k in sorted(CATEGORY_KEYWORDS, key=len, reverse=True)),
    re.IGNORECASE,
)


def find_category(text: str) -> DamageCategory | None:
    match = _KEYWORD_RE.search(text)
    if match is None:
        return None
    return CATEGORY_KEYWORDS[match.group(0).lower()]


def parse_category(text: str) -> DamageCategory:
    """Return the first category named in free-form VLM output."""
    if not text or not text.strip():
        raise NoCategoryFound("empty text")
    category = find_category(text)
    if category is None:
        raise NoCategoryFound(f"no damage category keyword in {text[:80]!r}")
    return category


_ROMANS = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII")
_ROMAN_VALUE = {r: i for i, r in enumerate(_ROMANS, start=1)}
_MMI_LABELS = (
    "Not Felt", "Weak", "Weak", "Light", "Moderate", "Strong",
    "Very Strong", "Severe", "Violent", "Extreme", "Extreme", "Extreme",
)


def to_roman(value: int) -> str:
    if not 1 <= value <= 12:
        raise InvalidRoman(f"MMI value out of range: {value}")
    return _ROMANS[value - 1]


def from_roman(numeral: str) -> int:
    try:
        return _ROMAN_VALUE[numeral.strip().upper()]
    except KeyError:
        raise InvalidRoman(f"not an MMI numeral (I..XII): {numeral!r}") from None


@total_ordering
@dataclass(frozen=True)
class MmiRank:
    value: int

    def __post_init__(self):
        if not isinstance(self.value, int) or not 1 <= self.value <= 12:
            raise InvalidRoman(f"MMI value out of range: {self.value!r}")

    def __lt__(self, other):
        if not isinstance(other, MmiRank):
            return NotImplemented
        return self.value < other.value

    @property
    def roman(self) -> str:
        return _ROMANS[self.value - 1]

    @property
    def label(self) -> str:
        return _MMI_LABELS[self.value - 1]

    @classmethod
    def from_roman(cls, numeral: str) -> "MmiRank":
        return cls(from_roman(numeral))

    def __str__(self) -> str:
        return f"MMI-{self.roman} ({self.label})"


_MMI_RE = re.compile(r"(?i:MMI)[- ]([IVXLCDM]+)\b")


def parse_mmi(text: str) -> MmiRank:
    """Extract the first ``MMI-<roman>`` / ``MMI <roman>`` token."""
    match = _MMI_RE.search(text or "")
    if match is None:
        raise NoMmiFound(f"no MMI token in {(text or '')[:80]!r}")
    return MmiRank.from_roman(match.group(1))

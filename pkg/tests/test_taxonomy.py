import pytest
from hypothesis import given
from hypothesis import strategies as st

from aftermath.taxonomy import (
    ConcernLevel,
    DamageCategory,
    InvalidRoman,
    MmiRank,
    NoCategoryFound,
    NoMmiFound,
    XbdLabel,
    map_xbd_to_category,
    parse_category,
    parse_mmi,
    to_roman,
)


def test_exactly_four_categories():
    assert [c.level for c in DamageCategory] == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        DamageCategory(5)
    with pytest.raises(ValueError):
        DamageCategory(0)


def test_concern_bijection():
    pairs = {c: c.concern for c in DamageCategory}
    assert pairs == {
        DamageCategory.NO_SLIGHT_DAMAGE: ConcernLevel.LEAST,
        DamageCategory.MODERATE_DAMAGE: ConcernLevel.MODERATE,
        DamageCategory.MAJOR_DAMAGE: ConcernLevel.HIGH,
        DamageCategory.TOTALLY_DESTROYED: ConcernLevel.SEVERE,
    }
    for c, concern in pairs.items():
        assert DamageCategory.from_concern(concern) is c


def test_canonical_strings():
    assert [c.canonical for c in DamageCategory] == [
        "no_slight_damage", "moderate_damage", "major_damage", "totally_destroyed",
    ]
    for c in DamageCategory:
        assert DamageCategory.from_canonical(c.canonical) is c


@pytest.mark.parametrize(
    "label, expected",
    [
        ("no-damage", DamageCategory.NO_SLIGHT_DAMAGE),
        ("minor-damage", DamageCategory.MODERATE_DAMAGE),
        ("major-damage", DamageCategory.MAJOR_DAMAGE),
        ("destroyed", DamageCategory.TOTALLY_DESTROYED),
        ("un-classified", None),
    ],
)
def test_map_xbd(label, expected):
    assert map_xbd_to_category(XbdLabel.parse(label)) is expected


def test_map_xbd_monotone():
    order = [XbdLabel.NO_DAMAGE, XbdLabel.MINOR_DAMAGE, XbdLabel.MAJOR_DAMAGE, XbdLabel.DESTROYED]
    levels = [map_xbd_to_category(l).level for l in order]
    assert levels == sorted(levels)


def test_xbd_parse_trims_and_ignores_case():
    assert XbdLabel.parse("  Destroyed \n") is XbdLabel.DESTROYED
    with pytest.raises(ValueError):
        XbdLabel.parse("partially-damaged")


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Major Damage - High Concern", DamageCategory.MAJOR_DAMAGE),
        ("no/slight damage", DamageCategory.NO_SLIGHT_DAMAGE),
        ("moderate concern, leaning facades", DamageCategory.MODERATE_DAMAGE),
        ("Totally Destroyed - Severe Concern", DamageCategory.TOTALLY_DESTROYED),
        ("looks like least concern overall, maybe major damage on the left", DamageCategory.NO_SLIGHT_DAMAGE),
    ],
)
def test_parse_category(text, expected):
    assert parse_category(text) is expected


def test_parse_category_failures():
    with pytest.raises(NoCategoryFound):
        parse_category("the roof is blue")
    with pytest.raises(NoCategoryFound):
        parse_category("   ")


@pytest.mark.parametrize("c", list(DamageCategory))
def test_display_string_round_trip(c):
    assert parse_category(c.display_string()) is c


@pytest.mark.parametrize(
    "text, value",
    [
        ("classified the damage as MMI-XI (Extreme)", 11),
        ("MMI-I", 1),
        ("damage spans MMI-VIII to MMI-XI", 8),
        ("estimate: MMI IX", 9),
        ("mmi-vii", None),
    ],
)
def test_parse_mmi(text, value):
    if value is None:
        with pytest.raises(NoMmiFound):
            parse_mmi(text)
    else:
        assert parse_mmi(text).value == value


def test_parse_mmi_errors():
    with pytest.raises(NoMmiFound):
        parse_mmi("the MMI scale was used")
    with pytest.raises(InvalidRoman):
        parse_mmi("MMI-XIII")
    with pytest.raises(InvalidRoman):
        parse_mmi("MMI-IIII")


@given(st.integers(1, 12))
def test_mmi_round_trip(v):
    assert parse_mmi("MMI-" + to_roman(v)).value == v
    assert MmiRank.from_roman(to_roman(v)) == MmiRank(v)


def test_mmi_labels_and_order():
    assert MmiRank(8).label == "Severe"
    assert MmiRank(11).label == "Extreme"
    assert MmiRank(6).label == "Strong"
    assert MmiRank(8) < MmiRank(11)
    assert str(MmiRank(11)) == "MMI-XI (Extreme)"
    with pytest.raises(InvalidRoman):
        MmiRank(13)

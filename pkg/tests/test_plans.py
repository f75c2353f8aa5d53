import pytest

from rainkit.norm import NormKind
from rainkit.plans import PLAN_NAMES, UnknownPlan, get_plan

# 14-slot placement table, transcribed row by row (I = IN, R = RAIN)
TABLE = {
    "RAIN-Decoder-1": "I I I I I I I I I I I I I R",
    "RAIN-Decoder-2": "I I I I I I I I I I I I R R",
    "RAIN-Decoder-3": "I I I I I I I I I I I R R R",
    "RAIN-Decoder-4": "I I I I I I I I I I R R R R",
    "RAIN-Decoder":   "I I I I I I I R R R R R R R",
    "RAIN-Encoder":   "R R R R R R R I I I I I I I",
    "RAIN-1":         "R I I I I I I I I I I I I R",
    "RAIN-2":         "R R I I I I I I I I I I R R",
    "RAIN-3":         "R R R I I I I I I I I R R R",
    "RAIN-4":         "R R R R I I I I I I R R R R",
    "RAIN-5":         "R R R R R I I I I R R R R R",
    "RAIN-6":         "R R R R R R I I R R R R R R",
    "RAIN-Inner-3":   "I I I I R R R R R R I I I I",
    "RAIN-Inner-4":   "I I I R R R R R R R R I I I",
    "RAIN-Inner-5":   "I I R R R R R R R R R R I I",
}
LETTER = {"I": NormKind.IN, "R": NormKind.RAIN}


@pytest.mark.parametrize("name,row", sorted(TABLE.items()))
def test_named_plan_matches_table(name, row):
    plan = get_plan(name, 7)
    assert plan.slots == tuple(LETTER[c] for c in row.split())


@pytest.mark.parametrize("name,kind", [("IN", NormKind.IN), ("BN", NormKind.BN), ("RN", NormKind.RN),
                                       ("RAIN", NormKind.RAIN), ("None", NormKind.NONE)])
def test_uniform_plans_any_depth(name, kind):
    for depth in (3, 5, 7, 8):
        plan = get_plan(name, depth)
        assert len(plan) == 2 * depth and set(plan.slots) == {kind}


def test_all_names_covered():
    assert set(TABLE) | {"None", "IN", "BN", "RN", "RAIN"} == set(PLAN_NAMES)


def test_one_based_indexing():
    plan = get_plan("RAIN-1")
    assert plan[1] is NormKind.RAIN and plan[14] is NormKind.RAIN and plan[2] is NormKind.IN
    with pytest.raises(IndexError):
        plan[0]
    with pytest.raises(IndexError):
        plan[15]


def test_truncation_depth5():
    # outermost 5 encoder slots and outermost 5 decoder slots survive
    assert get_plan("RAIN-Decoder", 5).short() == "IN IN IN IN IN R R R R R"
    assert get_plan("RAIN-Encoder", 5).short() == "R R R R R IN IN IN IN IN"
    assert get_plan("RAIN-1", 5).short() == "R IN IN IN IN IN IN IN IN R"
    assert get_plan("RAIN-Decoder-4", 5).short() == "IN IN IN IN IN IN R R R R"
    assert get_plan("RAIN-Inner-3", 5).short() == "IN IN IN IN R R IN IN IN IN"


@pytest.mark.parametrize("name", sorted(TABLE))
def test_truncation_counts_consistent(name):
    full = get_plan(name, 7).slots
    for d in range(1, 7):
        slots = get_plan(name, d).slots
        assert len(slots) == 2 * d
        assert slots[:d] == full[:d] and slots[d:] == full[14 - d:]


def test_unknown_plan_lists_valid_names():
    with pytest.raises(UnknownPlan) as info:
        get_plan("RAIN-9")
    assert "RAIN-Decoder" in str(info.value)


def test_deeper_than_table_rejected():
    with pytest.raises(ValueError):
        get_plan("RAIN-Decoder", 8)

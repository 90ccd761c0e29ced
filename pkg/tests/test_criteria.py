import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acx.criteria import (
    Abs,
    And,
    Compare,
    Metric,
    MissingMetric,
    Not,
    Number,
    Or,
    evaluate_expr,
    metrics_of,
    parse_criterion,
    to_text,
)
from acx.errors import ParseError, UnknownMetric

METRICS = {
    "pretrend.p": 0.05,
    "pretrend.leads_p": 0.30,
    "balance.max_abs_smd": 0.08,
    "effect.primary": 2.0,
    "effect.alt": 1.2,
    "se.primary": 0.5,
    "threshold.alt_gap": 1.0,
    "threshold.p_cut": 0.10,
    "break.p": 0.004,
    "preperiods.count": 2,
    "overlap.off_support_share": 0.0,
}

# Each truth value below was worked out by hand from METRICS.
FIXTURES = [
    ("pretrend.p < 0.10", True),
    ("pretrend.p < 0.05", False),
    ("pretrend.p <= 0.05", True),
    ("pretrend.leads_p > 0.25", True),
    ("balance.max_abs_smd >= 0.1", False),
    ("abs(effect.alt - effect.primary) > threshold.alt_gap", False),  # |1.2-2.0| = 0.8
    ("abs(effect.primary - effect.alt) > 0.5", True),
    ("abs(effect.alt) == 1.2", True),
    ("pretrend.p < threshold.p_cut", True),
    ("break.p < 0.01 and preperiods.count == 2", True),
    ("break.p < 0.001 or preperiods.count < 2", False),
    ("not pretrend.p < 0.10", False),
    ("not (pretrend.p < 0.10) or break.p < 0.01", True),
    ("not (pretrend.p < 0.10 or break.p < 0.01)", False),
    ("pretrend.p > 0.5 or pretrend.leads_p > 0.5 or balance.max_abs_smd > 0.5", False),
    ("pretrend.p < 0.10 and pretrend.leads_p < 0.10 or break.p < 0.01", True),  # (F) or T
    ("pretrend.p < 0.10 and (pretrend.leads_p < 0.10 or break.p > 0.01)", False),
    ("overlap.off_support_share == 0", True),
    ("effect.primary > -1 and effect.alt > effect.primary", False),
    ("((preperiods.count >= 3))", False),
]


def test_fixture_suite_size():
    assert len(FIXTURES) == 20


@pytest.mark.parametrize("text,expected", FIXTURES)
def test_hand_evaluated_oracle(text, expected):
    assert evaluate_expr(parse_criterion(text), METRICS) is expected


@pytest.mark.parametrize("text", [t for t, _ in FIXTURES])
def test_print_parse_round_trip(text):
    ast = parse_criterion(text)
    printed = to_text(ast)
    assert parse_criterion(printed) == ast
    assert to_text(parse_criterion(printed)) == printed


def test_minimal_comparison_node():
    assert parse_criterion("pretrend.p < 0.10") == Compare("<", Metric("pretrend.p"), Number(0.10))


def test_inline_arithmetic_rejected():
    with pytest.raises(ParseError) as err:
        parse_criterion("abs(effect.alt - effect.primary) > 0.5 * se.primary")
    assert err.value.column == len("abs(effect.alt - effect.primary) > 0.5 ")


def test_not_binds_before_and():
    ast = parse_criterion("not (a.b < 1) and c.d > 2")
    assert ast == And(Not(Compare("<", Metric("a.b"), Number(1.0))), Compare(">", Metric("c.d"), Number(2.0)))


def test_and_binds_before_or_and_left_assoc():
    ast = parse_criterion("a.x < 1 or b.x < 1 and c.x < 1 or d.x < 1")
    a, b, c, d = (Compare("<", Metric(f"{n}.x"), Number(1.0)) for n in "abcd")
    assert ast == Or(Or(a, And(b, c)), d)


@pytest.mark.parametrize(
    "bad",
    ["", "pretrend.p", "pretrend.p <", "0.1 > pretrend.p", "p < 0.1", "(a.b < 1", "a.b < 1)", "a.b < 1 and", "a.b = 1", "a.b < 1 # x"],
)
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        parse_criterion(bad)


def test_unknown_metric_reported():
    with pytest.raises(UnknownMetric) as err:
        parse_criterion("pretrend.p < 0.1 and bogus.metric > 1", namespace=lambda n: n.startswith("pretrend."))
    assert err.value.name == "bogus.metric"


def test_metrics_of_order():
    assert metrics_of(parse_criterion("abs(b.y - a.x) > c.z or a.x < 1")) == ["b.y", "a.x", "c.z"]


def test_missing_metric_raises_for_caller():
    with pytest.raises(MissingMetric):
        evaluate_expr(parse_criterion("nothing.here < 1"), METRICS)


_names = st.sampled_from(["a.x", "b.y", "c.z", "effect.primary"])
_ops = st.sampled_from(["<", "<=", ">", ">=", "=="])
_operand = st.one_of(_names.map(Metric), st.tuples(_names, _names).map(lambda t: Abs(Metric(t[0]), Metric(t[1]))))
_rhs = st.one_of(_operand, st.floats(-1e6, 1e6, allow_nan=False).map(Number))
_cmp = st.builds(Compare, _ops, _operand, _rhs)
_expr = st.recursive(
    _cmp,
    lambda inner: st.one_of(st.builds(Not, inner), st.builds(And, inner, inner), st.builds(Or, inner, inner)),
    max_leaves=12,
)


@settings(max_examples=200, deadline=None)
@given(_expr)
def test_round_trip_property(ast):
    reparsed = parse_criterion(to_text(ast))
    assert reparsed == ast
    assert to_text(reparsed) == to_text(parse_criterion(to_text(reparsed)))

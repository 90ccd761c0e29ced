import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acx.errors import IngestError, NoControlUnits, ParseError, SchemaError
from acx.panel import (
    ProvenanceRecord,
    SchemaDeclaration,
    export_csv,
    group_partition,
    ingest,
    parse_schema,
    serialize_schema,
)

PROV = ProvenanceRecord("analytics team", (), True, "unit-period", {"treated": ("a",), "control": ("a",)})


def _schema(**kw):
    base = dict(
        unit="unit",
        time="time",
        outcome="outcome",
        adoption="adoption",
        covariates=(),
        categorical={},
        calendar="month",
        grid=tuple(range(0, 10)),
        provenance=PROV,
    )
    base.update(kw)
    return SchemaDeclaration(**base)


def test_minimal_panel():
    csv = b"unit,time,outcome,adoption\nu1,0,1.0,never\nu1,1,2.0,never\nu2,0,1.5,1\nu2,1,3.0,1\n"
    p = ingest(csv, _schema())
    assert p.unit_count == 2
    assert list(p.periods) == [0, 1]
    assert p.adoption == (None, 1)


def test_duplicate_unit_time_reports_rows():
    csv = b"unit,time,outcome,adoption\nu1,3,1,never\nu1,3,2,never\nu2,3,1,never\n"
    with pytest.raises(IngestError) as err:
        ingest(csv, _schema())
    [v] = err.value.violations
    assert v.kind == "DuplicateUnitTime"
    assert v.rows == (2, 3)


def test_collects_every_violation():
    csv = (
        b"unit,time,outcome,adoption\n"
        b"u1,0,nan,never\n"  # non-finite
        b"u1,42,1,never\n"  # off grid
        b"u2,1,1,17\n"  # adoption off grid
        b"u3,1,1\n"  # ragged
    )
    with pytest.raises(IngestError) as err:
        ingest(csv, _schema())
    assert err.value.kinds == ["NonFiniteOutcome", "OffGridTime", "OffGridAdoption", "RaggedRow"]


def test_missing_column():
    with pytest.raises(IngestError) as err:
        ingest(b"unit,time,y\nu1,0,1\n", _schema())
    assert err.value.kinds == ["MissingColumn", "MissingColumn"]


def test_missing_outcome_rows_disclosed_not_silent():
    csv = b"unit,time,outcome,adoption\nu1,0,1,never\nu1,1,,never\nu2,0,1,never\n"
    p = ingest(csv, _schema())
    assert p.n_obs == 2
    assert p.missing_outcome_rows == (3,)


def test_categorical_dictionary_enforced():
    schema = _schema(covariates=("region",), categorical={"region": ("north", "south")})
    with pytest.raises(IngestError) as err:
        ingest(b"unit,time,outcome,adoption,region\nu1,0,1,never,west\n", schema)
    assert err.value.kinds == ["UnknownLevel"]


def test_inconsistent_adoption():
    with pytest.raises(IngestError) as err:
        ingest(b"unit,time,outcome,adoption\nu1,0,1,2\nu1,1,1,3\n", _schema())
    assert err.value.kinds == ["InconsistentAdoption"]


def test_schema_round_trip():
    schema = _schema(covariates=("age", "region"), categorical={"region": ("north", "south")}, grid=(0, 2, 4))
    assert parse_schema(serialize_schema(schema)) == schema


def test_schema_requires_explicit_transformations():
    text = serialize_schema(_schema()).decode().replace("transformations = []\n", "")
    with pytest.raises(SchemaError):
        parse_schema(text)


def test_schema_bad_grid():
    text = serialize_schema(_schema()).decode().replace("grid = 0..9", "grid = zero..nine")
    with pytest.raises(ParseError):
        parse_schema(text)


def test_partition():
    csv = "unit,time,outcome,adoption\n" + "".join(
        f"{u},{t},1,{a}\n" for u, a in [("a", "never"), ("b", 5), ("c", 5), ("d", 7)] for t in range(8)
    )
    part = group_partition(ingest(csv, _schema()))
    assert part.control == ("a",)
    assert {g: len(v) for g, v in part.cohorts.items()} == {5: 2, 7: 1}
    assert set(part.treated) | set(part.control) == {"a", "b", "c", "d"}


def test_no_control_units():
    csv = "unit,time,outcome,adoption\n" + "".join(f"{u},{t},1,5\n" for u in "ab" for t in range(8))
    with pytest.raises(NoControlUnits):
        group_partition(ingest(csv, _schema()))


_rows = st.lists(
    st.tuples(
        st.sampled_from(["u1", "u2", "u3", "x9"]),
        st.integers(0, 9),
        st.floats(-1e6, 1e6, allow_nan=False),
    ),
    min_size=1,
    max_size=25,
    unique_by=lambda r: (r[0], r[1]),
)


@settings(max_examples=60, deadline=None)
@given(_rows, st.dictionaries(st.sampled_from(["u1", "u2", "u3", "x9"]), st.sampled_from([None, 2, 5])))
def test_export_ingest_round_trip(rows, adopt):
    lines = ["unit,time,outcome,adoption"]
    for u, t, y in rows:
        a = adopt.get(u)
        lines.append(f"{u},{t},{y!r},{'never' if a is None else a}")
    p = ingest("\n".join(lines) + "\n", _schema())
    out = export_csv(p)
    again = ingest(out, _schema())
    assert export_csv(again) == out
    assert again == p
    expected = sorted((u, t, float(y)) for u, t, y in rows)
    got = sorted((r.unit_id, r.time, r.outcome) for r in p.rows)
    assert got == expected


def test_arrays_read_only():
    p = ingest(b"unit,time,outcome,adoption\nu1,0,1,never\n", _schema())
    with pytest.raises(ValueError):
        p.outcome[0] = 5.0
    assert np.all(p.adoption_by_row == np.inf)

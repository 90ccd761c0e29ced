import dataclasses

import pytest

from acx.contract import (
    DIAGNOSTIC_METHODS,
    Binding,
    MethodKind,
    Policy,
    PolicyKind,
    Requirement,
    builtin_contract,
    contract_digest,
    parse_contract_file,
    serialize_contract,
    splice,
    validate_contract,
    with_overrides,
)
from acx.errors import ParseError, SchemaError, UnsupportedMethod

SUPPORTED = [MethodKind.DiD2x2, MethodKind.DiDStaggered, MethodKind.PSM, MethodKind.ITS]


@pytest.mark.parametrize("method", SUPPORTED)
def test_builtins_valid_and_round_trip(method):
    c = builtin_contract(method)
    assert validate_contract(c) == []
    data = serialize_contract(c)
    assert parse_contract_file(data) == c
    assert serialize_contract(parse_contract_file(data)) == data


@pytest.mark.parametrize("method", SUPPORTED)
def test_builtin_bindings_resolve(method):
    for r in builtin_contract(method).requirements:
        if r.binding.automatic:
            assert method in DIAGNOSTIC_METHODS[r.binding.value]
        assert r.policy.kind in PolicyKind


def test_did_builtin_items():
    c = builtin_contract("DiD2x2")
    ids = [r.id for r in c.requirements]
    for rid in ("unit-aggregation", "pre-periods", "group-definition", "pre-trends"):
        assert rid in ids
    assert c.requirement("pre-periods").policy == Policy.stop()
    assert c.requirement("staggered-timing").policy == Policy.branch("DiDStaggered")


def test_staggered_adds_items():
    ids = {r.id for r in builtin_contract("DiDStaggered").requirements}
    assert {"robust-estimator", "control-cohort"} <= ids


def test_its_has_outcome_consistency():
    ids = {r.id for r in builtin_contract("ITS").requirements}
    assert {"outcome-consistency", "concurrent-interventions"} <= ids


def test_psm_items():
    ids = {r.id for r in builtin_contract("PSM").requirements}
    assert {"observables", "overlap"} <= ids


@pytest.mark.parametrize("method", ["RDD", "IV"])
def test_taxonomy_only(method):
    with pytest.raises(UnsupportedMethod):
        builtin_contract(method)


def test_taxonomy_only_binding_rejected():
    c = dataclasses.replace(
        builtin_contract("DiD2x2"),
        method=MethodKind.RDD,
    )
    kinds = {v.kind for v in validate_contract(c)}
    assert "TaxonomyOnlyMethod" in kinds


def test_duplicate_id():
    c = builtin_contract("DiD2x2")
    dup = dataclasses.replace(c, requirements=c.requirements + (c.requirement("pre-periods"),))
    assert [v.kind for v in validate_contract(dup)] == ["DuplicateId"]


def test_overlap_not_for_did():
    c = builtin_contract("DiD2x2")
    extra = Requirement("overlap", "x", Policy.stop(), Binding.auto("overlap"))
    kinds = [v.kind for v in validate_contract(dataclasses.replace(c, requirements=c.requirements + (extra,)))]
    assert kinds == ["UnknownDiagnosticForMethod"]


def test_unknown_diagnostic_and_dangling_branch():
    c = builtin_contract("DiD2x2")
    extra = (
        Requirement("a", "x", Policy.stop(), Binding.auto("telepathy")),
        Requirement("b", "x", Policy.branch("Nowhere"), Binding.attest("ok?")),
    )
    kinds = sorted(v.kind for v in validate_contract(dataclasses.replace(c, requirements=c.requirements + extra)))
    assert kinds == ["DanglingBranch", "UnknownDiagnostic"]


def test_missing_required_item():
    c = builtin_contract("ITS")
    reqs = tuple(r for r in c.requirements if r.id != "outcome-consistency")
    assert [v.kind for v in validate_contract(dataclasses.replace(c, requirements=reqs))] == ["MissingRequirement"]


def test_unknown_policy_word_is_parse_error():
    data = serialize_contract(builtin_contract("DiD2x2")).replace(b"policy = stop", b"policy = halt", 1)
    with pytest.raises(ParseError) as err:
        parse_contract_file(data)
    assert err.value.line is not None and err.value.column is not None


def test_branch_target_resolves():
    c = parse_contract_file(serialize_contract(builtin_contract("DiD2x2")))
    target = c.requirement("staggered-timing").policy.target
    assert target == "DiDStaggered"
    assert validate_contract(builtin_contract(target)) == []


def test_unknown_key_strict():
    data = serialize_contract(builtin_contract("PSM")) + b"[requirement.extra]\ndescription = d\npolicy = flag\nbinding = attest:q\ncolour = red\n"
    with pytest.raises(SchemaError):
        parse_contract_file(data)


def test_thresholds_round_trip_and_digest():
    c = with_overrides(builtin_contract("DiD2x2"), smd_flag=0.2)
    assert c.threshold("smd_flag") == 0.2
    assert c.threshold("pretrend_alpha") == 0.10
    back = parse_contract_file(serialize_contract(c))
    assert back == c
    assert contract_digest(back) != contract_digest(builtin_contract("DiD2x2"))


def test_bad_threshold_name():
    c = with_overrides(builtin_contract("DiD2x2"), made_up=1.0)
    assert [v.kind for v in validate_contract(c)] == ["UnknownThreshold"]


def test_splice_union_dedup():
    base = builtin_contract("DiD2x2").requirements
    merged = splice(base, "DiDStaggered")
    ids = [r.id for r in merged]
    assert len(ids) == len(set(ids))
    assert ids[: len(base)] == [r.id for r in base]
    assert {"robust-estimator", "control-cohort", "never-treated"} <= set(ids)

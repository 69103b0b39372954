"""Knowledge-base registration invariants and store round-trips."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sciforge.errors import (
    AtomicityViolation,
    CorruptStore,
    DanglingToolRef,
    DuplicateId,
)
from sciforge.knowledge_base import (
    Case,
    KnowledgeBase,
    Modality,
    UnitArchetype,
    UnitBinding,
    load,
    persist,
    reject_multi_modality,
)

from conftest import dataset_of, simple_unit, tabular_tool


def test_first_insert_queryable():
    kb = KnowledgeBase()
    ds = dataset_of([simple_unit("u1", ["a", "b"])], ds_id="ds1")
    version = kb.register_dataset(ds)
    assert version == 1
    assert kb.dataset("ds1") is not None
    assert kb.unit("u1") is not None


def test_duplicate_dataset_id_rejected():
    kb = KnowledgeBase()
    kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds1"))
    with pytest.raises(DuplicateId):
        kb.register_dataset(dataset_of([simple_unit("u2", ["a"])], ds_id="ds1"))


def test_duplicate_unit_id_across_datasets_rejected():
    kb = KnowledgeBase()
    kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds1"))
    with pytest.raises(DuplicateId):
        kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds2"))


def test_multi_modality_unit_is_atomicity_violation():
    with pytest.raises(AtomicityViolation):
        reject_multi_modality(["tabular", "tensor"])
    assert reject_multi_modality(["tabular", "tabular"]) is Modality.TABULAR


def test_description_inventory_must_match_units():
    ds = dataset_of([simple_unit("u1", ["a"])], ds_id="ds1")
    ds.description.modality_inventory = {"tensor": 1}
    kb = KnowledgeBase()
    with pytest.raises(ValueError):
        kb.register_dataset(ds)


def test_case_with_known_tool_accepted():
    kb = KnowledgeBase()
    kb.register_tool(tabular_tool("t1", ["clean"]))
    case = Case(
        id="c1", description="clean the table",
        unit_bindings=[UnitBinding(strategy="clean it", tool_ids=["t1"],
                                   archetype=UnitArchetype(Modality.TABULAR))],
        integration_tools=["t1"],
    )
    assert kb.register_case(case) == 2
    assert kb.case("c1") is not None


def test_case_with_unknown_tool_rejected():
    kb = KnowledgeBase()
    case = Case(
        id="c1", description="x",
        unit_bindings=[UnitBinding(strategy="s", tool_ids=["ghost"],
                                   archetype=UnitArchetype(Modality.TABULAR))],
    )
    with pytest.raises(DanglingToolRef):
        kb.register_case(case)


def test_case_with_empty_bindings_rejected():
    kb = KnowledgeBase()
    with pytest.raises(ValueError):
        kb.register_case(Case(id="c1", description="x", unit_bindings=[]))


def test_descriptor_invariants_enforced():
    from sciforge.knowledge_base import FieldSpec, UnitDescriptor

    bad_missing = UnitDescriptor(
        modality=Modality.TABULAR,
        structural_schema=[FieldSpec("a", "float")],
    )
    bad_missing.quality.missingness = {"a": 1.5}
    with pytest.raises(ValueError):
        bad_missing.validate()

    stray_stats = UnitDescriptor(
        modality=Modality.TABULAR,
        structural_schema=[FieldSpec("a", "float")],
        summary_stats={"ghost": {"min": 0}},
    )
    with pytest.raises(ValueError):
        stray_stats.validate()

    bad_samples = UnitDescriptor(
        modality=Modality.TABULAR,
        structural_schema=[FieldSpec("a", "float"), FieldSpec("b", "float")],
        sample_rows=[["only-one-cell"]],
    )
    with pytest.raises(ValueError):
        bad_samples.validate()

    too_many = UnitDescriptor(
        modality=Modality.TABULAR,
        structural_schema=[FieldSpec("a", "float")],
        sample_rows=[["1"]] * 6,
    )
    with pytest.raises(ValueError):
        too_many.validate()


def test_plan_invariants_enforced():
    from sciforge.intent_parsing import Plan, PlanProvenance, UnitSelection

    kb = KnowledgeBase()
    kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds1"))
    with pytest.raises(ValueError):
        Plan([], "x", PlanProvenance("generated"), 0).validate(kb)
    with pytest.raises(ValueError):
        Plan([UnitSelection("ghost", "s")], "x", PlanProvenance("generated"), 0).validate(kb)
    with pytest.raises(ValueError):
        Plan([UnitSelection("u1", "s")], "x", PlanProvenance("generated"), -1).validate(kb)
    Plan([UnitSelection("u1", "s")], "x", PlanProvenance("generated"), 0).validate(kb)


def test_remove_dataset_bumps_version():
    kb = KnowledgeBase()
    kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds1"))
    assert kb.remove_dataset("ds1") == 2
    assert kb.dataset("ds1") is None
    with pytest.raises(KeyError):
        kb.remove_dataset("ds1")


def test_version_increments_on_every_mutation():
    kb = KnowledgeBase()
    v1 = kb.register_tool(tabular_tool("t1", ["clean"]))
    v2 = kb.register_dataset(dataset_of([simple_unit("u1", ["a"])], ds_id="ds1"))
    v3 = kb.register_case(Case(
        id="c1", description="x",
        unit_bindings=[UnitBinding(strategy="s", tool_ids=["t1"], unit_id="u1")],
    ))
    assert (v1, v2, v3) == (1, 2, 3)


# --- persistence ------------------------------------------------------------

def _populated_kb() -> KnowledgeBase:
    kb = KnowledgeBase()
    for i in range(5):
        kb.register_tool(tabular_tool(f"tool{i}", ["clean"]))
    for i in range(3):
        kb.register_dataset(dataset_of(
            [simple_unit(f"d{i}u{j}", ["a", "b", "date"]) for j in range(2)],
            ds_id=f"ds{i}",
        ))
    for i in range(2):
        kb.register_case(Case(
            id=f"case{i}", description=f"case number {i}",
            unit_bindings=[UnitBinding(strategy="clean", tool_ids=["tool0"],
                                       unit_id=f"d{i}u0")],
            integration_description="as one table",
            integration_tools=["tool1"],
        ))
    return kb


def test_empty_kb_round_trip(tmp_path):
    kb = KnowledgeBase()
    persist(kb, tmp_path / "kb")
    assert load(tmp_path / "kb") == kb


def test_populated_round_trip(tmp_path):
    kb = _populated_kb()
    persist(kb, tmp_path / "kb")
    assert load(tmp_path / "kb") == kb


def test_truncated_store_is_corrupt(tmp_path):
    kb = _populated_kb()
    persist(kb, tmp_path / "kb")
    victim = next((tmp_path / "kb" / "datasets").glob("*.json"))
    victim.write_text(victim.read_text()[: victim.stat().st_size // 2])
    with pytest.raises(CorruptStore):
        load(tmp_path / "kb")


def test_missing_document_is_corrupt(tmp_path):
    kb = _populated_kb()
    persist(kb, tmp_path / "kb")
    next((tmp_path / "kb" / "tools").glob("*.json")).unlink()
    with pytest.raises(CorruptStore):
        load(tmp_path / "kb")


def test_schema_version_mismatch_is_corrupt(tmp_path):
    persist(KnowledgeBase(), tmp_path / "kb")
    index = json.loads((tmp_path / "kb" / "index.json").read_text())
    index["schema_version"] = 99
    (tmp_path / "kb" / "index.json").write_text(json.dumps(index))
    with pytest.raises(CorruptStore):
        load(tmp_path / "kb")


def test_missing_index_is_corrupt(tmp_path):
    with pytest.raises(CorruptStore):
        load(tmp_path / "nowhere")


def test_repersist_prunes_stale_documents(tmp_path):
    kb = _populated_kb()
    persist(kb, tmp_path / "kb")
    kb2 = KnowledgeBase()
    kb2.register_tool(tabular_tool("only", ["clean"]))
    persist(kb2, tmp_path / "kb")
    assert load(tmp_path / "kb") == kb2


# --- property: generated KBs round-trip --------------------------------------

from conftest import knowledge_bases  # noqa: E402


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(kb=knowledge_bases())
def test_round_trip_identity_property(kb, tmp_path_factory):
    root = tmp_path_factory.mktemp("kbstore")
    persist(kb, root)
    reloaded = load(root)
    assert reloaded == kb
    reloaded.check_integrity()

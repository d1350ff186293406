from __future__ import annotations

import json
import random
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from constraint_forge.curriculum import (
    DEFAULT_HYPERPARAMS,
    CurriculumError,
    ReplayPool,
    SftExample,
    allocate_replay,
    bin_by_constraint_count,
    distribute_replay,
    emit_stage_files,
    emit_training_manifest,
    load_stage,
    mix_replay,
    sft_projection,
    stage_id_for,
)
from constraint_forge.judger import PreferencePair


def _pairs(ks):
    return [PreferencePair(f"s{i}", k, f"instr {i}", f"chosen {i}", f"rejected {i}", f"s{i}#k{k}") for i, k in enumerate(ks)]


def _pool(n, budget):
    return ReplayPool(tuple((f"q{i}", f"a{i}") for i in range(n)), budget)


def test_manifest_defaults():
    # reference fine-tuning settings
    assert DEFAULT_HYPERPARAMS == {
        "beta": 0.1,
        "learning_rate": 5.0e-6,
        "epochs": 3,
        "scheduler": "cosine",
        "warmup_ratio": 0.1,
        "grad_accum": 8,
        "adapter": "lora-all",
    }


def test_stage_ids():
    assert stage_id_for([1, 2, 3]) == "k1-3"
    assert stage_id_for([4]) == "k4"


def test_default_plan_binning():
    stages = bin_by_constraint_count(_pairs([1, 4, 2, 5, 3, 3]))
    assert [(s.stage_id, len(s.dpo_triplets)) for s in stages] == [("k1-3", 4), ("k4-5", 2)]
    assert all(not e.is_replay for s in stages for e in s.sft_pairs)
    assert stages[0].sft_pairs == sft_projection(stages[0].dpo_triplets)


def test_plan_given_out_of_order_is_sorted_by_max_k():
    stages = bin_by_constraint_count(_pairs([1, 2, 3]), [[3], [1, 2]])
    assert [s.stage_id for s in stages] == ["k1-2", "k3"]


def test_overlapping_plan_rejected():
    with pytest.raises(CurriculumError, match="overlap"):
        bin_by_constraint_count(_pairs([1]), [[1, 2], [2, 3]])


def test_pair_outside_plan_rejected():
    with pytest.raises(CurriculumError):
        bin_by_constraint_count(_pairs([6]), [[1, 2, 3], [4, 5]])


def test_empty_stage_kept(caplog):
    stages = bin_by_constraint_count(_pairs([1, 2]))
    assert [len(s.dpo_triplets) for s in stages] == [2, 0]
    assert any("k4-5" in r.message for r in caplog.records)


@given(st.lists(st.integers(1, 5), max_size=80))
def test_binning_partitions(ks):
    stages = bin_by_constraint_count(_pairs(ks))
    assert sum(len(s.dpo_triplets) for s in stages) == len(ks)
    for s in stages:
        assert all(s.k_min <= p.k <= s.k_max for p in s.dpo_triplets)
    assert Counter(p.k for s in stages for p in s.dpo_triplets) == Counter(ks)


def test_allocation_frozen_values():
    assert allocate_replay([10595, 6448], 10000) == [6217, 3783]
    assert allocate_replay([1, 1, 1], 10) == [4, 3, 3]  # tie on remainder -> lower index
    assert allocate_replay([5, 0], 3) == [3, 0]
    assert allocate_replay([3, 4], 0) == [0, 0]


def test_allocation_errors():
    with pytest.raises(CurriculumError):
        allocate_replay([], 5)
    with pytest.raises(CurriculumError):
        allocate_replay([0, 0], 5)
    with pytest.raises(CurriculumError):
        allocate_replay([1], -1)


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=6).filter(any), st.integers(0, 50_000))
def test_allocation_properties(sizes, budget):
    alloc = allocate_replay(sizes, budget)
    assert sum(alloc) == budget
    total = sum(sizes)
    for a, s in zip(alloc, sizes):
        assert abs(a - Fraction(budget * s, total)) < 1


def test_replay_pool_formats(fixtures_dir):
    pool = ReplayPool.from_jsonl(fixtures_dir / "replay.jsonl", 10)
    assert len(pool) == 40
    assert pool.examples[0] == ("General instruction 0", "General response 0")
    assert pool.examples[1] == ("General question number 1?", "General answer number 1.")


def test_replay_pool_with_nothing_usable(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps({"conversations": [{"from": "gpt", "value": "x"}]}) + "\n")
    with pytest.raises(CurriculumError):
        ReplayPool.from_jsonl(path)


def test_mix_replay_leaves_dpo_untouched():
    stage = bin_by_constraint_count(_pairs([1, 2]))[0]
    mixed = mix_replay(stage, _pool(10, 10), 4, random.Random(0))
    assert mixed.dpo_triplets == stage.dpo_triplets
    assert mixed.replay_count == 4
    assert sum(e.is_replay for e in mixed.sft_pairs) == 4
    assert stage.replay_count == 0  # original not mutated
    with pytest.raises(CurriculumError):
        mix_replay(stage, _pool(3, 3), 4, random.Random(0))


def test_split_mode_uses_disjoint_slices():
    stages = bin_by_constraint_count(_pairs([1] * 6 + [4] * 4))
    out = distribute_replay(stages, _pool(30, 20), random.Random(1))
    assert [s.replay_count for s in out] == [12, 8]
    drawn = [(e.instruction, e.response) for s in out for e in s.sft_pairs if e.is_replay]
    assert len(drawn) == len(set(drawn)) == 20


def test_per_stage_mode_gives_full_budget_each():
    stages = bin_by_constraint_count(_pairs([1, 4]))
    out = distribute_replay(stages, _pool(30, 7), random.Random(1), per_stage=True)
    assert [s.replay_count for s in out] == [7, 7]


def test_budget_capped_at_pool_size(caplog):
    stages = bin_by_constraint_count(_pairs([1, 4]))
    out = distribute_replay(stages, _pool(5, 100), random.Random(1))
    assert sum(s.replay_count for s in out) == 5
    assert any("below the budget" in r.message for r in caplog.records)


def test_emit_and_reload_stage(tmp_path):
    stages = distribute_replay(bin_by_constraint_count(_pairs([1, 2, 5])), _pool(6, 4), random.Random(2))
    descriptors = [emit_stage_files(s, tmp_path) for s in stages]
    assert descriptors[0]["dpo_path"] == "stage_k1-3/dpo.jsonl"
    assert descriptors[0]["dpo_count"] == 2
    row = json.loads((tmp_path / "stage_k1-3" / "dpo.jsonl").read_text().splitlines()[0])
    assert set(row) == {"instruction", "chosen", "rejected", "k", "seed_id"}
    for s, d in zip(stages, descriptors):
        back = load_stage(d, tmp_path)
        assert back.sft_pairs == s.sft_pairs
        assert back.replay_count == s.replay_count
        assert [(p.seed_id, p.k, p.chosen) for p in back.dpo_triplets] == [
            (p.seed_id, p.k, p.chosen) for p in s.dpo_triplets
        ]


def test_manifest_contents_and_ordering(tmp_path):
    stages = bin_by_constraint_count(_pairs([1, 4]))
    descriptors = [emit_stage_files(s, tmp_path) for s in stages]
    manifest = emit_training_manifest(descriptors, {"epochs": 1}, tmp_path / "m.json", replay={"budget": 0})
    on_disk = json.loads((tmp_path / "m.json").read_text())
    assert on_disk == manifest
    assert manifest["hyperparams"]["epochs"] == 1 and manifest["hyperparams"]["beta"] == 0.1
    assert str(tmp_path) not in json.dumps(manifest)  # relative paths only
    with pytest.raises(CurriculumError, match="ascending"):
        emit_training_manifest(descriptors[::-1], None, tmp_path / "bad.json")


def test_unwritable_target_names_path(tmp_path):
    blocker = tmp_path / "stage_k1-3"
    blocker.write_text("a file, not a directory")
    stage = bin_by_constraint_count(_pairs([1]))[0]
    with pytest.raises(CurriculumError, match="stage_k1-3"):
        emit_stage_files(stage, tmp_path)


def test_sft_example_json():
    assert SftExample("i", "r", True).to_json() == {"instruction": "i", "response": "r", "is_replay": True}

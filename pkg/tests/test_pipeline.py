from __future__ import annotations

import json

from conftest import FIXTURES

from constraint_forge import pipeline
from constraint_forge.config import PipelineConfig
from constraint_forge.mock import PipelineScript
from constraint_forge.provider import ScriptedProvider


def _cfg(tmp_path, **kw) -> PipelineConfig:
    cfg = PipelineConfig.load(FIXTURES / "config.json")
    cfg.output_dir = str(tmp_path / "out")
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_tie_everywhere_gives_empty_stages_with_warnings(tmp_path):
    provider = ScriptedProvider(responder=PipelineScript("tie"))
    summary = pipeline.run_all(_cfg(tmp_path), provider)
    assert summary["pairs"] == 0 and summary["comparisons"] == 15
    assert summary["warnings"] == [
        "stage k1-3 has zero preference pairs",
        "stage k4-5 has zero preference pairs",
    ]
    assert [s["replay_count"] for s in summary["stages"]] == [0, 0]


def test_always_challenger_yields_one_pair_per_step(tmp_path):
    provider = ScriptedProvider(responder=PipelineScript("challenger"))
    summary = pipeline.run_all(_cfg(tmp_path), provider)
    assert summary["pairs"] == 15
    pairs = pipeline.read_pairs(tmp_path / "out")
    chains = {c.seed.id: c for c in pipeline.read_chains(tmp_path / "out")}
    for p in pairs:
        chain = chains[p.seed_id]
        assert p.chosen == chain.steps[p.k - 1].output
        previous = chain.seed_output if p.k == 1 else chain.steps[p.k - 2].output
        assert p.rejected == previous


def test_failed_chain_is_recorded_and_skipped(tmp_path):
    seed_text = "Write a short poem about autumn leaves."
    script = PipelineScript()

    def responder(request):
        if request.user_text == seed_text:
            return None
        return script(request)

    summary = pipeline.run_all(_cfg(tmp_path), ScriptedProvider(responder=responder))
    assert summary["chains"] == 2
    failures = [json.loads(line) for line in (tmp_path / "out" / "chain_failures.jsonl").read_text().splitlines()]
    assert [(f["seed_id"], f["stage"], f["k"]) for f in failures] == [("si-002", "build", 0)]


def test_stale_stage_directories_removed(tmp_path):
    cfg = _cfg(tmp_path)
    pipeline.run_all(cfg)
    cfg.merge_plan = [[1, 2], [3, 4, 5]]
    pipeline.run_all(cfg)
    stage_dirs = sorted(p.name for p in (tmp_path / "out").glob("stage_*"))
    assert stage_dirs == ["stage_k1-2", "stage_k3-5"]


def test_manifest_paths_are_relative(tmp_path):
    pipeline.run_all(_cfg(tmp_path))
    text = (tmp_path / "out" / "training_manifest.json").read_text()
    assert str(tmp_path) not in text

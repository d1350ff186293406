"""Stage runners that read and write the artifact tree under ``output_dir``.

Tree layout::

    seeds.jsonl -> chains.jsonl -> pairs.jsonl + records.jsonl
      -> stage_<id>/{dpo,sft}.jsonl -> training_manifest.json -> reports/
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import analytics
from .builder import ChainBuildError, InstructionChain, build_chain, build_chains, chain_rng, map_ordered
from .config import PipelineConfig
from .constraints import ConstraintSynthesizer, HardConstraintList
from .curriculum import (
    MANIFEST_NAME,
    ReplayPool,
    bin_by_constraint_count,
    distribute_replay,
    emit_stage_files,
    emit_training_manifest,
    stage_dirname,
)
from .jsonl import read_jsonl, write_json, write_jsonl
from .judger import ComparisonRecord, Judger, PreferencePair, TournamentError
from .mock import load_mock_provider
from .provider import HTTPProvider, Provider, ProviderConfig, ResponseCache
from .seeds import SeedInstruction, dedupe, load_seeds, parse_seed, write_seeds

logger = logging.getLogger(__name__)

SEEDS = "seeds.jsonl"
CHAINS = "chains.jsonl"
CHAIN_FAILURES = "chain_failures.jsonl"
PAIRS = "pairs.jsonl"
RECORDS = "records.jsonl"
REPORTS = "reports"
SUMMARY = "run_summary.json"
ERROR_REPORT = "error_report.json"


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause

    def to_json(self) -> dict[str, Any]:
        return {
            "status": "error",
            "stage": self.stage,
            "error_type": type(self.cause).__name__,
            "message": str(self.cause),
        }


def make_provider(cfg: PipelineConfig) -> Provider:
    p = cfg.provider
    cache = ResponseCache(p.cache_dir)
    if p.kind == "mock":
        return load_mock_provider(
            p.mock_script, max_concurrency=p.max_concurrency, max_retries=p.max_retries, cache=cache
        )
    pcfg = ProviderConfig(
        endpoint=p.endpoint,
        api_key_env_name=p.api_key_env_name,
        max_concurrency=p.max_concurrency,
        max_retries=p.max_retries,
        cache_dir=p.cache_dir,
        timeout=p.timeout,
    )
    return HTTPProvider(pcfg, cache=cache)


def _gen(cfg: PipelineConfig) -> dict[str, Any]:
    return dict(model_id=cfg.provider.model_id, temperature=cfg.provider.temperature, max_tokens=cfg.provider.max_tokens)


def make_synthesizer(cfg: PipelineConfig, provider: Provider) -> ConstraintSynthesizer:
    hard = HardConstraintList.from_file(cfg.hard_constraints_path) if cfg.hard_constraints_path else None
    return ConstraintSynthesizer(provider, hard_constraints=hard, policy=cfg.category_policy, **_gen(cfg))


def make_judger(cfg: PipelineConfig, provider: Provider) -> Judger:
    return Judger(provider, cfg.judger_mode, **_gen(cfg))


# -- seeds -------------------------------------------------------------------


def run_seeds(cfg: PipelineConfig) -> list[SeedInstruction]:
    seeds = dedupe(load_seeds(cfg.seeds_path, cfg.sources, min_ref_output_words=cfg.min_ref_output_words))
    seeds = seeds[: cfg.max_seeds]
    write_seeds(seeds, Path(cfg.output_dir) / SEEDS)
    logger.info("kept %d seeds", len(seeds))
    return seeds


def read_seeds(out: Path) -> list[SeedInstruction]:
    return [parse_seed(obj) for obj in read_jsonl(out / SEEDS)]


# -- build / judge -----------------------------------------------------------


def _failure_row(exc: ChainBuildError | TournamentError, stage: str) -> dict[str, Any]:
    return {"seed_id": exc.seed_id, "stage": stage, "k": exc.k, "error": str(exc.cause)}


def _write_chains(out: Path, chains: list[InstructionChain], failures: list[dict[str, Any]]) -> None:
    write_jsonl(out / CHAINS, (c.to_json() for c in chains))
    write_jsonl(out / CHAIN_FAILURES, failures)


def run_build(cfg: PipelineConfig, provider: Provider, seeds: list[SeedInstruction]) -> list[InstructionChain]:
    synth = make_synthesizer(cfg, provider)
    batch = build_chains(
        seeds, cfg.n_constraints, synth, provider,
        rng_seed=cfg.rng_seed, concurrency=cfg.batch_concurrency, **_gen(cfg),
    )
    _write_chains(Path(cfg.output_dir), batch.chains, [_failure_row(e, "build") for e in batch.failures])
    return batch.chains


def read_chains(out: Path) -> list[InstructionChain]:
    return [InstructionChain.from_json(obj) for obj in read_jsonl(out / CHAINS)]


@dataclass
class JudgeResult:
    pairs: list[PreferencePair] = field(default_factory=list)
    records: list[ComparisonRecord] = field(default_factory=list)
    failures: list[dict[str, Any]] = field(default_factory=list)


def _judge_one(judger: Judger, chain: InstructionChain, rng_seed: int):
    try:
        pairs, _winner, records = judger.reorder_chain(chain, chain_rng(rng_seed, chain.seed.id, "judge"))
        return pairs, records, None
    except TournamentError as exc:
        logger.warning("tournament aborted: %s", exc)
        return [], exc.records, _failure_row(exc, "judge")


def _collect(results) -> JudgeResult:
    out = JudgeResult()
    for pairs, records, failure in results:
        out.pairs.extend(pairs)
        out.records.extend(records)
        if failure is not None:
            out.failures.append(failure)
    return out


def _write_judged(out: Path, result: JudgeResult) -> None:
    write_jsonl(out / PAIRS, (p.to_json() for p in result.pairs))
    write_jsonl(out / RECORDS, (r.to_json() for r in result.records))


def run_judge(cfg: PipelineConfig, provider: Provider, chains: list[InstructionChain]) -> JudgeResult:
    judger = make_judger(cfg, provider)
    result = _collect(map_ordered(lambda c: _judge_one(judger, c, cfg.rng_seed), chains, cfg.batch_concurrency))
    _write_judged(Path(cfg.output_dir), result)
    return result


def read_pairs(out: Path) -> list[PreferencePair]:
    return [PreferencePair.from_json(obj) for obj in read_jsonl(out / PAIRS)]


# -- assemble ----------------------------------------------------------------


def _clear_stale_stages(out: Path, keep: set[str]) -> None:
    for d in out.glob("stage_*"):
        if d.is_dir() and d.name not in keep:
            for name in ("dpo.jsonl", "sft.jsonl"):
                (d / name).unlink(missing_ok=True)
            try:
                d.rmdir()
            except OSError:
                logger.warning("leaving non-empty stale directory %s", d)


def run_assemble(cfg: PipelineConfig, pairs: list[PreferencePair]) -> dict[str, Any]:
    out = Path(cfg.output_dir)
    stages = bin_by_constraint_count(pairs, cfg.merge_plan)
    replay_info: dict[str, Any] = {"budget": 0, "per_stage": cfg.replay_per_stage, "pool_size": 0}
    if cfg.replay_path:
        pool = ReplayPool.from_jsonl(cfg.replay_path, cfg.replay_budget)
        rng = random.Random(f"{cfg.rng_seed}:replay")
        stages = distribute_replay(stages, pool, rng, per_stage=cfg.replay_per_stage)
        replay_info.update(budget=min(cfg.replay_budget, len(pool)), pool_size=len(pool))
    _clear_stale_stages(out, {stage_dirname(s.stage_id) for s in stages})
    descriptors = [emit_stage_files(s, out) for s in stages]
    return emit_training_manifest(descriptors, cfg.hyperparams, out / MANIFEST_NAME, replay=replay_info)


# -- reports -----------------------------------------------------------------


def read_manifest(out: Path) -> dict[str, Any]:
    return json.loads((out / MANIFEST_NAME).read_text(encoding="utf-8"))


def run_stats(cfg: PipelineConfig) -> analytics.StatsReport:
    out = Path(cfg.output_dir)
    manifest = read_manifest(out)
    stages = manifest["stages"]
    labels = [
        (s["stage_id"], str(s["k_min"]) if s["k_min"] == s["k_max"] else f"{s['k_min']}-{s['k_max']}")
        for s in stages
    ]
    report = analytics.dataset_stats([out / s["dpo_path"] for s in stages], labels)
    write_json(out / REPORTS / "stats.json", report.to_json())
    (out / REPORTS / "stats.txt").write_text(report.to_text(), encoding="utf-8")
    return report


def run_verbs(cfg: PipelineConfig, top_n: int | None = None) -> list[tuple[str, int]]:
    out = Path(cfg.output_dir)
    instructions = [step.instruction for chain in read_chains(out) for step in chain.steps]
    lexicon = analytics.load_lexicon(cfg.verb_lexicon_path)
    hist = analytics.verb_frequency(instructions, top_n or cfg.top_n_verbs, lexicon)
    write_json(out / REPORTS / "verbs.json", [{"verb": v, "count": c} for v, c in hist])
    (out / REPORTS / "verbs.txt").write_text(analytics.verb_report_text(hist), encoding="utf-8")
    return hist


# -- full run ----------------------------------------------------------------


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_all(cfg: PipelineConfig, provider: Provider | None = None) -> dict[str, Any]:
    """seeds -> chains -> pairs -> stages -> manifest -> reports.

    Each chain is built and then judged in the same worker, so tournaments
    start as soon as their chain is ready.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / ERROR_REPORT).unlink(missing_ok=True)
    provider = provider or _stage("provider", make_provider, cfg)

    seeds = _stage("seeds", run_seeds, cfg)

    synth = make_synthesizer(cfg, provider)
    judger = make_judger(cfg, provider)
    gen = _gen(cfg)

    def one(seed: SeedInstruction):
        try:
            chain = build_chain(seed, cfg.n_constraints, synth, provider, chain_rng(cfg.rng_seed, seed.id), **gen)
        except ChainBuildError as exc:
            logger.warning("skipping chain: %s", exc)
            return None, ([], [], _failure_row(exc, "build"))
        return chain, _judge_one(judger, chain, cfg.rng_seed)

    results = _stage("chains", map_ordered, one, seeds, cfg.batch_concurrency)
    chains = [c for c, _ in results if c is not None]
    judged = _collect(r for _, r in results)
    build_failures = [f for f in judged.failures if f["stage"] == "build"]
    _stage("chains", _write_chains, out, chains, build_failures)
    _stage("judge", _write_judged, out, judged)

    manifest = _stage("assemble", run_assemble, cfg, judged.pairs)
    report = _stage("stats", run_stats, cfg)
    _stage("verbs", run_verbs, cfg)

    warnings = [f"stage {s['stage_id']} has zero preference pairs" for s in manifest["stages"] if s["dpo_count"] == 0]
    summary = {
        "status": "ok",
        "seeds": len(seeds),
        "chains": len(chains),
        "pairs": len(judged.pairs),
        "comparisons": len(judged.records),
        "failures": judged.failures,
        "stages": [
            {k: s[k] for k in ("stage_id", "k_min", "k_max", "dpo_count", "sft_count", "replay_count")}
            for s in manifest["stages"]
        ],
        "stats": report.to_json()["rows"],
        "warnings": warnings,
    }
    for w in warnings:
        logger.warning(w)
    write_json(out / SUMMARY, summary)
    return summary

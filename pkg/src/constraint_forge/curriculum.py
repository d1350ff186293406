"""Curriculum stages: binning by constraint count, replay mixing, file emission."""

from __future__ import annotations

import logging
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .jsonl import read_jsonl, write_json, write_jsonl
from .judger import PreferencePair

logger = logging.getLogger(__name__)

DEFAULT_MERGE_PLAN: list[list[int]] = [[1, 2, 3], [4, 5]]
DEFAULT_REPLAY_BUDGET = 10_000
DEFAULT_HYPERPARAMS: dict[str, Any] = {
    "beta": 0.1,
    "learning_rate": 5.0e-6,
    "epochs": 3,
    "scheduler": "cosine",
    "warmup_ratio": 0.1,
    "grad_accum": 8,
    "adapter": "lora-all",
}
MANIFEST_NAME = "training_manifest.json"


class CurriculumError(ValueError):
    pass


@dataclass(frozen=True)
class SftExample:
    instruction: str
    response: str
    is_replay: bool = False

    def to_json(self) -> dict[str, Any]:
        return {"instruction": self.instruction, "response": self.response, "is_replay": self.is_replay}


@dataclass
class CurriculumStage:
    stage_id: str
    k_min: int
    k_max: int
    dpo_triplets: list[PreferencePair] = field(default_factory=list)
    sft_pairs: list[SftExample] = field(default_factory=list)
    replay_count: int = 0

    @property
    def k_label(self) -> str:
        return str(self.k_min) if self.k_min == self.k_max else f"{self.k_min}-{self.k_max}"


@dataclass(frozen=True)
class ReplayPool:
    examples: tuple[tuple[str, str], ...]
    total_budget: int = DEFAULT_REPLAY_BUDGET

    def __len__(self) -> int:
        return len(self.examples)

    @classmethod
    def from_jsonl(cls, path: str | Path, total_budget: int = DEFAULT_REPLAY_BUDGET) -> ReplayPool:
        """Load ``{"instruction", "response"}`` rows, or ShareGPT-style
        ``{"conversations": [...]}`` rows from which the first human/assistant
        turn is taken."""
        examples = []
        for row in read_jsonl(path):
            pair = _first_turn(row)
            if pair is not None:
                examples.append(pair)
        if not examples:
            raise CurriculumError(f"replay pool {path} has no usable examples")
        return cls(tuple(examples), total_budget)


def _first_turn(row: Mapping[str, Any]) -> tuple[str, str] | None:
    if "instruction" in row and "response" in row:
        if row["instruction"] and row["response"]:
            return row["instruction"], row["response"]
        return None
    turns = row.get("conversations") or []
    for i in range(len(turns) - 1):
        a, b = turns[i], turns[i + 1]
        if a.get("from") in ("human", "user") and b.get("from") in ("gpt", "assistant"):
            if a.get("value") and b.get("value"):
                return a["value"], b["value"]
            return None
    return None


def stage_id_for(ks: Sequence[int]) -> str:
    lo, hi = min(ks), max(ks)
    return f"k{lo}" if lo == hi else f"k{lo}-{hi}"


def sft_projection(triplets: Iterable[PreferencePair]) -> list[SftExample]:
    return [SftExample(p.instruction, p.chosen) for p in triplets]


def bin_by_constraint_count(
    pairs: Iterable[PreferencePair], merge_plan: Sequence[Sequence[int]] = DEFAULT_MERGE_PLAN
) -> list[CurriculumStage]:
    """One stage per k-set in ``merge_plan``, easiest (smallest max k) first."""
    plan = [sorted(set(ks)) for ks in merge_plan]
    if not plan or any(not ks for ks in plan):
        raise CurriculumError("merge plan must contain non-empty k-sets")
    owner: dict[int, int] = {}
    for idx, ks in enumerate(plan):
        for k in ks:
            if k in owner:
                raise CurriculumError(f"merge plan sets overlap at k={k}")
            owner[k] = idx

    order = sorted(range(len(plan)), key=lambda i: max(plan[i]))
    stages = {i: CurriculumStage(stage_id_for(plan[i]), min(plan[i]), max(plan[i])) for i in order}
    count = 0
    for pair in pairs:
        if pair.k not in owner:
            raise CurriculumError(f"pair {pair.record_ref!r} has k={pair.k} outside every merge-plan set")
        stages[owner[pair.k]].dpo_triplets.append(pair)
        count += 1
    result = [stages[i] for i in order]
    for stage in result:
        stage.sft_pairs = sft_projection(stage.dpo_triplets)
        if not stage.dpo_triplets:
            logger.warning("stage %s has zero preference pairs", stage.stage_id)
    if count == 0:
        logger.warning("no preference pairs to bin")
    return result


def allocate_replay(stage_sizes: Sequence[int], budget: int) -> list[int]:
    """Split ``budget`` proportionally to ``stage_sizes`` by largest remainder.

    Each stage gets ``floor(budget * size / total)``; the leftover units go to
    the largest fractional remainders, lower index first on ties. Integer
    arithmetic throughout, so the result is exact.
    """
    if not stage_sizes:
        raise CurriculumError("stage_sizes must be non-empty")
    if budget < 0 or any(s < 0 for s in stage_sizes):
        raise CurriculumError("budget and sizes must be nonnegative")
    total = sum(stage_sizes)
    if budget == 0:
        return [0] * len(stage_sizes)
    if total == 0:
        raise CurriculumError("cannot allocate a positive budget over stages that are all empty")
    quotas = [divmod(budget * s, total) for s in stage_sizes]
    alloc = [q for q, _ in quotas]
    leftover = budget - sum(alloc)
    by_remainder = sorted(range(len(quotas)), key=lambda i: (-quotas[i][1], i))
    for i in by_remainder[:leftover]:
        alloc[i] += 1
    return alloc


def mix_replay(stage: CurriculumStage, pool: ReplayPool, count: int, rng: random.Random) -> CurriculumStage:
    """Return a copy of ``stage`` whose SFT stream gains ``count`` replay
    examples sampled without replacement. DPO triplets are not touched."""
    if count < 0:
        raise CurriculumError("replay count must be nonnegative")
    if count > len(pool):
        raise CurriculumError(f"replay count {count} exceeds pool size {len(pool)}")
    if count == 0:
        return stage
    picked = rng.sample(pool.examples, count)
    extra = [SftExample(instr, resp, is_replay=True) for instr, resp in picked]
    return replace(stage, sft_pairs=stage.sft_pairs + extra, replay_count=stage.replay_count + count)


def distribute_replay(
    stages: Sequence[CurriculumStage],
    pool: ReplayPool,
    rng: random.Random,
    *,
    per_stage: bool = False,
) -> list[CurriculumStage]:
    """Mix replay into every stage.

    In the default split mode the pool budget is divided by
    :func:`allocate_replay` and stages draw from disjoint slices of one
    shuffled pool. With ``per_stage=True`` every stage gets the full budget.
    """
    budget = min(pool.total_budget, len(pool))
    if budget < pool.total_budget:
        logger.warning("replay pool has %d examples, below the budget of %d", len(pool), pool.total_budget)
    if per_stage:
        return [mix_replay(s, pool, budget, rng) for s in stages]
    sizes = [len(s.dpo_triplets) for s in stages]
    if sum(sizes) == 0:
        logger.warning("no preference pairs; replay not mixed")
        return list(stages)
    allocation = allocate_replay(sizes, budget)
    order = list(range(len(pool)))
    rng.shuffle(order)
    out, start = [], 0
    for stage, n in zip(stages, allocation):
        chunk = ReplayPool(tuple(pool.examples[i] for i in order[start : start + n]), n)
        out.append(mix_replay(stage, chunk, n, rng))
        start += n
    return out


def stage_dirname(stage_id: str) -> str:
    return f"stage_{stage_id}"


def emit_stage_files(stage: CurriculumStage, out_dir: str | Path) -> dict[str, Any]:
    """Write ``stage_<id>/dpo.jsonl`` and ``sft.jsonl`` under ``out_dir``.

    Paths in the returned descriptor are relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    rel = Path(stage_dirname(stage.stage_id))
    target = out_dir / rel
    try:
        target.mkdir(parents=True, exist_ok=True)
        if not os.access(target, os.W_OK):
            raise PermissionError(f"directory not writable: {target}")
        n_dpo = write_jsonl(
            target / "dpo.jsonl",
            (
                {"instruction": p.instruction, "chosen": p.chosen, "rejected": p.rejected, "k": p.k, "seed_id": p.seed_id}
                for p in stage.dpo_triplets
            ),
        )
        n_sft = write_jsonl(target / "sft.jsonl", (e.to_json() for e in stage.sft_pairs))
    except OSError as exc:
        raise CurriculumError(f"cannot write stage files under {target}: {exc}") from exc
    return {
        "stage_id": stage.stage_id,
        "k_min": stage.k_min,
        "k_max": stage.k_max,
        "dpo_path": (rel / "dpo.jsonl").as_posix(),
        "sft_path": (rel / "sft.jsonl").as_posix(),
        "dpo_count": n_dpo,
        "sft_count": n_sft,
        "replay_count": stage.replay_count,
    }


def load_stage(descriptor: Mapping[str, Any], root: str | Path) -> CurriculumStage:
    """Inverse of :func:`emit_stage_files`. Triplets come back with an empty
    ``record_ref`` since the DPO file does not carry one."""
    root = Path(root)
    triplets = [
        PreferencePair(r["seed_id"], r["k"], r["instruction"], r["chosen"], r["rejected"], "")
        for r in read_jsonl(root / descriptor["dpo_path"])
    ]
    sft = [SftExample(r["instruction"], r["response"], r["is_replay"]) for r in read_jsonl(root / descriptor["sft_path"])]
    return CurriculumStage(
        descriptor["stage_id"],
        descriptor["k_min"],
        descriptor["k_max"],
        triplets,
        sft,
        sum(e.is_replay for e in sft),
    )


def emit_training_manifest(
    stages: Sequence[Mapping[str, Any]],
    hyperparams: Mapping[str, Any] | None = None,
    path: str | Path = MANIFEST_NAME,
    *,
    replay: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    ordered = list(stages)
    if [s["k_max"] for s in ordered] != sorted(s["k_max"] for s in ordered):
        raise CurriculumError("stages must be ordered by ascending k_max")
    params = dict(DEFAULT_HYPERPARAMS)
    params.update(hyperparams or {})
    manifest: dict[str, Any] = {"stages": [dict(s) for s in ordered], "hyperparams": params}
    if replay is not None:
        manifest["replay"] = dict(replay)
    try:
        write_json(path, manifest)
    except OSError as exc:
        raise CurriculumError(f"cannot write manifest {path}: {exc}") from exc
    return manifest

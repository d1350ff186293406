"""Ranking agreement, reference loss math, dataset statistics and verb counts."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

from .jsonl import iter_jsonl


def _positions(ranking: Sequence[Hashable]) -> dict[Hashable, int]:
    pos = {item: i for i, item in enumerate(ranking)}
    if len(pos) != len(ranking):
        raise ValueError("ranking contains duplicate items")
    return pos


def _check_same_items(r1: Sequence[Hashable], r2: Sequence[Hashable]) -> tuple[dict, dict]:
    p1, p2 = _positions(r1), _positions(r2)
    if p1.keys() != p2.keys():
        raise ValueError("rankings are over different item sets")
    return p1, p2


def _sgn(x: int) -> int:
    return (x > 0) - (x < 0)


def kendall_tau(r1: Sequence[Hashable], r2: Sequence[Hashable]) -> float:
    """Kendall's tau between two tie-free rankings of the same items.

    Each ranking lists items best-first. Every item pair contributes the
    product of the signs of its position differences; the sum is divided by
    the number of pairs.
    """
    p1, p2 = _check_same_items(r1, r2)
    n = len(p1)
    if n < 2:
        raise ValueError("kendall_tau needs at least two items")
    total = sum(_sgn(p1[a] - p1[b]) * _sgn(p2[a] - p2[b]) for a, b in combinations(p1, 2))
    return total / (n * (n - 1) / 2)


def position_consistency(r1: Sequence[Hashable], r2: Sequence[Hashable]) -> float:
    """Fraction of items sitting at the same position in both rankings."""
    p1, p2 = _check_same_items(r1, r2)
    if not p1:
        raise ValueError("rankings are empty")
    return sum(p1[i] == p2[i] for i in p1) / len(p1)


@dataclass(frozen=True)
class LossSample:
    logp_policy_chosen: float
    logp_ref_chosen: float
    logp_policy_rejected: float
    logp_ref_rejected: float

    def __post_init__(self) -> None:
        for name in ("logp_policy_chosen", "logp_ref_chosen", "logp_policy_rejected", "logp_ref_rejected"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")

    def margin(self, beta: float) -> float:
        chosen = self.logp_policy_chosen - self.logp_ref_chosen
        rejected = self.logp_policy_rejected - self.logp_ref_rejected
        return beta * (chosen - rejected)


@dataclass(frozen=True)
class LossValue:
    dpo: float
    sft: float
    total: float


def softplus(x: float) -> float:
    """``log(1 + e**x)`` without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def per_sample_losses(batch: Sequence[LossSample], beta: float) -> list[LossValue]:
    if not beta > 0:
        raise ValueError("beta must be positive")
    out = []
    for s in batch:
        dpo = softplus(-s.margin(beta))  # == -log(sigmoid(margin))
        sft = -s.logp_policy_chosen
        out.append(LossValue(dpo, sft, dpo + sft))
    return out


def dpo_sft_loss(batch: Sequence[LossSample], beta: float = 0.1) -> LossValue:
    """Batch-mean DPO loss, SFT loss on the chosen output, and their sum."""
    if not batch:
        raise ValueError("batch is empty")
    rows = per_sample_losses(batch, beta)
    n = len(rows)
    dpo = math.fsum(r.dpo for r in rows) / n
    sft = math.fsum(r.sft for r in rows) / n
    return LossValue(dpo, sft, dpo + sft)


@dataclass
class StatsRow:
    stage_id: str
    constraints: str
    preference_pairs: int
    avg_instruction_length: float
    empty: bool = False
    errors: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "stage_id": self.stage_id,
            "constraints": self.constraints,
            "preference_pairs": self.preference_pairs,
            "avg_instruction_length": self.avg_instruction_length,
            "empty": self.empty,
            "errors": list(self.errors),
        }


@dataclass
class StatsReport:
    rows: list[StatsRow]

    COLUMNS = ("Curriculum", "# Constraints", "# Preference Pairs", "Avg Length")

    def to_json(self) -> dict[str, Any]:
        return {"columns": ["constraints", "preference_pairs", "avg_instruction_length"],
                "rows": [r.to_json() for r in self.rows]}

    def to_text(self) -> str:
        table = [list(self.COLUMNS)]
        for r in self.rows:
            table.append([r.stage_id, r.constraints, str(r.preference_pairs), f"{r.avg_instruction_length:.1f}"])
        return format_table(table)


def format_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def _stage_file(path: Path) -> Path:
    return path / "dpo.jsonl" if path.is_dir() else path


def dataset_stats(
    stage_files: Sequence[str | Path],
    labels: Sequence[tuple[str, str]] | None = None,
) -> StatsReport:
    """Per-stage pair counts and mean instruction length in whitespace tokens.

    ``stage_files`` are stage directories or ``dpo.jsonl`` paths. ``labels``
    optionally gives ``(stage_id, constraints)`` per file; otherwise they are
    derived from the directory name and the k values seen. Malformed lines are
    reported on the row and skipped.
    """
    rows = []
    for idx, raw in enumerate(stage_files):
        path = _stage_file(Path(raw))
        lengths, ks, errors = [], set(), []
        for lineno, obj, err in iter_jsonl(path):
            if err is not None:
                errors.append(f"{path}:{lineno}: malformed JSON ({err})")
                continue
            instr = obj.get("instruction") if isinstance(obj, dict) else None
            if not isinstance(instr, str):
                errors.append(f"{path}:{lineno}: missing instruction")
                continue
            lengths.append(len(instr.split()))
            if isinstance(obj.get("k"), int):
                ks.add(obj["k"])
        if labels is not None:
            stage_id, constraints = labels[idx]
        else:
            stage_id = path.parent.name.removeprefix("stage_") if path.name == "dpo.jsonl" else path.stem
            constraints = (str(min(ks)) if min(ks) == max(ks) else f"{min(ks)}-{max(ks)}") if ks else "-"
        avg = sum(lengths) / len(lengths) if lengths else 0.0
        rows.append(StatsRow(stage_id, constraints, len(lengths), avg, empty=not lengths, errors=errors))
    return StatsReport(rows)


_TOKEN = re.compile(r"[a-z0-9']+")


def load_lexicon(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("constraint_forge").joinpath("data/verbs.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = (line.strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def verb_frequency(
    instructions: Iterable[str], top_n: int = 20, lexicon: Iterable[str] | None = None
) -> list[tuple[str, int]]:
    """Count leading imperative verbs; most frequent first, ties alphabetical."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    verbs = frozenset(lexicon) if lexicon is not None else load_lexicon()
    counts: Counter[str] = Counter()
    for text in instructions:
        tokens = _TOKEN.findall(text.lower())
        if tokens and tokens[0] in verbs:
            counts[tokens[0]] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]


def verb_report_text(histogram: Sequence[tuple[str, int]]) -> str:
    return format_table([["Verb", "Count"]] + [[v, str(c)] for v, c in histogram])

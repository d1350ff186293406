"""Schema and cross-file checks over a pipeline artifact tree."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .constraints import KINDS, SOFT_SUBTYPES
from .curriculum import DEFAULT_HYPERPARAMS, MANIFEST_NAME
from .jsonl import iter_jsonl
from .judger import combine_both_orders, underlying_winner

FINALS = ("incumbent_wins", "challenger_wins", "tie")
VERDICTS = ("left", "right", "tie")
ORDERS = ("incumbent_first", "challenger_first")


@dataclass(frozen=True)
class Violation:
    file: str
    line: int | None
    message: str

    def __str__(self) -> str:
        where = self.file if self.line is None else f"{self.file}:{self.line}"
        return f"{where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    checked: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, file: Path | str, line: int | None, message: str) -> None:
        self.violations.append(Violation(str(file), line, message))

    def to_json(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "checked": list(self.checked),
            "violations": [{"file": v.file, "line": v.line, "message": v.message} for v in self.violations],
        }

    def to_text(self) -> str:
        lines = [str(v) for v in self.violations]
        lines.append(f"{len(self.checked)} files checked, {len(self.violations)} violations")
        return "\n".join(lines) + "\n"


def _nonempty_str(obj: dict, key: str) -> bool:
    return isinstance(obj.get(key), str) and bool(obj[key].strip())


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _rows(path: Path, report: ValidationReport) -> list[tuple[int, dict]]:
    """Parse a JSONL file, reporting malformed or non-object lines."""
    rows = []
    report.checked.append(str(path))
    for lineno, obj, err in iter_jsonl(path):
        if err is not None:
            report.add(path, lineno, f"malformed JSON line ({err})")
        elif not isinstance(obj, dict):
            report.add(path, lineno, "line is not a JSON object")
        else:
            rows.append((lineno, obj))
    return rows


def _require(report, path, lineno, obj, text_fields=(), int_fields=()) -> bool:
    ok = True
    for key in text_fields:
        if not _nonempty_str(obj, key):
            label = "empty instruction" if key == "instruction" else f"missing or empty {key!r}"
            report.add(path, lineno, label)
            ok = False
    for key in int_fields:
        if not _is_int(obj.get(key)):
            report.add(path, lineno, f"missing or non-integer {key!r}")
            ok = False
    return ok


# -- per-file checks ---------------------------------------------------------


def check_seeds(path: Path, report: ValidationReport) -> None:
    ids = Counter()
    for lineno, obj in _rows(path, report):
        _require(report, path, lineno, obj, ("id", "source", "text"))
        ids[obj.get("id")] += 1
    for seed_id, n in ids.items():
        if n > 1:
            report.add(path, None, f"duplicate seed id {seed_id!r}")


def check_chains(path: Path, report: ValidationReport) -> dict[str, dict]:
    chains = {}
    for lineno, obj in _rows(path, report):
        if not _require(report, path, lineno, obj, ("seed_id", "seed_text", "seed_output"), ("n",)):
            continue
        steps = obj.get("steps")
        if not isinstance(steps, list):
            report.add(path, lineno, "missing 'steps' list")
            continue
        ks = [s.get("k") for s in steps if isinstance(s, dict)]
        if ks != list(range(1, obj["n"] + 1)):
            report.add(path, lineno, f"steps k sequence {ks} is not 1..{obj['n']}")
        previous = obj["seed_text"]
        for step in steps:
            if not isinstance(step, dict):
                report.add(path, lineno, "step is not an object")
                continue
            k = step.get("k")
            for key in ("instruction", "constraint", "output"):
                if not _nonempty_str(step, key):
                    msg = "empty instruction" if key == "instruction" else f"missing or empty {key!r}"
                    report.add(path, lineno, f"step k={k}: {msg}")
            kind, subtype = step.get("category"), step.get("subtype")
            if kind not in KINDS:
                report.add(path, lineno, f"step k={k}: unknown category {kind!r}")
            elif kind == "hard" and not str(subtype).isdigit():
                report.add(path, lineno, f"step k={k}: hard subtype must be a list index")
            elif kind != "hard" and subtype not in SOFT_SUBTYPES[kind]:
                report.add(path, lineno, f"step k={k}: invalid subtype {subtype!r} for {kind}")
            if step.get("instruction") == previous:
                report.add(path, lineno, f"step k={k}: instruction unchanged from previous step")
            previous = step.get("instruction")
        if obj["seed_id"] in chains:
            report.add(path, lineno, f"duplicate chain for seed {obj['seed_id']!r}")
        chains[obj["seed_id"]] = obj
    return chains


def _record_final(obj: dict) -> str | None:
    queries = obj["queries"]
    finals = [underlying_winner(q["presented_order"], q["verdict"]) for q in queries]
    if obj.get("mode") == "single":
        return finals[0] if len(finals) == 1 else None
    if len(finals) != 2:
        return None
    return combine_both_orders(finals[0], finals[1])


def check_records(path: Path, report: ValidationReport) -> dict[str, tuple[int, dict]]:
    records: dict[str, tuple[int, dict]] = {}
    for lineno, obj in _rows(path, report):
        if not _require(report, path, lineno, obj, ("record_id", "seed_id", "instruction", "incumbent", "challenger"), ("k",)):
            continue
        if obj.get("final") not in FINALS:
            report.add(path, lineno, f"invalid final {obj.get('final')!r}")
            continue
        queries = obj.get("queries")
        if not isinstance(queries, list):
            report.add(path, lineno, "missing 'queries' list")
            continue
        bad = [q for q in queries if not isinstance(q, dict) or q.get("presented_order") not in ORDERS or q.get("verdict") not in VERDICTS]
        if bad:
            report.add(path, lineno, "malformed judge query")
            continue
        if not queries:
            if obj["incumbent"] != obj["challenger"] or obj["final"] != "tie":
                report.add(path, lineno, "record has no judge queries")
        else:
            expected = _record_final(obj)
            if expected is None:
                report.add(path, lineno, f"query count {len(queries)} does not fit mode {obj.get('mode')!r}")
            elif expected != obj["final"]:
                report.add(path, lineno, f"final {obj['final']!r} disagrees with queries (expected {expected!r})")
        if obj["record_id"] in records:
            report.add(path, lineno, f"duplicate record_id {obj['record_id']!r}")
        records[obj["record_id"]] = (lineno, obj)
    return records


def check_pairs(path: Path, report: ValidationReport, records: dict[str, tuple[int, dict]] | None) -> list[dict]:
    pairs = []
    seen: dict[tuple[str, int], int] = {}
    for lineno, obj in _rows(path, report):
        ok = _require(report, path, lineno, obj, ("seed_id", "instruction", "chosen", "rejected"), ("k",))
        if _is_int(obj.get("k")) and obj["k"] < 1:
            report.add(path, lineno, f"k={obj['k']} is below 1")
        if obj.get("chosen") is not None and obj.get("chosen") == obj.get("rejected"):
            report.add(path, lineno, "chosen equals rejected")
        ref = obj.get("record_ref")
        if not isinstance(ref, str) or not ref:
            report.add(path, lineno, "missing record_ref")
        elif records is not None:
            if ref not in records:
                report.add(path, lineno, f"record_ref {ref!r} not found in records")
            else:
                _check_pair_against_record(path, lineno, obj, records[ref][1], report)
        key = (obj.get("seed_id"), obj.get("k"))
        if ok:
            if key in seen:
                report.add(path, lineno, f"duplicate k={key[1]} for seed {key[0]!r} (first at line {seen[key]})")
            else:
                seen[key] = lineno
        pairs.append(obj)
    return pairs


def _check_pair_against_record(path, lineno, pair: dict, rec: dict, report: ValidationReport) -> None:
    if rec["k"] != pair.get("k") or rec["seed_id"] != pair.get("seed_id"):
        report.add(path, lineno, "pair and its record disagree on seed_id/k")
    if rec["instruction"] != pair.get("instruction"):
        report.add(path, lineno, "pair instruction differs from its record")
    if rec["final"] == "challenger_wins":
        expected = (rec["challenger"], rec["incumbent"])
    elif rec["final"] == "incumbent_wins":
        expected = (rec["incumbent"], rec["challenger"])
    else:
        report.add(path, lineno, "pair references a tied comparison")
        return
    if (pair.get("chosen"), pair.get("rejected")) != expected:
        report.add(path, lineno, f"pair orientation contradicts record final {rec['final']!r}")


def check_tournament(records: dict[str, tuple[int, dict]], chains: dict[str, dict] | None, path: Path, report) -> None:
    """Each comparison's incumbent must be the previous comparison's survivor."""
    by_seed: dict[str, list[tuple[int, dict]]] = defaultdict(list)
    for lineno, rec in records.values():
        by_seed[rec["seed_id"]].append((lineno, rec))
    for seed_id, recs in by_seed.items():
        recs.sort(key=lambda t: t[1]["k"])
        survivor = chains[seed_id]["seed_output"] if chains and seed_id in chains else None
        for lineno, rec in recs:
            if survivor is not None and rec["incumbent"] != survivor:
                report.add(path, lineno, f"k={rec['k']}: incumbent is not the previous survivor")
            survivor = rec["incumbent"] if rec["final"] == "incumbent_wins" else rec["challenger"]


def check_manifest(root: Path, report: ValidationReport, pairs: list[dict] | None) -> None:
    path = root / MANIFEST_NAME
    report.checked.append(str(path))
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        report.add(path, None, f"malformed JSON ({exc.msg})")
        return
    stages = manifest.get("stages")
    if not isinstance(stages, list):
        report.add(path, None, "manifest has no 'stages' list")
        return
    missing_hp = set(DEFAULT_HYPERPARAMS) - set(manifest.get("hyperparams") or {})
    if missing_hp:
        report.add(path, None, f"hyperparams missing {sorted(missing_hp)}")
    kmax = [s.get("k_max") for s in stages]
    if any(not _is_int(k) for k in kmax) or kmax != sorted(kmax):
        report.add(path, None, f"stages are not sorted by ascending k_max ({kmax})")

    replay = manifest.get("replay") or {}
    total_replay = 0
    stage_pairs: list[tuple[Any, Any]] = []
    ranges: dict[int, str] = {}
    for s in stages:
        sid = s.get("stage_id")
        lo, hi = s.get("k_min"), s.get("k_max")
        if not (_is_int(lo) and _is_int(hi)):
            report.add(path, None, f"stage {sid!r} has no integer k range")
            continue
        for k in range(lo, hi + 1):
            if k in ranges:
                report.add(path, None, f"stages {ranges[k]!r} and {sid!r} overlap at k={k}")
            ranges[k] = sid
        dpo_path, sft_path = root / s.get("dpo_path", ""), root / s.get("sft_path", "")
        if not dpo_path.is_file() or not sft_path.is_file():
            report.add(path, None, f"stage {sid!r} files are missing")
            continue
        dpo = _rows(dpo_path, report)
        sft = _rows(sft_path, report)
        projected = Counter()
        for lineno, row in dpo:
            _require(report, dpo_path, lineno, row, ("instruction", "chosen", "rejected", "seed_id"), ("k",))
            k = row.get("k")
            if _is_int(k) and not lo <= k <= hi:
                report.add(dpo_path, lineno, f"k={k} outside stage {sid} range [{lo},{hi}]")
            if row.get("chosen") == row.get("rejected"):
                report.add(dpo_path, lineno, "chosen equals rejected")
            projected[(row.get("instruction"), row.get("chosen"))] += 1
            stage_pairs.append((row.get("seed_id"), k))
        sft_plain = Counter()
        n_replay = 0
        for lineno, row in sft:
            _require(report, sft_path, lineno, row, ("instruction", "response"))
            if not isinstance(row.get("is_replay"), bool):
                report.add(sft_path, lineno, "missing boolean 'is_replay'")
            elif row["is_replay"]:
                n_replay += 1
            else:
                sft_plain[(row.get("instruction"), row.get("response"))] += 1
        if sft_plain != projected:
            report.add(sft_path, None, f"SFT entries are not the projection of stage {sid} DPO triplets")
        if s.get("dpo_count") != len(dpo):
            report.add(path, None, f"stage {sid}: manifest dpo_count {s.get('dpo_count')} != {len(dpo)} lines")
        if s.get("sft_count") != len(sft):
            report.add(path, None, f"stage {sid}: manifest sft_count {s.get('sft_count')} != {len(sft)} lines")
        if s.get("replay_count") != n_replay:
            report.add(path, None, f"stage {sid}: replay overdraw, {n_replay} replay lines vs manifest replay_count {s.get('replay_count')}")
        total_replay += n_replay
    budget = replay.get("budget")
    if _is_int(budget):
        if replay.get("per_stage"):
            if any(_is_int(s.get("replay_count")) and s["replay_count"] > budget for s in stages):
                report.add(path, None, f"replay overdraw: a stage exceeds the per-stage budget {budget}")
        elif total_replay > budget:
            report.add(path, None, f"replay overdraw: {total_replay} replay examples exceed budget {budget}")

    if pairs is not None:
        expected = Counter((p.get("seed_id"), p.get("k")) for p in pairs)
        if Counter(stage_pairs) != expected:
            report.add(path, None, f"stages hold {len(stage_pairs)} triplets but pairs.jsonl partitions into {len(pairs)}")


# -- entry points ------------------------------------------------------------


def validate_tree(root: str | Path, report: ValidationReport | None = None) -> ValidationReport:
    root = Path(root)
    report = report or ValidationReport()
    if (root / "seeds.jsonl").is_file():
        check_seeds(root / "seeds.jsonl", report)
    chains = check_chains(root / "chains.jsonl", report) if (root / "chains.jsonl").is_file() else None
    records = check_records(root / "records.jsonl", report) if (root / "records.jsonl").is_file() else None
    if records is not None:
        check_tournament(records, chains, root / "records.jsonl", report)
    pairs = check_pairs(root / "pairs.jsonl", report, records) if (root / "pairs.jsonl").is_file() else None
    if (root / MANIFEST_NAME).is_file():
        check_manifest(root, report, pairs)
    if not report.checked:
        report.add(root, None, "no artifacts found")
    return report


def validate_paths(paths: Iterable[str | Path]) -> ValidationReport:
    """Validate artifact trees (directories) and individual artifact files."""
    report = ValidationReport()
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            validate_tree(path, report)
        elif not path.exists():
            report.add(path, None, "path does not exist")
        elif path.name == MANIFEST_NAME:
            check_manifest(path.parent, report, None)
        elif path.name == "pairs.jsonl":
            check_pairs(path, report, None)
        elif path.name == "records.jsonl":
            check_records(path, report)
        elif path.name == "chains.jsonl":
            check_chains(path, report)
        elif path.name == "seeds.jsonl":
            check_seeds(path, report)
        else:
            # dpo/sft files are only meaningful with their manifest.
            for lineno, obj in _rows(path, report):
                if "instruction" in obj:
                    _require(report, path, lineno, obj, ("instruction",))
    return report

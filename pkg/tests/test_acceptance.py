"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

from __future__ import annotations

import functools
import itertools
import json
import math
import random
import shutil
import time
from fractions import Fraction
from pathlib import Path

import mpmath
import pytest
from conftest import FIXTURES, criterion, make_chain

from constraint_forge import cli
from constraint_forge.analytics import LossSample, dataset_stats, dpo_sft_loss, kendall_tau, position_consistency
from constraint_forge.curriculum import allocate_replay, bin_by_constraint_count
from constraint_forge.judger import Judger, PreferencePair
from constraint_forge.mock import parse_judge_prompt
from constraint_forge.provider import ScriptedProvider
from constraint_forge.validate import validate_paths


def _run(out: Path) -> int:
    return cli.main(["run", "--config", str(FIXTURES / "config.json"), "--output-dir", str(out)])


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def golden_tree(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("golden") / "out"
    assert _run(out) == 0
    return out


# -- 1 -----------------------------------------------------------------------


def test_criterion_1_golden_run_is_byte_identical(tmp_path):
    with criterion(1, "golden run: 3 seeds, n=5, mock provider, byte-identical twice, < 10 s"):
        start = time.perf_counter()
        assert _run(tmp_path / "a") == 0
        assert _run(tmp_path / "b") == 0
        elapsed = time.perf_counter() - start
        a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
        assert a.keys() == b.keys()
        assert a == b
        summary = json.loads(a["run_summary.json"])
        assert summary["seeds"] == 3 and summary["chains"] == 3
        assert summary["comparisons"] == 15
        assert elapsed < 10.0


# -- 2 -----------------------------------------------------------------------


def _scripted_judger(finals_by_instruction: dict[str, str], challengers: dict[str, str]) -> Judger:
    """Judge that returns the scripted underlying outcome for each step."""

    def respond(request):
        instruction, a, b = parse_judge_prompt(request.user_text)
        final = finals_by_instruction[instruction]
        if final == "tie":
            return "[[C]]"
        challenger_left = a == challengers[instruction]
        want_left = challenger_left if final == "challenger" else not challenger_left
        return "[[A]]" if want_left else "[[B]]"

    return Judger(ScriptedProvider(responder=respond), "both_orders")


def _hand_trace(outputs: list[str], verdicts: list[str]) -> list[tuple[int, str, str]]:
    o0, o1, o2, o3, o4, o5 = outputs
    challengers = [o1, o2, o3, o4, o5]
    pairs = []
    inc = o0
    k = 1
    for ch, v in zip(challengers, verdicts):
        if v == "challenger":
            pairs.append((k, ch, inc))
            inc = ch
        elif v == "incumbent":
            pairs.append((k, inc, ch))
        else:
            inc = ch
        k += 1
    return pairs


def test_criterion_2_tournament_matches_hand_trace():
    rng = random.Random(2024)
    with criterion(2, "tournament pairs equal the hand-traced incumbent recurrence on 200 sequences"):
        mismatches = 0
        for case in range(200):
            outputs = [f"output {case}-{i}" for i in range(6)]
            instructions = [f"case {case} instruction k={k}" for k in range(6)]
            verdicts = [rng.choice(["challenger", "incumbent", "tie"]) for _ in range(5)]
            chain = make_chain(outputs, f"seed{case}", instructions)
            judger = _scripted_judger(
                dict(zip(instructions[1:], verdicts)), dict(zip(instructions[1:], outputs[1:]))
            )
            pairs, _, _ = judger.reorder_chain(chain)
            got = [(p.k, p.chosen, p.rejected) for p in pairs]
            mismatches += got != _hand_trace(outputs, verdicts)
        assert mismatches == 0


def test_criterion_2_frozen_trace():
    # verdicts (challenger, incumbent, tie, challenger, incumbent), traced by hand
    outputs = ["O0", "O1", "O2", "O3", "O4", "O5"]
    instructions = [f"I{k}" for k in range(6)]
    verdicts = ["challenger", "incumbent", "tie", "challenger", "incumbent"]
    judger = _scripted_judger(dict(zip(instructions[1:], verdicts)), dict(zip(instructions[1:], outputs[1:])))
    pairs, winner, _ = judger.reorder_chain(make_chain(outputs, "s", instructions))
    assert [(p.k, p.chosen, p.rejected) for p in pairs] == [
        (1, "O1", "O0"),
        (2, "O1", "O2"),
        (4, "O4", "O3"),
        (5, "O4", "O5"),
    ]
    assert winner == "O4"


# -- 3 -----------------------------------------------------------------------


def _symmetric_judge(request):
    instruction, a, b = parse_judge_prompt(request.user_text)
    lo, hi = sorted([a, b])
    if len(lo) % 5 == len(hi) % 5:
        return "[[C]]"
    preferred = hi if (len(lo) + len(hi)) % 2 else lo
    return "[[A]]" if preferred == a else "[[B]]"


def test_criterion_3_debias_properties():
    rng = random.Random(33)
    with criterion(3, "both_orders equals single under a slot-invariant judge; always-[[A]] yields ties"):
        symmetric = ScriptedProvider(responder=_symmetric_judge)
        biased = ScriptedProvider(responder=lambda r: "[[A]]")
        for case in range(100):
            inc = "x" * rng.randint(1, 40)
            ch = "y" * rng.randint(1, 40)
            instr = f"instruction {case}"
            both, _ = Judger(symmetric, "both_orders").judge_pair(instr, inc, ch)
            single, _ = Judger(symmetric, "single").judge_pair(instr, inc, ch, random.Random(case))
            assert both == single
            biased_final, record = Judger(biased, "both_orders").judge_pair(instr, inc, ch)
            assert biased_final == "tie"
            assert [q.verdict for q in record.queries] == ["left", "left"]


# -- 4 -----------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _tau_of_relative_order(seq: tuple[int, ...]) -> float:
    n = len(seq)
    inversions = sum(1 for i in range(n) for j in range(i + 1, n) if seq[i] > seq[j])
    pairs = n * (n - 1) // 2
    return float(Fraction(pairs - 2 * inversions, pairs))


def _tau_by_inversions(r1, r2) -> float:
    pos2 = {item: i for i, item in enumerate(r2)}
    return _tau_of_relative_order(tuple(pos2[item] for item in r1))


def test_criterion_4_metric_oracles():
    with criterion(4, "kendall_tau / position_consistency match exhaustive enumeration for n <= 6"):
        for n in range(2, 7):
            items = list(range(n))
            perms = list(itertools.permutations(items))
            for r1 in perms:
                for r2 in perms:
                    assert abs(kendall_tau(r1, r2) - _tau_by_inversions(r1, r2)) <= 1e-12
                    fixed = sum(a == b for a, b in zip(r1, r2))
                    assert abs(position_consistency(r1, r2) - fixed / n) <= 1e-12
        r = ["a", "b", "c", "d"]
        assert kendall_tau(r, r) == 1.0 and position_consistency(r, r) == 1.0
        assert kendall_tau(r, r[::-1]) == -1.0
        assert abs(kendall_tau(r, ["b", "a", "c", "d"]) - 2 / 3) <= 1e-12


# -- 5 -----------------------------------------------------------------------


def _mp_loss(s: LossSample, beta: float) -> mpmath.mpf:
    with mpmath.workdps(50):
        delta = mpmath.mpf(beta) * (
            (mpmath.mpf(s.logp_policy_chosen) - mpmath.mpf(s.logp_ref_chosen))
            - (mpmath.mpf(s.logp_policy_rejected) - mpmath.mpf(s.logp_ref_rejected))
        )
        return -mpmath.log(1 / (1 + mpmath.exp(-delta))) - mpmath.mpf(s.logp_policy_chosen)


def test_criterion_5_loss_math():
    rng = random.Random(55)
    with criterion(5, "dpo_sft_loss matches a 50-digit evaluation; ln 2 at zero margin; monotone"):
        for _ in range(1000):
            s = LossSample(*(rng.uniform(-300.0, 0.0) for _ in range(4)))
            beta = rng.choice([0.05, 0.1, 0.5, 1.0])
            got = dpo_sft_loss([s], beta).total
            assert abs(got - float(_mp_loss(s, beta))) <= 1e-10
        zero = dpo_sft_loss([LossSample(0.0, 0.0, 0.0, 0.0)], 0.1)
        assert abs(zero.dpo - math.log(2)) <= 1e-12
        grid_rng = random.Random(5)
        grid = sorted({grid_rng.uniform(-40, 40) for _ in range(500)} | {-40 + 0.25 * i for i in range(321)})
        losses = [dpo_sft_loss([LossSample(d, 0.0, 0.0, 0.0)], 1.0).dpo for d in grid]
        assert all(a > b for a, b in zip(losses, losses[1:]))


# -- 6 -----------------------------------------------------------------------


def _rational_largest_remainder(sizes: list[int], budget: int) -> list[int]:
    total = sum(sizes)
    exact = [Fraction(budget * s, total) for s in sizes]
    base = [math.floor(x) for x in exact]
    rest = budget - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


def test_criterion_6_replay_allocation():
    with criterion(6, "replay allocation [10595, 6448] / 10000 -> [6217, 3783]"):
        sizes, budget = [10595, 6448], 10000
        alloc = allocate_replay(sizes, budget)
        assert alloc == [6217, 3783]
        assert sum(alloc) == budget
        assert alloc == _rational_largest_remainder(sizes, budget)
        for a, s in zip(alloc, sizes):
            assert abs(a - Fraction(budget * s, sum(sizes))) < 1


# -- 7 -----------------------------------------------------------------------


def test_criterion_7_curriculum_partition():
    rng = random.Random(77)
    with criterion(7, "stage counts partition the pairs; ascending k_max; default easy/hard split"):
        for case in range(200):
            pairs = [
                PreferencePair(f"s{i}", rng.randint(1, 5), f"instr {i}", f"c{i}", f"r{i}", f"s{i}#k")
                for i in range(rng.randint(0, 60))
            ]
            stages = bin_by_constraint_count(pairs)
            assert sum(len(s.dpo_triplets) for s in stages) == len(pairs)
            assert [s.k_max for s in stages] == sorted(s.k_max for s in stages)
            assert [(s.stage_id, s.k_min, s.k_max) for s in stages] == [("k1-3", 1, 3), ("k4-5", 4, 5)]
            easy, hard = stages
            assert all(1 <= p.k <= 3 for p in easy.dpo_triplets)
            assert all(4 <= p.k <= 5 for p in hard.dpo_triplets)


# -- 8 -----------------------------------------------------------------------


def test_criterion_8_stats_fidelity(tmp_path):
    rng = random.Random(88)
    with criterion(8, "dataset_stats matches direct recomputation on a 5-stage tree"):
        expected = []
        dirs = []
        for k in range(1, 6):
            d = tmp_path / f"stage_k{k}"
            d.mkdir()
            rows = []
            for i in range(rng.randint(1, 30)):
                words = " ".join(f"w{j}" for j in range(rng.randint(1, 60)))
                rows.append({"instruction": words, "chosen": "c", "rejected": "r", "k": k, "seed_id": f"s{i}"})
            (d / "dpo.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
            lengths = [len(r["instruction"].split()) for r in rows]
            expected.append((f"k{k}", str(k), len(rows), float(Fraction(sum(lengths), len(lengths)))))
            dirs.append(d)
        report = dataset_stats(dirs)
        got = [(r.stage_id, r.constraints, r.preference_pairs, r.avg_instruction_length) for r in report.rows]
        assert got == expected
        assert report.to_json()["columns"] == ["constraints", "preference_pairs", "avg_instruction_length"]
        header = report.to_text().splitlines()[0].split("  ")
        assert [h.strip() for h in header if h.strip()][1:] == ["# Constraints", "# Preference Pairs", "Avg Length"]


# -- 9 -----------------------------------------------------------------------


def _edit_jsonl(path: Path, lineno: int, edit) -> None:
    lines = path.read_text().splitlines()
    obj = json.loads(lines[lineno - 1])
    edit(obj)
    lines[lineno - 1] = json.dumps(obj)
    path.write_text("\n".join(lines) + "\n")


def _edit_manifest(root: Path, edit) -> None:
    path = root / "training_manifest.json"
    manifest = json.loads(path.read_text())
    edit(manifest)
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def _append_line(path: Path, text: str) -> None:
    with path.open("a") as fh:
        fh.write(text + "\n")


def _duplicate_first_pair(root):
    first = (root / "pairs.jsonl").read_text().splitlines()[0]
    _append_line(root / "pairs.jsonl", first)


def _first_replay_free_sft(root) -> int:
    for i, line in enumerate((root / "stage_k1-3" / "sft.jsonl").read_text().splitlines(), 1):
        if not json.loads(line)["is_replay"]:
            return i
    raise AssertionError("no projected sft line")


CORRUPTIONS = {
    "duplicate k": (_duplicate_first_pair, "duplicate k="),
    "chosen=rejected": (
        lambda r: _edit_jsonl(r / "pairs.jsonl", 1, lambda o: o.update(chosen=o["rejected"])),
        "chosen equals rejected",
    ),
    "missing record_ref": (
        lambda r: _edit_jsonl(r / "pairs.jsonl", 2, lambda o: o.pop("record_ref")),
        "missing record_ref",
    ),
    "out-of-range k": (
        lambda r: _edit_jsonl(r / "stage_k1-3" / "dpo.jsonl", 1, lambda o: o.update(k=5)),
        "outside stage k1-3",
    ),
    "broken SFT projection": (
        lambda r: _edit_jsonl(
            r / "stage_k1-3" / "sft.jsonl", _first_replay_free_sft(r), lambda o: o.update(response="tampered")
        ),
        "not the projection",
    ),
    "malformed JSON line": (lambda r: _append_line(r / "pairs.jsonl", '{"seed_id": "x", '), "malformed JSON"),
    "unsorted stages": (lambda r: _edit_manifest(r, lambda m: m["stages"].reverse()), "not sorted"),
    "replay overdraw": (lambda r: _edit_manifest(r, lambda m: m["replay"].update(budget=1)), "replay overdraw"),
    "empty instruction": (
        lambda r: _edit_jsonl(r / "stage_k4-5" / "dpo.jsonl", 1, lambda o: o.update(instruction="")),
        "empty instruction",
    ),
    "manifest/stage count mismatch": (
        lambda r: _edit_manifest(r, lambda m: m["stages"][0].update(dpo_count=m["stages"][0]["dpo_count"] + 1)),
        "dpo_count",
    ),
}


def test_criterion_9_validation_soundness(golden_tree, tmp_path, capsys):
    with criterion(9, "validate passes run output and flags all 10 corruption classes"):
        assert validate_paths([golden_tree]).ok
        assert cli.main(["validate", str(golden_tree)]) == 0
        missed = []
        for name, (corrupt, needle) in CORRUPTIONS.items():
            copy = tmp_path / name.replace(" ", "_").replace("/", "_")
            shutil.copytree(golden_tree, copy)
            corrupt(copy)
            report = validate_paths([copy])
            messages = [str(v) for v in report.violations]
            if report.ok or not any(needle in m for m in messages):
                missed.append((name, messages))
            assert cli.main(["validate", str(copy)]) == 1
        capsys.readouterr()
        assert not missed, missed

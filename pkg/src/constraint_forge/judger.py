"""Incumbent-versus-challenger judging over an instruction chain."""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from typing import Any, Literal

from . import prompts
from .builder import InstructionChain
from .provider import DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE, ChatRequest, Provider

logger = logging.getLogger(__name__)

Verdict = Literal["left", "right", "tie"]
Final = Literal["incumbent_wins", "challenger_wins", "tie"]
Mode = Literal["single", "both_orders"]
Order = Literal["incumbent_first", "challenger_first"]

MODES = ("single", "both_orders")
_MARKER = re.compile(r"\[\[([ABC])\]\]")
_MARKER_TO_VERDICT: dict[str, Verdict] = {"A": "left", "B": "right", "C": "tie"}


class UnparseableVerdict(ValueError):
    pass


class TournamentError(Exception):
    """Provider failure mid-tournament. Holds whatever was judged before it."""

    def __init__(self, seed_id: str, k: int, cause: BaseException, pairs, records):
        super().__init__(f"tournament for {seed_id!r} failed at step {k}: {cause}")
        self.seed_id = seed_id
        self.k = k
        self.cause = cause
        self.pairs = pairs
        self.records = records


@dataclass
class JudgeQuery:
    presented_order: Order
    raw_text: str
    verdict: Verdict

    def to_json(self) -> dict[str, Any]:
        return {"presented_order": self.presented_order, "raw_text": self.raw_text, "verdict": self.verdict}


@dataclass
class ComparisonRecord:
    k: int
    instruction: str
    incumbent: str
    challenger: str
    queries: list[JudgeQuery]
    final: Final
    record_id: str = ""
    seed_id: str = ""
    mode: Mode = "both_orders"
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "seed_id": self.seed_id,
            "k": self.k,
            "mode": self.mode,
            "instruction": self.instruction,
            "incumbent": self.incumbent,
            "challenger": self.challenger,
            "queries": [q.to_json() for q in self.queries],
            "final": self.final,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> ComparisonRecord:
        return cls(
            k=obj["k"],
            instruction=obj["instruction"],
            incumbent=obj["incumbent"],
            challenger=obj["challenger"],
            queries=[JudgeQuery(**q) for q in obj["queries"]],
            final=obj["final"],
            record_id=obj.get("record_id", ""),
            seed_id=obj.get("seed_id", ""),
            mode=obj.get("mode", "both_orders"),
            warnings=list(obj.get("warnings", [])),
        )


@dataclass(frozen=True)
class PreferencePair:
    seed_id: str
    k: int
    instruction: str
    chosen: str
    rejected: str
    record_ref: str

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.chosen == self.rejected:
            raise ValueError("chosen equals rejected")

    def to_json(self) -> dict[str, Any]:
        return {
            "seed_id": self.seed_id,
            "k": self.k,
            "instruction": self.instruction,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "record_ref": self.record_ref,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> PreferencePair:
        return cls(obj["seed_id"], obj["k"], obj["instruction"], obj["chosen"], obj["rejected"], obj["record_ref"])


def build_judger_prompt(
    instruction: str,
    out_a: str,
    out_b: str,
    *,
    model_id: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    system_text: str = "",
) -> ChatRequest:
    if not (instruction and out_a and out_b):
        raise ValueError("instruction and both outputs must be non-empty")
    return ChatRequest(
        user_text=prompts.fill_judge(instruction, out_a, out_b),
        system_text=system_text,
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )


def parse_verdict(raw: str) -> Verdict:
    """Map the last ``[[A]]``/``[[B]]``/``[[C]]`` marker to left/right/tie."""
    markers = _MARKER.findall(raw)
    if not markers:
        raise UnparseableVerdict("no [[A]]/[[B]]/[[C]] marker in judge reply")
    return _MARKER_TO_VERDICT[markers[-1]]


def underlying_winner(order: Order, verdict: Verdict) -> Final:
    """Translate a slot verdict into which output won."""
    if verdict == "tie":
        return "tie"
    incumbent_in_left = order == "incumbent_first"
    if (verdict == "left") == incumbent_in_left:
        return "incumbent_wins"
    return "challenger_wins"


def combine_both_orders(first: Final, second: Final) -> Final:
    """A winner stands only when both presentations name the same output."""
    if first == second:
        return first
    return "tie"


class Judger:
    """Runs pairwise comparisons against a provider.

    ``mode="both_orders"`` asks twice with the slots swapped; ``"single"``
    asks once with a coin-flip presentation order drawn from ``rng``.
    """

    def __init__(
        self,
        provider: Provider,
        mode: Mode = "both_orders",
        *,
        model_id: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown judger mode {mode!r}")
        self.provider = provider
        self.mode = mode
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens

    def _ask(self, instruction: str, left: str, right: str, warnings: list[str]) -> tuple[str, Verdict]:
        gen = dict(model_id=self.model_id, temperature=self.temperature, max_tokens=self.max_tokens)
        raw = self.provider.complete(build_judger_prompt(instruction, left, right, **gen)).text
        try:
            return raw, parse_verdict(raw)
        except UnparseableVerdict:
            pass
        retry = build_judger_prompt(instruction, left, right, system_text=prompts.JUDGE_RETRY_NOTE, **gen)
        raw = self.provider.complete(retry).text
        try:
            return raw, parse_verdict(raw)
        except UnparseableVerdict:
            warnings.append("unparseable verdict after reprompt; counted as tie")
            logger.warning("unparseable judge verdict after reprompt; counting as tie")
            return raw, "tie"

    def _query(self, instruction, incumbent, challenger, order: Order, warnings) -> JudgeQuery:
        if order == "incumbent_first":
            raw, verdict = self._ask(instruction, incumbent, challenger, warnings)
        else:
            raw, verdict = self._ask(instruction, challenger, incumbent, warnings)
        return JudgeQuery(order, raw, verdict)

    def judge_pair(
        self, instruction: str, incumbent: str, challenger: str, rng: random.Random | None = None
    ) -> tuple[Final, ComparisonRecord]:
        if not (instruction and incumbent and challenger):
            raise ValueError("instruction and both outputs must be non-empty")
        warnings: list[str] = []
        record = ComparisonRecord(0, instruction, incumbent, challenger, [], "tie", mode=self.mode, warnings=warnings)
        if incumbent == challenger:
            # Nothing to prefer; no pair may be built from identical texts.
            warnings.append("identical outputs; not judged")
            return "tie", record

        if self.mode == "single":
            rng = rng or random.Random(0)
            order: Order = "incumbent_first" if rng.random() < 0.5 else "challenger_first"
            q = self._query(instruction, incumbent, challenger, order, warnings)
            record.queries = [q]
            record.final = underlying_winner(q.presented_order, q.verdict)
        else:
            q1 = self._query(instruction, incumbent, challenger, "incumbent_first", warnings)
            q2 = self._query(instruction, incumbent, challenger, "challenger_first", warnings)
            record.queries = [q1, q2]
            record.final = combine_both_orders(
                underlying_winner(q1.presented_order, q1.verdict),
                underlying_winner(q2.presented_order, q2.verdict),
            )
        return record.final, record

    def reorder_chain(
        self, chain: InstructionChain, rng: random.Random | None = None
    ) -> tuple[list[PreferencePair], str, list[ComparisonRecord]]:
        """Walk k = 1..n comparing the incumbent (initially the seed output)
        with each new output. A decisive verdict yields a pair and keeps the
        winner as incumbent; a tie yields no pair and promotes the challenger.
        """
        if not chain.complete:
            raise ValueError(f"chain {chain.seed.id!r} is incomplete")
        seed_id = chain.seed.id
        incumbent = chain.seed_output
        pairs: list[PreferencePair] = []
        records: list[ComparisonRecord] = []
        for step in chain.steps:
            try:
                final, record = self.judge_pair(step.instruction, incumbent, step.output, rng)
            except Exception as exc:
                raise TournamentError(seed_id, step.k, exc, pairs, records) from exc
            record.k = step.k
            record.seed_id = seed_id
            record.record_id = record_id(seed_id, step.k)
            records.append(record)
            if final == "incumbent_wins":
                pairs.append(PreferencePair(seed_id, step.k, step.instruction, incumbent, step.output, record.record_id))
            elif final == "challenger_wins":
                pairs.append(PreferencePair(seed_id, step.k, step.instruction, step.output, incumbent, record.record_id))
                incumbent = step.output
            else:
                incumbent = step.output
        return pairs, incumbent, records


def record_id(seed_id: str, k: int) -> str:
    return f"{seed_id}#k{k}"


def judge_pair(
    instruction: str,
    incumbent: str,
    challenger: str,
    mode: Mode,
    provider: Provider,
    rng: random.Random | None = None,
) -> tuple[Final, ComparisonRecord]:
    return Judger(provider, mode).judge_pair(instruction, incumbent, challenger, rng)


def reorder_chain(
    chain: InstructionChain, mode: Mode, provider: Provider, rng: random.Random | None = None
) -> tuple[list[PreferencePair], str, list[ComparisonRecord]]:
    return Judger(provider, mode).reorder_chain(chain, rng)

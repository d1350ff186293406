"""Deterministic scripted responses for offline runs and tests.

:class:`PipelineScript` answers the three prompt families the pipeline
issues (constraint rewrites, judge comparisons, plain generation) from a
hash of the prompt content, so a run is reproducible byte for byte. It is
meant to back a :class:`~constraint_forge.provider.ScriptedProvider`.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

from . import prompts
from .provider import ChatRequest, ScriptedProvider

VERDICT_POLICIES = ("hash", "challenger", "incumbent", "tie", "always_a", "longer")

_CONSTRAINT_BANK = {
    "content": [
        "Focus specifically on practical examples that a beginner could follow without prior training or background.",
        "Cover at least three distinct aspects and explain how each one relates to the others clearly.",
        "Limit the discussion to developments from the last ten years and cite one concrete example each.",
    ],
    "situation": [
        "Respond as an experienced teacher preparing a short lesson for a class of curious twelve year olds.",
        "Assume the reader must decide within one week and has a strictly limited budget to spend.",
        "Frame the answer as advice for a small nonprofit team working in a rural community setting.",
    ],
    "style": [
        "Use a warm and encouraging tone throughout, as if speaking to a close friend over coffee.",
        "Write in a formal academic register with precise terminology and no casual expressions at all.",
        "Add light humor where appropriate while keeping every factual statement accurate and clearly worded.",
    ],
}


def _digest(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return int(h[:12], 16)


def _between(text: str, start: str, end: str) -> str:
    i = text.index(start) + len(start)
    j = text.index(end, i)
    return text[i:j]


_REWRITE_OPENING = prompts.CONTENT_OPEN_QA.split("{Given Instruction}", 1)[0]
_JUDGE_OPENING = prompts.JUDGE_TEMPLATE.split("{question}", 1)[0]
_JUDGE_A = ("/* The Start of Output (a) */ \n", " \n/* The End of Output (a) */")
_JUDGE_B = ("/* The Start of Output (b) */ \n", " \n/* The End of Output (b) */")


def parse_judge_prompt(user_text: str) -> tuple[str, str, str]:
    """Recover ``(instruction, output_a, output_b)`` from a filled judge prompt."""
    question = _between(user_text, "/* Given instruction */ \n", " \n/* The Start of Output (a) */")
    a = _between(user_text, *_JUDGE_A)
    b = user_text[user_text.index(_JUDGE_B[0]) + len(_JUDGE_B[0]) : user_text.rindex(_JUDGE_B[1])]
    return question, a, b


def parse_rewrite_prompt(user_text: str) -> tuple[str, str]:
    """Recover ``(instruction, kind)`` from a filled rewrite prompt."""
    instruction = _between(user_text, "/* The Given Instruction */\n", "\n/* Rewriting Requirement */")
    tail = user_text.rsplit("/* Rewriting Requirement */", 1)[1]
    for kind in ("content", "situation", "style"):
        if f"one proper {kind} constraint" in tail:
            return instruction, kind
    raise ValueError("unrecognised rewrite requirement")


class PipelineScript:
    """Callable responder for :class:`ScriptedProvider`.

    ``verdict`` picks how judge prompts are answered:

    * ``hash``: prefer one of the two outputs by a hash of the instruction
      and the unordered output pair (independent of presentation order)
    * ``challenger`` / ``incumbent``: always prefer that side; the side is
      recognised by the incumbent/challenger texts the mock generated
    * ``tie``: always ``[[C]]``
    * ``always_a``: always ``[[A]]`` (pure position bias)
    * ``longer``: prefer the longer output, tie on equal length
    """

    def __init__(self, verdict: str = "hash", table: Mapping[str, str] | None = None):
        if verdict not in VERDICT_POLICIES:
            raise ValueError(f"unknown verdict policy {verdict!r}")
        self.verdict = verdict
        self.table = dict(table or {})

    def __call__(self, request: ChatRequest) -> str | None:
        text = request.user_text
        if text in self.table:
            return self.table[text]
        if text.startswith(_REWRITE_OPENING):
            return self._rewrite(text)
        if text.startswith(_JUDGE_OPENING):
            return self._judge(text)
        if not request.system_text:
            return self._generate(text)
        return None

    def _rewrite(self, text: str) -> str:
        instruction, kind = parse_rewrite_prompt(text)
        bank = _CONSTRAINT_BANK[kind]
        constraint = bank[_digest("rewrite", instruction) % len(bank)]
        modified = f"{instruction.rstrip()} {constraint}"
        payload = {"modified_instruction": modified, "added_constraint": constraint}
        return "```json\n" + json.dumps(payload, ensure_ascii=False) + "\n```"

    def _generate(self, instruction: str) -> str:
        tag = _digest("generate", instruction) % 10_000
        words = len(instruction.split())
        return f"Draft {tag:04d}: a response addressing {words} words of instruction. {instruction[-40:]}"

    def _judge(self, text: str) -> str:
        instruction, a, b = parse_judge_prompt(text)
        if self.verdict == "tie":
            return "Both outputs are comparable. [[C]]"
        if self.verdict == "always_a":
            return "Output (a) is better. [[A]]"
        if self.verdict == "longer":
            if len(a) == len(b):
                return "Equal. [[C]]"
            return "[[A]]" if len(a) > len(b) else "[[B]]"
        if self.verdict in ("challenger", "incumbent"):
            # The challenger is the output generated for this very instruction.
            challenger = self._generate(instruction)
            want_challenger = self.verdict == "challenger"
            a_is_challenger = a == challenger
            if a_is_challenger == want_challenger:
                return "Output (a) follows the instruction better. [[A]]"
            return "Output (b) follows the instruction better. [[B]]"
        first, second = sorted([a, b])
        preferred = first if _digest("judge", instruction, first, second) % 2 == 0 else second
        if _digest("tie", instruction, first, second) % 7 == 0:
            return "These are equally good. [[C]]"
        return "Verdict: [[A]]" if preferred == a else "Verdict: [[B]]"


def load_mock_provider(path: str | Path | None = None, **provider_kwargs: Any) -> ScriptedProvider:
    """Build a scripted provider from a mock script file.

    File format (JSON)::

        {"table": {"<user_text>": "<reply>", ...},
         "pipeline": {"verdict": "hash"}}

    Without a ``pipeline`` key only exact ``table`` matches are answered.
    With no file at all the pipeline script runs with the ``hash`` policy.
    """
    if path is None:
        return ScriptedProvider(responder=PipelineScript(), **provider_kwargs)
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    table = spec.get("table", {})
    responder = None
    if "pipeline" in spec:
        responder = PipelineScript(**spec["pipeline"])
    return ScriptedProvider(table=table, responder=responder, **provider_kwargs)

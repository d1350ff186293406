"""Constraint categories, rewrite prompts and rewrite-reply parsing."""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from . import prompts
from .provider import DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE, ChatRequest, Provider

logger = logging.getLogger(__name__)

KINDS = ("content", "situation", "style", "hard")
SOFT_SUBTYPES: dict[str, tuple[str, ...]] = {
    "content": ("open_qa", "language_limitations"),
    "situation": ("suggestion", "role_play", "story"),
    "style": ("general",),
}
DEFAULT_POLICY: dict[str, float] = {kind: 1.0 for kind in KINDS}

MIN_ADDED_WORDS = 10
MAX_ADDED_WORDS = 20


class ConstraintError(Exception):
    pass


class RewriteParseError(ConstraintError):
    pass


class HardConstraintsExhausted(ConstraintError):
    pass


@dataclass(frozen=True)
class ConstraintCategory:
    kind: str
    subtype: str

    def __post_init__(self) -> None:
        if self.kind == "hard":
            if not self.subtype.isdigit():
                raise ValueError(f"hard subtype must be a list index, got {self.subtype!r}")
        elif self.subtype not in SOFT_SUBTYPES.get(self.kind, ()):
            raise ValueError(f"invalid category {self.kind}/{self.subtype}")

    @property
    def is_soft(self) -> bool:
        return self.kind != "hard"


HARD_PENDING = "0"  # placeholder index until select_hard_constraint picks one


@dataclass(frozen=True)
class RewriteResult:
    modified_instruction: str
    added_constraint: str

    def to_json(self) -> str:
        return json.dumps(
            {"modified_instruction": self.modified_instruction, "added_constraint": self.added_constraint},
            ensure_ascii=False,
        )


@dataclass
class RewriteReport:
    length_delta: int
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.warnings


def sample_category(
    rng: random.Random,
    policy: Mapping[str, float] | None = None,
    history: Sequence[ConstraintCategory] = (),
    *,
    hard_capacity: int | None = None,
) -> ConstraintCategory:
    """Draw a category: kind by ``policy`` weight, then a uniform subtype.

    ``history`` holds the categories already used in the chain; when
    ``hard_capacity`` is given and that many hard constraints were already
    drawn, the hard kind is removed from the draw.
    """
    policy = dict(DEFAULT_POLICY if policy is None else policy)
    unknown = set(policy) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown constraint kinds in policy: {sorted(unknown)}")
    if any(w < 0 for w in policy.values()):
        raise ValueError("category weights must be nonnegative")
    if hard_capacity is not None and sum(c.kind == "hard" for c in history) >= hard_capacity:
        policy["hard"] = 0.0
    kinds = [k for k in KINDS if policy.get(k, 0.0) > 0]
    if not kinds:
        raise ValueError("degenerate category policy: all weights are zero")
    kind = rng.choices(kinds, weights=[policy[k] for k in kinds])[0]
    if kind == "hard":
        return ConstraintCategory("hard", HARD_PENDING)
    return ConstraintCategory(kind, rng.choice(SOFT_SUBTYPES[kind]))


def build_rewrite_prompt(
    instruction: str,
    category: ConstraintCategory,
    *,
    model_id: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> ChatRequest:
    if not category.is_soft:
        raise ValueError("hard constraints come from the predefined list, not a rewrite prompt")
    template = prompts.REWRITE_TEMPLATES[(category.kind, category.subtype)]
    return ChatRequest(
        user_text=prompts.fill_rewrite(template, instruction),
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )


def extract_json_object(text: str) -> dict:
    """Return the first balanced top-level JSON object embedded in ``text``."""
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise RewriteParseError("no JSON object found in response")


def parse_rewrite(response: str) -> RewriteResult:
    obj = extract_json_object(response)
    values = {}
    for name in ("modified_instruction", "added_constraint"):
        if name not in obj:
            raise RewriteParseError(f"missing field {name!r}")
        value = obj[name]
        if not isinstance(value, str) or not value.strip():
            raise RewriteParseError(f"field {name!r} is empty")
        values[name] = value
    return RewriteResult(**values)


def _words(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9']+", text.lower()))


def validate_rewrite(original: str, result: RewriteResult) -> RewriteReport:
    """Advisory checks on a rewrite; problems become warnings, never errors."""
    delta = len(result.modified_instruction.split()) - len(original.split())
    report = RewriteReport(length_delta=delta)
    if result.modified_instruction.strip() == original.strip():
        report.warnings.append("no modification")
        return report
    if not MIN_ADDED_WORDS <= delta <= MAX_ADDED_WORDS:
        report.warnings.append(f"length delta {delta} outside [{MIN_ADDED_WORDS},{MAX_ADDED_WORDS}]")
    constraint_words = _words(result.added_constraint)
    if constraint_words:
        shared = constraint_words & _words(result.modified_instruction)
        if len(shared) / len(constraint_words) < 0.3:
            report.warnings.append("added constraint is not reflected in the modified instruction")
    return report


@dataclass(frozen=True)
class HardConstraintList:
    entries: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("hard constraint list is empty")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("hard constraint list has duplicate entries")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def parse(cls, text: str) -> HardConstraintList:
        lines = (line.strip() for line in text.splitlines())
        return cls(tuple(line for line in lines if line and not line.startswith("#")))

    @classmethod
    def from_file(cls, path: str | Path) -> HardConstraintList:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> HardConstraintList:
        text = resources.files("constraint_forge").joinpath("data/hard_constraints.txt").read_text("utf-8")
        return cls.parse(text)


def select_hard_constraint(
    hard: HardConstraintList, rng: random.Random, used: set[int]
) -> tuple[int, str]:
    """Uniform draw among unused entries; the chosen index is added to ``used``."""
    free = [i for i in range(len(hard)) if i not in used]
    if not free:
        raise HardConstraintsExhausted("every hard constraint has already been used in this chain")
    index = rng.choice(free)
    used.add(index)
    return index, hard.entries[index]


def append_constraint(instruction: str, description: str) -> str:
    return f"{instruction.rstrip()} {description}"


@dataclass
class AddedConstraint:
    category: ConstraintCategory
    constraint_text: str
    instruction: str
    warnings: list[str] = field(default_factory=list)


class ConstraintSynthesizer:
    """Adds one constraint to an instruction, calling the provider for soft
    kinds and drawing from the hard list otherwise."""

    def __init__(
        self,
        provider: Provider,
        *,
        hard_constraints: HardConstraintList | None = None,
        policy: Mapping[str, float] | None = None,
        model_id: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        parse_retries: int = 2,
    ):
        self.provider = provider
        self.hard_constraints = hard_constraints or HardConstraintList.default()
        self.policy = dict(policy) if policy is not None else dict(DEFAULT_POLICY)
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.parse_retries = parse_retries

    def add_constraint(
        self,
        instruction: str,
        rng: random.Random,
        history: Sequence[ConstraintCategory],
        used_hard: set[int],
    ) -> AddedConstraint:
        category = sample_category(
            rng, self.policy, history, hard_capacity=len(self.hard_constraints)
        )
        if not category.is_soft:
            index, description = select_hard_constraint(self.hard_constraints, rng, used_hard)
            return AddedConstraint(
                ConstraintCategory("hard", str(index)),
                description,
                append_constraint(instruction, description),
            )
        result = self.rewrite(instruction, category)
        report = validate_rewrite(instruction, result)
        return AddedConstraint(category, result.added_constraint, result.modified_instruction, report.warnings)

    def rewrite(self, instruction: str, category: ConstraintCategory) -> RewriteResult:
        """Rewrite via the provider. Unparseable or identity replies are retried
        with a format reminder up to ``parse_retries`` times."""
        request = build_rewrite_prompt(
            instruction,
            category,
            model_id=self.model_id,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        last_error: Exception | None = None
        for attempt in range(self.parse_retries + 1):
            if attempt == 0:
                response = self.provider.complete(request)
            else:
                retry = ChatRequest(
                    user_text=request.user_text,
                    system_text=prompts.REWRITE_RETRY_NOTE,
                    model_id=request.model_id,
                    temperature=request.temperature,
                    max_tokens=request.max_tokens,
                )
                response = self.provider.complete(retry, refresh=attempt > 1)
            try:
                result = parse_rewrite(response.text)
            except RewriteParseError as exc:
                last_error = exc
                logger.warning("unparseable rewrite (attempt %d): %s", attempt + 1, exc)
                continue
            if result.modified_instruction.strip() == instruction.strip():
                last_error = RewriteParseError("rewrite returned the instruction unchanged")
                continue
            return result
        raise RewriteParseError(f"rewrite failed after {self.parse_retries + 1} attempts: {last_error}")

"""Progressive construction: one added constraint per step, one output per instruction."""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .constraints import ConstraintCategory, ConstraintSynthesizer
from .provider import DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE, ChatRequest, Provider
from .seeds import SeedInstruction

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class ChainStep:
    k: int
    category: ConstraintCategory
    constraint_text: str
    instruction: str
    output: str
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "category": self.category.kind,
            "subtype": self.category.subtype,
            "constraint": self.constraint_text,
            "instruction": self.instruction,
            "output": self.output,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> ChainStep:
        return cls(
            k=obj["k"],
            category=ConstraintCategory(obj["category"], obj["subtype"]),
            constraint_text=obj["constraint"],
            instruction=obj["instruction"],
            output=obj["output"],
            warnings=list(obj.get("warnings", [])),
        )


@dataclass
class InstructionChain:
    seed: SeedInstruction
    seed_output: str
    n: int
    steps: list[ChainStep] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.steps) == self.n and [s.k for s in self.steps] == list(range(1, self.n + 1))

    def constraints_at(self, k: int) -> list[str]:
        """Constraints in force at step ``k``."""
        return [s.constraint_text for s in self.steps[:k]]

    def to_json(self) -> dict[str, Any]:
        return {
            "seed_id": self.seed.id,
            "seed_source": self.seed.source,
            "seed_text": self.seed.text,
            "seed_output": self.seed_output,
            "n": self.n,
            "steps": [s.to_json() for s in self.steps],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> InstructionChain:
        seed = SeedInstruction(obj["seed_id"], obj.get("seed_source", "other"), obj["seed_text"])
        return cls(
            seed=seed,
            seed_output=obj["seed_output"],
            n=obj["n"],
            steps=[ChainStep.from_json(s) for s in obj["steps"]],
        )


class ChainBuildError(Exception):
    """Raised when step ``k`` of a chain fails; completed steps travel along."""

    def __init__(self, seed_id: str, k: int, cause: BaseException, partial: list[ChainStep]):
        super().__init__(f"chain {seed_id!r} failed at step {k}: {cause}")
        self.seed_id = seed_id
        self.k = k
        self.cause = cause
        self.partial = partial


def generate_output(
    instruction: str,
    provider: Provider,
    *,
    model_id: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> str:
    """Model output for the bare instruction (empty system prompt)."""
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    request = ChatRequest(
        user_text=instruction, model_id=model_id, temperature=temperature, max_tokens=max_tokens
    )
    return provider.complete(request).text


def build_chain(
    seed: SeedInstruction,
    n: int,
    synthesizer: ConstraintSynthesizer,
    provider: Provider,
    rng: random.Random,
    *,
    model_id: str = DEFAULT_MODEL,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> InstructionChain:
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = dict(model_id=model_id, temperature=temperature, max_tokens=max_tokens)

    steps: list[ChainStep] = []
    k = 0
    try:
        seed_output = generate_output(seed.text, provider, **gen)
        instruction = seed.text
        history: list[ConstraintCategory] = []
        used_hard: set[int] = set()
        for k in range(1, n + 1):
            added = synthesizer.add_constraint(instruction, rng, history, used_hard)
            output = generate_output(added.instruction, provider, **gen)
            steps.append(
                ChainStep(k, added.category, added.constraint_text, added.instruction, output, added.warnings)
            )
            history.append(added.category)
            instruction = added.instruction
    except Exception as exc:
        raise ChainBuildError(seed.id, k, exc, steps) from exc
    return InstructionChain(seed=seed, seed_output=seed_output, n=n, steps=steps)


def chain_rng(rng_seed: int, seed_id: str, purpose: str = "build") -> random.Random:
    """Independent, reproducible random stream per (run seed, chain, purpose)."""
    return random.Random(f"{rng_seed}:{purpose}:{seed_id}")


def map_ordered(fn: Callable[[T], R], items: Sequence[T], concurrency: int) -> list[R]:
    """``[fn(x) for x in items]``, run on a thread pool, results in input order."""
    if concurrency <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(fn, items))


@dataclass
class BatchResult:
    chains: list[InstructionChain]
    failures: list[ChainBuildError]


def build_chains(
    seeds: Iterable[SeedInstruction],
    n: int,
    synthesizer: ConstraintSynthesizer,
    provider: Provider,
    *,
    rng_seed: int = 0,
    concurrency: int = 1,
    **gen,
) -> BatchResult:
    """Build one chain per seed. A failing chain is logged and skipped."""

    def one(seed: SeedInstruction) -> InstructionChain | ChainBuildError:
        try:
            return build_chain(seed, n, synthesizer, provider, chain_rng(rng_seed, seed.id), **gen)
        except ChainBuildError as exc:
            logger.warning("skipping chain: %s", exc)
            return exc

    results = map_ordered(one, list(seeds), concurrency)
    return BatchResult(
        chains=[r for r in results if isinstance(r, InstructionChain)],
        failures=[r for r in results if isinstance(r, ChainBuildError)],
    )

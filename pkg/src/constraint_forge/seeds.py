"""Seed instruction loading, source filters and deduplication."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .jsonl import write_jsonl

SOURCES = ("oasst", "self_instruct", "super_natural", "other")
DEFAULT_SEED_COUNT = 1500
DEFAULT_MIN_REF_OUTPUT_WORDS = 10


class SeedFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SeedInstruction:
    id: str
    source: str
    text: str
    meta: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise SeedFormatError(f"unknown source {self.source!r}")
        if not self.text.strip():
            raise SeedFormatError(f"seed {self.id!r} has empty text")

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "source": self.source, "text": self.text, "meta": self.meta}


def passes_filter(seed: SeedInstruction, min_ref_output_words: int = DEFAULT_MIN_REF_OUTPUT_WORDS) -> bool:
    """Source-specific keep rule.

    Open Assistant seeds must be rank 0 and come from the first turn.
    Super-Natural seeds whose reference output is shorter than
    ``min_ref_output_words`` are dropped when that length is recorded.
    """
    if seed.source == "oasst":
        return seed.meta.get("rank") == 0 and seed.meta.get("turn") == 0
    if seed.source == "super_natural":
        ref_len = seed.meta.get("ref_output_len")
        return ref_len is None or ref_len >= min_ref_output_words
    return True


def parse_seed(obj: Any, where: str = "") -> SeedInstruction:
    if not isinstance(obj, dict):
        raise SeedFormatError(f"{where}expected a JSON object")
    for name in ("id", "text"):
        if not isinstance(obj.get(name), str) or not obj[name]:
            raise SeedFormatError(f"{where}record missing {name!r}")
    meta = obj.get("meta") or {}
    if not isinstance(meta, dict):
        raise SeedFormatError(f"{where}'meta' must be an object")
    try:
        return SeedInstruction(obj["id"], obj.get("source", "other"), obj["text"], meta)
    except SeedFormatError as exc:
        raise SeedFormatError(f"{where}{exc}") from None


def load_seeds(
    path: str | Path,
    sources: Iterable[str] | None = None,
    *,
    min_ref_output_words: int = DEFAULT_MIN_REF_OUTPUT_WORDS,
) -> list[SeedInstruction]:
    """Read ``seeds.jsonl`` and keep records from ``sources`` (all when None)
    that pass :func:`passes_filter`."""
    path = Path(path)
    wanted = set(sources) if sources is not None else None
    if wanted is not None and not wanted <= set(SOURCES):
        raise SeedFormatError(f"unknown sources in filter: {sorted(wanted - set(SOURCES))}")

    seeds: list[SeedInstruction] = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}: "
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SeedFormatError(f"{where}malformed JSON ({exc.msg})") from None
            seed = parse_seed(obj, where)
            if seed.id in seen_ids:
                raise SeedFormatError(f"{where}duplicate id {seed.id!r}")
            seen_ids.add(seed.id)
            if wanted is not None and seed.source not in wanted:
                continue
            if passes_filter(seed, min_ref_output_words):
                seeds.append(seed)
    return seeds


def normalize_text(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().lower())


def dedupe(seeds: Iterable[SeedInstruction]) -> list[SeedInstruction]:
    """Keep the first seed per normalized text, preserving order."""
    seen: set[str] = set()
    out = []
    for seed in seeds:
        key = normalize_text(seed.text)
        if key not in seen:
            seen.add(key)
            out.append(seed)
    return out


def write_seeds(seeds: Iterable[SeedInstruction], path: str | Path) -> None:
    write_jsonl(path, (s.to_json() for s in seeds))

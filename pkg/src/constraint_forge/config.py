"""Pipeline configuration: a single JSON document, overridable from the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .constraints import DEFAULT_POLICY, KINDS
from .curriculum import DEFAULT_MERGE_PLAN, DEFAULT_REPLAY_BUDGET
from .judger import MODES
from .provider import DEFAULT_API_KEY_ENV, DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE
from .seeds import DEFAULT_MIN_REF_OUTPUT_WORDS, DEFAULT_SEED_COUNT, SOURCES


class ConfigError(ValueError):
    pass


@dataclass
class ProviderSettings:
    kind: str = "http"  # "http" or "mock"
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env_name: str = DEFAULT_API_KEY_ENV
    model_id: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    max_concurrency: int = 8
    max_retries: int = 3
    cache_dir: str | None = None
    timeout: float = 120.0
    mock_script: str | None = None


@dataclass
class PipelineConfig:
    seeds_path: str = "seeds.jsonl"
    output_dir: str = "out"
    n_constraints: int = 5
    merge_plan: list[list[int]] = field(default_factory=lambda: [list(ks) for ks in DEFAULT_MERGE_PLAN])
    replay_path: str | None = None
    replay_budget: int = DEFAULT_REPLAY_BUDGET
    replay_per_stage: bool = False
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    rng_seed: int = 0
    judger_mode: str = "both_orders"
    category_policy: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_POLICY))
    hard_constraints_path: str | None = None
    max_seeds: int = DEFAULT_SEED_COUNT
    sources: list[str] | None = None
    min_ref_output_words: int = DEFAULT_MIN_REF_OUTPUT_WORDS
    batch_concurrency: int = 4
    hyperparams: dict[str, Any] = field(default_factory=dict)
    top_n_verbs: int = 20
    verb_lexicon_path: str | None = None

    def validate(self) -> None:
        if not isinstance(self.n_constraints, int) or self.n_constraints < 1:
            raise ConfigError("n_constraints must be an integer >= 1")
        seen: list[int] = []
        for ks in self.merge_plan:
            if not ks:
                raise ConfigError("merge_plan contains an empty k-set")
            seen.extend(ks)
        if len(seen) != len(set(seen)):
            raise ConfigError("merge_plan k-sets overlap")
        expected = set(range(1, self.n_constraints + 1))
        if set(seen) != expected:
            missing = sorted(expected - set(seen))
            extra = sorted(set(seen) - expected)
            detail = []
            if missing:
                detail.append(f"missing k={missing}")
            if extra:
                detail.append(f"unexpected k={extra}")
            raise ConfigError(f"merge_plan must cover 1..{self.n_constraints} exactly ({'; '.join(detail)})")
        if self.replay_budget < 0:
            raise ConfigError("replay_budget must be >= 0")
        if self.judger_mode not in MODES:
            raise ConfigError(f"judger_mode must be one of {MODES}")
        if set(self.category_policy) - set(KINDS):
            raise ConfigError(f"category_policy keys must be among {KINDS}")
        if any(w < 0 for w in self.category_policy.values()) or not any(self.category_policy.values()):
            raise ConfigError("category_policy weights must be nonnegative and not all zero")
        if self.sources is not None and not set(self.sources) <= set(SOURCES):
            raise ConfigError(f"sources must be among {SOURCES}")
        if self.provider.kind not in ("http", "mock"):
            raise ConfigError("provider.kind must be 'http' or 'mock'")
        if self.provider.max_concurrency < 1 or self.batch_concurrency < 1:
            raise ConfigError("concurrency settings must be >= 1")
        if not 0.0 <= self.provider.temperature <= 2.0:
            raise ConfigError("provider.temperature must be within [0, 2]")
        if self.max_seeds < 1 or self.top_n_verbs < 1:
            raise ConfigError("max_seeds and top_n_verbs must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        provider = data.pop("provider", None) or {}
        pknown = {f.name for f in fields(ProviderSettings)}
        if set(provider) - pknown:
            raise ConfigError(f"unknown provider fields: {sorted(set(provider) - pknown)}")
        return cls(provider=ProviderSettings(**provider), **data)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls.from_dict(data)
        # Relative paths in the config file resolve against its directory.
        base = Path(path).resolve().parent
        for name in ("seeds_path", "output_dir", "replay_path", "hard_constraints_path", "verb_lexicon_path"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(base / value))
        for name in ("cache_dir", "mock_script"):
            value = getattr(cfg.provider, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg.provider, name, str(base / value))
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

"""Constraint-ladder preference data and curriculum construction."""

from .analytics import dpo_sft_loss, kendall_tau, position_consistency, verb_frequency
from .builder import InstructionChain, build_chain
from .config import PipelineConfig
from .judger import Judger, PreferencePair, judge_pair, reorder_chain
from .provider import ChatRequest, HTTPProvider, ScriptedProvider

__version__ = "0.1.0"

__all__ = [
    "ChatRequest",
    "HTTPProvider",
    "InstructionChain",
    "Judger",
    "PipelineConfig",
    "PreferencePair",
    "ScriptedProvider",
    "build_chain",
    "dpo_sft_loss",
    "judge_pair",
    "kendall_tau",
    "position_consistency",
    "reorder_chain",
    "verb_frequency",
]

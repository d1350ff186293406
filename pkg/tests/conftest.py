from __future__ import annotations

import contextlib
from pathlib import Path

import pytest

from constraint_forge.builder import ChainStep, InstructionChain
from constraint_forge.constraints import ConstraintCategory
from constraint_forge.seeds import SeedInstruction

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[int, tuple[str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record and print a one-line PASS/FAIL verdict for an acceptance criterion."""
    try:
        yield
    except BaseException:
        _acceptance[number] = ("FAIL", title)
        print(f"criterion {number} FAIL: {title}")
        raise
    _acceptance[number] = ("PASS", title)
    print(f"criterion {number} PASS: {title}")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title = _acceptance[number]
        terminalreporter.write_line(f"criterion {number} {status}: {title}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_chain(outputs: list[str], seed_id: str = "s1", instructions: list[str] | None = None) -> InstructionChain:
    """Chain with ``outputs[0]`` as the seed output and one step per remaining output."""
    n = len(outputs) - 1
    instructions = instructions or [f"instruction for {seed_id} with {k} constraints" for k in range(n + 1)]
    seed = SeedInstruction(seed_id, "other", instructions[0])
    steps = [
        ChainStep(k, ConstraintCategory("style", "general"), f"constraint {k}", instructions[k], outputs[k])
        for k in range(1, n + 1)
    ]
    return InstructionChain(seed, outputs[0], n, steps)

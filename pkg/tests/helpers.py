"""Shared fixtures-as-functions for the test suite."""

import sys
from pathlib import Path

from aces.core import (
    ORIGIN_GENERATED,
    ORIGIN_TRAIN,
    Puzzle,
    PuzzleRecord,
    SemanticVector,
    ValidityVerdict,
)

TESTS_DIR = Path(__file__).parent

STUB_RUNNER_CMD = [sys.executable, "-S", str(TESTS_DIR / "stub_runner.py")]

POW88_F = '''def f(ls: List[str]):
    """Divide the decimal representation of 8^88 up into strings of length eight."""
    return "".join(ls)==str(8**88) and all(len(s)==8 for s in ls)'''

POW88_G = """def g():
    return [str(8**88)[i:i+8] for i in range(0,80,8)]"""

POW88_PREAMBLE = "from typing import List"


def pow88() -> Puzzle:
    return Puzzle.create(POW88_F, POW88_G, POW88_PREAMBLE)


def make_puzzle(tag: str, valid: bool = True, body_marker: str = "") -> Puzzle:
    """A tiny distinct puzzle; ``tag`` makes the canonical program unique."""
    ret = "k" if valid else "k + 1"
    f_source = (
        f"def f(x: int, k=7) -> bool:\n"
        f'    """Match the constant. tag={tag} {body_marker}"""\n'
        f"    return x == k"
    )
    g_source = f"def g(k=7):\n    return {ret}"
    return Puzzle.create(f_source, g_source)


def train_record(tag: str, label: str) -> PuzzleRecord:
    return PuzzleRecord(
        puzzle=make_puzzle(tag),
        origin=ORIGIN_TRAIN,
        label=SemanticVector.from_string(label),
        verdict=ValidityVerdict("pass"),
    )


def generated_record(
    tag: str, label: str, cycle: int = 1, goal: str | None = None
) -> PuzzleRecord:
    return PuzzleRecord(
        puzzle=make_puzzle(tag),
        origin=ORIGIN_GENERATED,
        cycle=cycle,
        label=SemanticVector.from_string(label),
        goal=SemanticVector.from_string(goal) if goal else None,
        verdict=ValidityVerdict("pass"),
    )

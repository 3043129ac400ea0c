import pytest

from aces.core import Puzzle

from helpers import POW88_F, POW88_G, POW88_PREAMBLE


@pytest.fixture
def pow88_puzzle() -> Puzzle:
    return Puzzle.create(POW88_F, POW88_G, POW88_PREAMBLE)

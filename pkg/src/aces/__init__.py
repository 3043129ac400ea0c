"""Diversity-driven generation, validation and archiving of programming puzzles."""

from .core import (
    ExperimentConfig,
    Puzzle,
    PuzzleRecord,
    SemanticVector,
    SkillDescriptor,
    SKILLS,
    ValidityVerdict,
    hamming,
    semantic_from_indices,
)

__all__ = [
    "ExperimentConfig",
    "Puzzle",
    "PuzzleRecord",
    "SemanticVector",
    "SkillDescriptor",
    "SKILLS",
    "ValidityVerdict",
    "hamming",
    "semantic_from_indices",
]

__version__ = "0.1.0"

"""Shared domain types: skill vectors, puzzles, records, verdicts, run config.

Everything here is an immutable value object with no I/O, safe to share
between threads.
"""

import ast
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, Optional

logger = logging.getLogger(__name__)

N_SKILLS = 10


@dataclass(frozen=True)
class SkillDescriptor:
    """One of the ten programming-skill labels puzzles are scored against."""

    index: int
    name: str
    description: str


SKILLS: tuple[SkillDescriptor, ...] = (
    SkillDescriptor(
        0,
        "Sorting and Searching",
        "Sorting refers to arranging a collection of elements in a specific "
        "order, typically in ascending or descending order. Searching involves "
        "finding the location or presence of a particular element in a "
        "collection.",
    ),
    SkillDescriptor(
        1,
        "Counting and Combinatorics",
        "Understanding principles of counting and combinatorial analysis, "
        "including permutations, combinations, and other counting techniques. "
        "These skills are essential for solving problems that involve counting "
        "the number of possibilities or arrangements.",
    ),
    SkillDescriptor(
        2,
        "Trees and Graphs",
        "Analyzing and solving problems related to tree and graph structures "
        "involving nodes connected by edges. This includes tasks such as "
        "traversal, finding shortest paths, detecting cycles, and determining "
        "connectivity between nodes.",
    ),
    SkillDescriptor(
        3,
        "Mathematical Foundations",
        "Strong understanding of mathematical concepts such as summations, "
        "probability, arithmetics, and matrices.",
    ),
    SkillDescriptor(
        4,
        "Bit Manipulation",
        "Performing operations at the bit level to solve problems.",
    ),
    SkillDescriptor(
        5,
        "String Manipulation",
        "Operations and algorithms specifically designed for working with "
        "strings. This includes tasks like concatenation, searching, replacing, "
        "and parsing strings.",
    ),
    SkillDescriptor(
        6,
        "Geometry and Grid Problems",
        "Understanding geometric concepts and algorithms for problem-solving, "
        "including grid-related problems. This involves tasks such as grid "
        "traversal, finding distances, detecting patterns, and solving "
        "geometric problems on grids.",
    ),
    SkillDescriptor(
        7,
        "Recursion and Dynamic Programming",
        "Utilizing recursive techniques and dynamic programming approaches to "
        "solve problems by breaking them down into smaller subproblems and "
        "building solutions incrementally.",
    ),
    SkillDescriptor(
        8,
        "Stacks and Queues",
        "Data structures used to store and retrieve elements in a specific "
        "order. Stacks follow Last-In-First-Out, while queues follow "
        "First-In-First-Out. They are used for managing function calls, "
        "recursion, and implementing search algorithms.",
    ),
    SkillDescriptor(
        9,
        "Optimization Algorithms",
        "These algorithms aim to find the best possible solution for a given "
        "problem by minimizing or maximizing an objective function. They "
        "involve searching for optimal values within a given solution space, "
        "considering various constraints and parameters. For example, "
        "brute-force search (checks all possible solutions to a problem "
        "without using heuristics) and greedy search (locally optimal choices "
        "at each step to find the best solution) are examples of optimization "
        "algorithms in this category.",
    ),
)


@dataclass(frozen=True)
class SemanticVector:
    """10-bit skill combination; the archive cell key.

    Canonical text form is the 10-character 0/1 string with skill 0 first,
    e.g. "1100010000".
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != N_SKILLS or any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"semantic vector needs {N_SKILLS} 0/1 bits, got {self.bits!r}")

    @classmethod
    def from_string(cls, text: str) -> "SemanticVector":
        if len(text) != N_SKILLS or any(c not in "01" for c in text):
            raise ValueError(f"not a 10-char 0/1 string: {text!r}")
        return cls(tuple(int(c) for c in text))

    @classmethod
    def zeros(cls) -> "SemanticVector":
        return cls((0,) * N_SKILLS)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def active_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def active_names(self) -> tuple[str, ...]:
        return tuple(SKILLS[i].name for i in self.active_indices())


def semantic_from_indices(indices: Iterable[int]) -> SemanticVector:
    """Build a vector from skill indices; out-of-range values are dropped.

    Dropped indices are reported through the module logger rather than
    raised, since they typically come from noisy LLM output.
    """
    bits = [0] * N_SKILLS
    for i in set(indices):
        if 0 <= i < N_SKILLS:
            bits[i] = 1
        else:
            logger.warning("dropping out-of-range skill index %r", i)
    return SemanticVector(tuple(bits))


def hamming(a: SemanticVector, b: SemanticVector) -> int:
    """Number of differing bit positions, in [0, 10]."""
    return sum(x != y for x, y in zip(a.bits, b.bits))


ASSERT_LINE = "assert f(g()) == True"


def _normalize_block(text: str) -> str:
    """Strip surrounding blank lines and trailing per-line whitespace."""
    lines = [ln.rstrip() for ln in text.replace("\r\n", "\n").replace("\r", "\n").split("\n")]
    while lines and not lines[0]:
        lines.pop(0)
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def extract_docstring(f_source: str) -> str:
    """Docstring of the first function defined in f_source, or ""."""
    try:
        tree = ast.parse(f_source)
    except SyntaxError:
        return ""
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            return ast.get_docstring(node) or ""
    return ""


@dataclass(frozen=True)
class Puzzle:
    """A problem function ``f`` plus its solution function ``g``.

    The pair is valid when the canonical program, which appends
    ``assert f(g()) == True``, runs to completion.
    """

    f_source: str
    g_source: str
    preamble: str = ""
    docstring: str = ""

    @classmethod
    def create(cls, f_source: str, g_source: str, preamble: str = "") -> "Puzzle":
        """Normalize sources and pull the docstring out of f."""
        f_norm = _normalize_block(f_source)
        return cls(
            f_source=f_norm,
            g_source=_normalize_block(g_source),
            preamble=_normalize_block(preamble),
            docstring=extract_docstring(f_norm),
        )

    def canonical_program(self) -> str:
        parts = [p for p in (self.preamble, self.f_source, self.g_source) if p]
        return "\n".join(parts + [ASSERT_LINE]) + "\n"


OUTCOME_PASS = "pass"
OUTCOME_FAIL = "fail"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_RUNTIME_ERROR = "runtime-error"
OUTCOME_PARSE_ERROR = "parse-error"
OUTCOME_SIGNATURE_MISMATCH = "signature-mismatch"

OUTCOMES = frozenset(
    {
        OUTCOME_PASS,
        OUTCOME_FAIL,
        OUTCOME_TIMEOUT,
        OUTCOME_RUNTIME_ERROR,
        OUTCOME_PARSE_ERROR,
        OUTCOME_SIGNATURE_MISMATCH,
    }
)


@dataclass(frozen=True)
class ValidityVerdict:
    """Result of executing one canonical program."""

    outcome: str
    detail: str = ""
    wall_time: float = 0.0

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    @property
    def passed(self) -> bool:
        return self.outcome == OUTCOME_PASS


ORIGIN_TRAIN = "train-seed"
ORIGIN_GENERATED = "generated"


def record_id(puzzle: Puzzle) -> str:
    """Content hash of the canonical program; detects duplicate generations."""
    return hashlib.sha256(puzzle.canonical_program().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PuzzleRecord:
    """A puzzle with provenance, label, embeddings and validity verdict."""

    puzzle: Puzzle
    origin: str
    cycle: int = 0
    label: Optional[SemanticVector] = None
    goal: Optional[SemanticVector] = None
    verdict: Optional[ValidityVerdict] = None
    embeddings: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    id: str = ""

    def __post_init__(self):
        if self.origin not in (ORIGIN_TRAIN, ORIGIN_GENERATED):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.cycle < 0:
            raise ValueError("cycle must be >= 0")
        if self.origin == ORIGIN_GENERATED:
            if self.cycle < 1:
                raise ValueError("generated records must carry cycle >= 1")
            if self.verdict is None:
                raise ValueError("generated records must carry a verdict")
        if not self.id:
            object.__setattr__(self, "id", record_id(self.puzzle))


# Canonical JSON schema used by all persistence. Field names are fixed.
RECORD_FIELDS = (
    "id",
    "origin",
    "cycle",
    "goal",
    "label",
    "f_source",
    "g_source",
    "preamble",
    "verdict",
    "wall_time",
)


def record_to_dict(record: PuzzleRecord) -> dict:
    return {
        "id": record.id,
        "origin": record.origin,
        "cycle": record.cycle,
        "goal": str(record.goal) if record.goal is not None else None,
        "label": str(record.label) if record.label is not None else None,
        "f_source": record.puzzle.f_source,
        "g_source": record.puzzle.g_source,
        "preamble": record.puzzle.preamble,
        "verdict": record.verdict.outcome if record.verdict is not None else None,
        "wall_time": record.verdict.wall_time if record.verdict is not None else None,
    }


def record_from_dict(data: Mapping) -> PuzzleRecord:
    missing = [k for k in RECORD_FIELDS if k not in data]
    if missing:
        raise ValueError(f"record dict missing fields: {missing}")
    puzzle = Puzzle.create(data["f_source"], data["g_source"], data["preamble"] or "")
    verdict = None
    if data["verdict"] is not None:
        verdict = ValidityVerdict(data["verdict"], "", float(data["wall_time"] or 0.0))
    return PuzzleRecord(
        puzzle=puzzle,
        origin=data["origin"],
        cycle=int(data["cycle"]),
        label=SemanticVector.from_string(data["label"]) if data["label"] else None,
        goal=SemanticVector.from_string(data["goal"]) if data["goal"] else None,
        verdict=verdict,
        id=data["id"],
    )


MODE_ACES = "aces"
MODE_ELM_SEMANTIC = "elm-semantic"
MODE_ELM = "elm"
MODE_STATIC = "static-gen"
MODES = (MODE_ACES, MODE_ELM_SEMANTIC, MODE_ELM, MODE_STATIC)

GOAL_SPACE_FULL = "full-2^10"
GOAL_SPACE_ARCHIVE = "archive-cells"
GOAL_SPACES = (GOAL_SPACE_FULL, GOAL_SPACE_ARCHIVE)


@dataclass
class LlmSettings:
    """Completion / embedding backend knobs."""

    backend: str = "mock"  # mock | http | replay
    endpoint: str = ""  # default from ACES_LLM_ENDPOINT
    model: str = ""
    gen_temperature: float = 0.8
    label_temperature: float = 0.0
    max_retries: int = 3
    max_in_flight: int = 10
    label_attempts: int = 3  # initial query + 2 re-queries
    replay_path: str = ""
    record_transcript: bool = True


@dataclass
class SandboxConfig:
    """How candidate programs are executed (see sandbox module)."""

    runner_command: list[str] = field(default_factory=list)
    timeout: float = 10.0
    memory_cap: int = 0  # bytes; 0 disables the rlimit
    max_concurrent: int = 4
    denylist: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("sandbox timeout must be > 0")


@dataclass
class EmbeddingSpaceConfig:
    """One named continuous embedding space."""

    name: str
    backend: str = "mock"  # mock | http
    endpoint: str = ""
    model: str = ""
    dim: int = 16


@dataclass
class CvtSettings:
    """Tessellation parameters for the embedding-space archive."""

    n_bootstrap: int = 40000
    noise_variance: float = 1.2
    n_centroids: int = 1024
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    rng_seed: int = 0
    space: str = ""  # embedding space used for cells; default first configured

    def __post_init__(self):
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be > 0")
        if self.n_centroids > self.n_bootstrap:
            raise ValueError("n_centroids must be <= n_bootstrap")


@dataclass
class ExperimentConfig:
    """Full description of one exploration run."""

    mode: str = MODE_ACES
    budget: int = 100  # total generation calls
    batch_size: int = 10
    rng_seed: int = 0
    goal_space: str = GOAL_SPACE_FULL
    train_path: str = ""
    output_dir: str = "run-out"
    snapshot_every: int = 5  # cycles
    max_len_tokens: int = 1024
    embed_target: str = "program"  # program | problem
    llm: LlmSettings = field(default_factory=LlmSettings)
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    embedding_spaces: list[EmbeddingSpaceConfig] = field(default_factory=list)
    cvt: CvtSettings = field(default_factory=CvtSettings)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.goal_space not in GOAL_SPACES:
            raise ValueError(f"goal_space must be one of {GOAL_SPACES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # budget 0 is allowed as "seed and report only"
        if self.budget != 0 and self.budget < self.batch_size:
            raise ValueError("budget must be 0 or >= batch_size")
        if self.embed_target not in ("program", "problem"):
            raise ValueError("embed_target must be 'program' or 'problem'")

    def config_hash(self) -> str:
        """Identity of the experiment setup; where outputs land is not part of it."""
        data = asdict(self)
        data.pop("output_dir", None)
        data.pop("train_path", None)
        blob = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

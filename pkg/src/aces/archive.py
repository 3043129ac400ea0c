"""Append-only archive over the 2^10 semantic cells.

Seeding, goal sampling, nearest-example selection, insertion and JSONL
snapshots. All mutations go through a single owner; sampling consumes the
archive's seeded rng stream so runs are reproducible.
"""

import json
import logging
import random
from pathlib import Path

from .core import (
    GOAL_SPACE_ARCHIVE,
    GOAL_SPACE_FULL,
    N_SKILLS,
    ORIGIN_GENERATED,
    ORIGIN_TRAIN,
    PuzzleRecord,
    SemanticVector,
    hamming,
    record_from_dict,
    record_to_dict,
)

logger = logging.getLogger(__name__)


class ArchiveError(Exception):
    pass


class SemanticArchive:
    """Map from semantic vectors to the puzzle records discovered in each cell.

    Cells are append-only for the lifetime of a run; there is no eviction
    and no fitness-based replacement.
    """

    def __init__(self, rng_seed: int = 0, config_hash: str = ""):
        self.cells: dict[SemanticVector, list[PuzzleRecord]] = {}
        self.train_cells: set[SemanticVector] = set()
        self.rng = random.Random(rng_seed)
        self.config_hash = config_hash
        self.cycle = 0
        self.calls = 0
        self.duplicates = 0
        self._ids: set[str] = set()

    # -- construction ------------------------------------------------------

    @classmethod
    def seed(
        cls, records: list[PuzzleRecord], rng_seed: int = 0, config_hash: str = ""
    ) -> "SemanticArchive":
        """Populate a fresh archive from labeled, validated train records."""
        archive = cls(rng_seed=rng_seed, config_hash=config_hash)
        for rec in records:
            if rec.origin != ORIGIN_TRAIN:
                raise ArchiveError(f"seed record {rec.id} has origin {rec.origin!r}")
            archive._check_insertable(rec)
            archive._append(rec)
        return archive

    def _check_insertable(self, rec: PuzzleRecord) -> None:
        if rec.label is None:
            raise ArchiveError(f"record {rec.id} has no label")
        if rec.verdict is None or not rec.verdict.passed:
            outcome = rec.verdict.outcome if rec.verdict else None
            raise ArchiveError(f"record {rec.id} did not pass validation ({outcome})")

    def _append(self, rec: PuzzleRecord) -> SemanticVector:
        key = rec.label
        self.cells.setdefault(key, []).append(rec)
        self._ids.add(rec.id)
        if rec.origin == ORIGIN_TRAIN:
            self.train_cells.add(key)
        return key

    # -- queries -----------------------------------------------------------

    def __len__(self) -> int:
        return sum(len(v) for v in self.cells.values())

    def occupied_cells(self) -> list[SemanticVector]:
        """Occupied cell keys in canonical-string order (deterministic)."""
        return sorted(self.cells, key=str)

    def all_records(self) -> list[PuzzleRecord]:
        return [rec for key in self.occupied_cells() for rec in self.cells[key]]

    def generated_records(self) -> list[PuzzleRecord]:
        return [r for r in self.all_records() if r.origin == ORIGIN_GENERATED]

    def train_records(self) -> list[PuzzleRecord]:
        return [r for r in self.all_records() if r.origin == ORIGIN_TRAIN]

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._ids

    # -- sampling ----------------------------------------------------------

    def sample_goal(self, mode: str = GOAL_SPACE_FULL) -> SemanticVector:
        """Draw a semantic goal.

        full-2^10 draws 10 fair bits from the archive rng, skill 0 first,
        so each of the 1024 vectors has probability 1/1024. archive-cells
        draws uniformly over currently occupied cells.
        """
        if mode == GOAL_SPACE_FULL:
            return SemanticVector(tuple(self.rng.getrandbits(1) for _ in range(N_SKILLS)))
        if mode == GOAL_SPACE_ARCHIVE:
            occupied = self.occupied_cells()
            if not occupied:
                raise ArchiveError("cannot sample a cell from an empty archive")
            return self.rng.choice(occupied)
        raise ArchiveError(f"unknown goal space {mode!r}")

    def select_examples(
        self, goal: SemanticVector, n_generated: int = 2, n_train: int = 1
    ) -> list[PuzzleRecord]:
        """Hamming-nearest neighbors of the goal: generated pool first, train last.

        Ties are broken uniformly at random (shuffle, then stable sort by
        distance). If the generated pool is short, the gap is filled with
        additional nearest train records so prompts keep their full example
        count whenever the archive is large enough.
        """
        train_pool = self.train_records()
        if not train_pool:
            raise ArchiveError("archive holds no train-seed records")
        gen_pool = self.generated_records()

        picked_gen = self._nearest(gen_pool, goal, n_generated)
        n_from_train = n_train + (n_generated - len(picked_gen))
        picked_train = self._nearest(train_pool, goal, n_from_train)
        return picked_gen + picked_train

    def _nearest(self, pool: list[PuzzleRecord], goal: SemanticVector, n: int) -> list[PuzzleRecord]:
        if n <= 0 or not pool:
            return []
        shuffled = list(pool)
        self.rng.shuffle(shuffled)
        shuffled.sort(key=lambda r: hamming(r.label, goal))
        return shuffled[:n]

    # -- mutation ----------------------------------------------------------

    def insert(self, record: PuzzleRecord) -> SemanticVector:
        """Append a validated, labeled record to its cell; returns the key.

        Records whose canonical program was already archived are skipped
        (logged, counted in ``duplicates``).
        """
        self._check_insertable(record)
        if record.id in self._ids:
            self.duplicates += 1
            logger.warning("skipping duplicate record %s", record.id)
            return record.label
        return self._append(record)

    # -- persistence -------------------------------------------------------

    SNAPSHOT_VERSION = 1

    def snapshot(self, path) -> None:
        """Write header + one JSON record per line (UTF-8 JSONL)."""
        header = {
            "version": self.SNAPSHOT_VERSION,
            "config_hash": self.config_hash,
            "cycle": self.cycle,
            "calls": self.calls,
            "rng_state": _rng_state_to_json(self.rng.getstate()),
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.all_records():
                fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")

    @classmethod
    def restore(cls, path) -> "SemanticArchive":
        """Rebuild an archive from a snapshot file."""
        path = Path(path)
        archive = cls()
        with open(path, encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise ArchiveError(f"{path}: line 1: bad snapshot header: {exc}") from exc
            if header.get("version") != cls.SNAPSHOT_VERSION:
                raise ArchiveError(f"{path}: unsupported snapshot version {header.get('version')!r}")
            archive.config_hash = header.get("config_hash", "")
            archive.cycle = int(header.get("cycle", 0))
            archive.calls = int(header.get("calls", 0))
            if "rng_state" in header:
                archive.rng.setstate(_rng_state_from_json(header["rng_state"]))
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    rec = record_from_dict(json.loads(line))
                except (json.JSONDecodeError, ValueError, KeyError) as exc:
                    raise ArchiveError(f"{path}: line {lineno}: {exc}") from exc
                archive._check_insertable(rec)
                archive._append(rec)
        return archive


def _rng_state_to_json(state) -> list:
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_json(data) -> tuple:
    version, internal, gauss = data
    return (version, tuple(internal), gauss)

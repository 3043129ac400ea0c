"""Train-set ingestion: P3-style puzzle files to seed records.

Accepts a JSON array or JSONL file. Each entry may carry the dataset's
original naming (``sat``/``sols``), explicit ``f``/``g`` sources, or a raw
``program_str`` that is split by the generation parser. Entries that fail
to map are skipped with a warning; entries longer than the token budget
are dropped.
"""

import json
import logging
import re
from typing import Callable, Optional

from .core import ORIGIN_TRAIN, Puzzle, PuzzleRecord
from .gateway import parse_generated_puzzles

logger = logging.getLogger(__name__)

TYPING_PREAMBLE = "from typing import *"


class DatasetError(Exception):
    pass


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def approx_token_count(text: str) -> int:
    """Cheap word+punctuation token count standing in for a model tokenizer."""
    return len(_TOKEN_RE.findall(text))


def _rename_def(source: str, old: str, new: str) -> str:
    return re.sub(rf"(^|\n)(\s*def\s+){old}\b", rf"\g<1>\g<2>{new}", source, count=1)


def _entry_to_puzzle(entry: dict) -> Optional[Puzzle]:
    if "f" in entry and "g" in entry:
        return Puzzle.create(entry["f"], entry["g"], entry.get("preamble", ""))
    if "sat" in entry:
        sols = entry.get("sols") or entry.get("sol_bodies") or []
        if not sols:
            return None
        solution = sols[0]
        if "def " not in solution:
            # bare solution body; the header travels separately
            header = entry.get("sol_header", "def sol():")
            solution = header.rstrip() + "\n" + solution
        f_source = _rename_def(entry["sat"], "sat", "f")
        g_source = _rename_def(solution, "sol", "g")
        return Puzzle.create(f_source, g_source, TYPING_PREAMBLE)
    if "program_str" in entry:
        found = parse_generated_puzzles(entry["program_str"])
        return found[0] if found else None
    return None


def _load_entries(path) -> list:
    with open(path, encoding="utf-8") as fh:
        head = fh.read().lstrip()
    if not head:
        raise DatasetError(f"{path}: empty dataset file")
    if head.startswith("["):
        entries = json.loads(head)
    else:
        entries = []
        for lineno, line in enumerate(head.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("%s: line %d is not JSON, skipped", path, lineno)
    return entries


def ingest_p3(
    path,
    max_len: int = 1024,
    token_counter: Callable[[str], int] | None = None,
) -> list[PuzzleRecord]:
    """Read a puzzle dataset into unvalidated train-seed records.

    ``max_len`` bounds the canonical program's token count; the counter is
    pluggable for callers that want an exact model tokenizer.
    """
    counter = token_counter or approx_token_count
    entries = _load_entries(path)
    records = []
    dropped_long = 0
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            logger.warning("%s: entry %d is not an object, skipped", path, i)
            continue
        try:
            puzzle = _entry_to_puzzle(entry)
        except (KeyError, TypeError, ValueError) as exc:
            logger.warning("%s: entry %d unusable (%s), skipped", path, i, exc)
            continue
        if puzzle is None or not puzzle.f_source or not puzzle.g_source:
            logger.warning("%s: entry %d has no usable f/g pair, skipped", path, i)
            continue
        if counter(puzzle.canonical_program()) > max_len:
            dropped_long += 1
            continue
        records.append(PuzzleRecord(puzzle=puzzle, origin=ORIGIN_TRAIN))
    if dropped_long:
        logger.info("%s: dropped %d entries over %d tokens", path, dropped_long, max_len)
    if not records:
        raise DatasetError(f"{path}: no usable entries")
    return records


def load_records(path) -> list[PuzzleRecord]:
    """Read records from our canonical JSONL (header line optional)."""
    from .core import record_from_dict

    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            data = json.loads(line)
            if "version" in data and "id" not in data:
                continue  # snapshot header
            try:
                records.append(record_from_dict(data))
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_records(path, records: list[PuzzleRecord]) -> None:
    from .core import record_to_dict

    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")

"""Experiment driver: seeding, the four search strategies, metrics, snapshots.

One driver task owns all mutable state. Within a cycle, generation calls
and sandbox validations fan out over worker threads, then everything joins
back in submission order before labeling and insertion, so a run is fully
determined by (config, seed, backend).
"""

import csv
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import gateway, metrics, sandbox
from .archive import SemanticArchive
from .backends import (
    BackendError,
    CompletionBackend,
    CompletionParams,
    EmbeddingBackend,
    TranscriptRecorder,
    complete_many,
    make_completion_backend,
    make_embedding_backend,
)
from .core import (
    ExperimentConfig,
    MODE_ACES,
    MODE_ELM,
    MODE_ELM_SEMANTIC,
    MODE_STATIC,
    ORIGIN_GENERATED,
    ORIGIN_TRAIN,
    Puzzle,
    PuzzleRecord,
    SemanticVector,
)
from .cvt import CvtArchive
from .metrics import MetricsReport

logger = logging.getLogger(__name__)


class RunPaused(Exception):
    """Backend failed hard; state was snapshotted and the run can resume."""


@dataclass
class StrategyState:
    """Everything a strategy carries between cycles."""

    mode: str
    archive: SemanticArchive
    cvt_archive: Optional[CvtArchive] = None
    transcript: Optional[TranscriptRecorder] = None

    @property
    def cycle(self) -> int:
        return self.archive.cycle

    @property
    def calls(self) -> int:
        return self.archive.calls

    @property
    def rng(self) -> random.Random:
        return self.archive.rng


# ---------------------------------------------------------------------------
# labeling

def label_dataset(
    records: list[PuzzleRecord],
    backend: CompletionBackend,
    cfg: ExperimentConfig,
    recorder: TranscriptRecorder | None = None,
) -> list[PuzzleRecord]:
    """Attach semantic labels; records that still fail parsing are returned unlabeled."""
    vectors = label_puzzles(
        [rec.puzzle for rec in records], backend, cfg, recorder
    )
    return [
        rec if vec is None else _with_label(rec, vec)
        for rec, vec in zip(records, vectors)
    ]


def label_puzzles(
    puzzles: list[Puzzle],
    backend: CompletionBackend,
    cfg: ExperimentConfig,
    recorder: TranscriptRecorder | None = None,
) -> list[SemanticVector | None]:
    """Label many puzzles: first attempts fan out concurrently, retries are serial.

    Failures after the configured attempts yield None in that position.
    """
    if not puzzles:
        return []
    prompts = [gateway.build_label_prompt(p) for p in puzzles]
    params = CompletionParams(temperature=cfg.llm.label_temperature)
    responses = complete_many(backend, prompts, params, cfg.llm.max_in_flight, recorder)

    vectors: list[SemanticVector | None] = []
    for prompt, response in zip(prompts, responses):
        vec = _parse_label_or_none(response)
        attempts_left = max(1, cfg.llm.label_attempts) - 1
        while vec is None and attempts_left > 0:
            logger.warning("label response unparseable, re-querying")
            response = backend.complete(prompt, params)
            if recorder is not None:
                recorder.record(prompt, response, params)
            vec = _parse_label_or_none(response)
            attempts_left -= 1
        vectors.append(vec)
    return vectors


def _parse_label_or_none(response: str) -> SemanticVector | None:
    try:
        return gateway.parse_label_response(response)
    except gateway.LabelParseError as exc:
        logger.warning("label parse failed: %s", exc)
        return None


def _with_label(rec: PuzzleRecord, label: SemanticVector) -> PuzzleRecord:
    return PuzzleRecord(
        puzzle=rec.puzzle,
        origin=rec.origin,
        cycle=rec.cycle,
        label=label,
        goal=rec.goal,
        verdict=rec.verdict,
        embeddings=rec.embeddings,
        id=rec.id,
    )


def _with_embeddings(rec: PuzzleRecord, embeddings: dict) -> PuzzleRecord:
    return PuzzleRecord(
        puzzle=rec.puzzle,
        origin=rec.origin,
        cycle=rec.cycle,
        label=rec.label,
        goal=rec.goal,
        verdict=rec.verdict,
        embeddings=embeddings,
        id=rec.id,
    )


# ---------------------------------------------------------------------------
# seeding

def prepare_seed_records(
    records: list[PuzzleRecord],
    backend: CompletionBackend,
    cfg: ExperimentConfig,
    recorder: TranscriptRecorder | None = None,
) -> list[PuzzleRecord]:
    """Validate and label raw train records; failures are dropped with a report.

    Records arriving with a pass verdict are trusted; everything else goes
    through the sandbox.
    """
    ready = []
    unchecked = [r for r in records if r.verdict is None or not r.verdict.passed]
    verdicts = dict(
        zip(
            (r.id for r in unchecked),
            sandbox.validate_batch([r.puzzle for r in unchecked], cfg.sandbox),
        )
    )
    survivors = []
    for rec in records:
        verdict = verdicts.get(rec.id, rec.verdict)
        if verdict is None or not verdict.passed:
            outcome = verdict.outcome if verdict else "unvalidated"
            detail = verdict.detail if verdict else ""
            logger.warning("seed %s excluded: %s (%s)", rec.id, outcome, detail)
            continue
        survivors.append(
            PuzzleRecord(
                puzzle=rec.puzzle,
                origin=ORIGIN_TRAIN,
                cycle=0,
                label=rec.label,
                verdict=verdict,
                embeddings=rec.embeddings,
                id=rec.id,
            )
        )
    unlabeled = [rec for rec in survivors if rec.label is None]
    vectors = dict(
        zip(
            (r.id for r in unlabeled),
            label_puzzles([r.puzzle for r in unlabeled], backend, cfg, recorder),
        )
    )
    for rec in survivors:
        if rec.label is not None:
            ready.append(rec)
            continue
        vec = vectors.get(rec.id)
        if vec is None:
            logger.warning("seed %s excluded: labeling failed", rec.id)
            continue
        ready.append(_with_label(rec, vec))
    return ready


def _embed_records(
    records: list[PuzzleRecord],
    embedders: list[EmbeddingBackend],
    embed_target: str,
) -> list[PuzzleRecord]:
    if not embedders or not records:
        return records
    texts = [_embed_text(r.puzzle, embed_target) for r in records]
    per_space = {emb.name: emb.embed(texts) for emb in embedders}
    out = []
    for i, rec in enumerate(records):
        vals = {name: tuple(float(v) for v in mat[i]) for name, mat in per_space.items()}
        out.append(_with_embeddings(rec, vals))
    return out


def _embed_text(puzzle: Puzzle, embed_target: str) -> str:
    return puzzle.f_source if embed_target == "problem" else puzzle.canonical_program()


# ---------------------------------------------------------------------------
# the run loop

def run_experiment(
    cfg: ExperimentConfig,
    backend: CompletionBackend | None = None,
    embedders: list[EmbeddingBackend] | None = None,
    seed_records: list[PuzzleRecord] | None = None,
    resume_path=None,
) -> tuple[StrategyState, list[MetricsReport]]:
    """Run one experiment to its generation budget and persist results.

    ``seed_records`` must already be labeled and validated. When
    ``resume_path`` points at a snapshot, the archive (including rng state
    and counters) continues from there instead of reseeding.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if backend is None:
        backend = make_completion_backend(cfg.llm, cfg.rng_seed)
    if embedders is None:
        embedders = [make_embedding_backend(s) for s in cfg.embedding_spaces]

    recorder = None
    if cfg.llm.record_transcript:
        recorder = TranscriptRecorder(out_dir / "transcript.jsonl")

    if resume_path is not None:
        archive = SemanticArchive.restore(resume_path)
    else:
        if seed_records is None:
            raise ValueError("seed_records required unless resuming")
        archive = SemanticArchive.seed(
            seed_records, rng_seed=cfg.rng_seed, config_hash=cfg.config_hash()
        )

    state = StrategyState(mode=cfg.mode, archive=archive, transcript=recorder)
    if cfg.mode == MODE_ELM:
        state.cvt_archive = _build_cvt(cfg, archive, embedders, out_dir)

    reports: list[MetricsReport] = []
    if archive.cycle == 0:
        reports.append(_build_report(state))

    try:
        while archive.calls < cfg.budget:
            n_calls = min(cfg.batch_size, cfg.budget - archive.calls)
            _run_cycle(state, cfg, backend, embedders, recorder, n_calls)
            reports.append(_build_report(state))
            if cfg.snapshot_every > 0 and archive.cycle % cfg.snapshot_every == 0:
                archive.snapshot(out_dir / f"snapshot_cycle{archive.cycle:05d}.jsonl")
    except BackendError as exc:
        archive.snapshot(out_dir / "snapshot_paused.jsonl")
        _write_reports(out_dir, reports)
        raise RunPaused(f"backend failure at cycle {archive.cycle}: {exc}") from exc
    except sandbox.SandboxProtocolError:
        # runner desync is not recoverable mid-cycle; keep what we have
        archive.snapshot(out_dir / "snapshot_paused.jsonl")
        _write_reports(out_dir, reports)
        raise

    archive.snapshot(out_dir / "snapshot.jsonl")
    _write_reports(out_dir, reports)
    return state, reports


def _build_cvt(
    cfg: ExperimentConfig,
    archive: SemanticArchive,
    embedders: list[EmbeddingBackend],
    out_dir: Path,
) -> CvtArchive:
    space = cfg.cvt.space or (embedders[0].name if embedders else "")
    embedder = next((e for e in embedders if e.name == space), None)
    if embedder is None:
        raise ValueError(f"elm mode needs an embedding backend for space {space!r}")
    records = archive.all_records()
    missing = [r for r in records if space not in r.embeddings]
    if missing:
        embedded = _embed_records(records, [embedder], cfg.embed_target)
        _replace_archive_records(archive, embedded)
        records = archive.all_records()
    train_matrix = np.array(
        [r.embeddings[space] for r in records if r.origin == ORIGIN_TRAIN]
    )
    cvt_archive = CvtArchive.build(train_matrix, cfg.cvt)
    cvt_archive.save_centroids(out_dir / "centroids.json", cfg.config_hash())
    for rec in records:
        cvt_archive.insert(rec, rec.embeddings[space])
    return cvt_archive


def _replace_archive_records(archive: SemanticArchive, records: list[PuzzleRecord]) -> None:
    by_id = {r.id: r for r in records}
    for key, cell in archive.cells.items():
        archive.cells[key] = [by_id.get(r.id, r) for r in cell]


def _run_cycle(
    state: StrategyState,
    cfg: ExperimentConfig,
    backend: CompletionBackend,
    embedders: list[EmbeddingBackend],
    recorder: TranscriptRecorder | None,
    n_calls: int,
) -> None:
    archive = state.archive
    cycle = archive.cycle + 1

    goals: list[SemanticVector | None] = []
    prompts: list[str] = []
    for _ in range(n_calls):
        goal, prompt = _build_call(state, cfg)
        goals.append(goal)
        prompts.append(prompt)

    gen_params = CompletionParams(temperature=cfg.llm.gen_temperature)
    responses = complete_many(
        backend, prompts, gen_params, cfg.llm.max_in_flight, recorder
    )

    candidates: list[tuple[SemanticVector | None, Puzzle]] = []
    for goal, response in zip(goals, responses):
        for puzzle in gateway.parse_generated_puzzles(response):
            candidates.append((goal, puzzle))

    screened = [
        (goal, puzzle)
        for goal, puzzle in candidates
        if gateway.check_signature_compat(puzzle)
    ]
    if len(screened) < len(candidates):
        logger.info(
            "cycle %d: dropped %d candidates on signature mismatch",
            cycle,
            len(candidates) - len(screened),
        )

    verdicts = sandbox.validate_batch([p for _, p in screened], cfg.sandbox)
    passing = [
        (goal, puzzle, verdict)
        for (goal, puzzle), verdict in zip(screened, verdicts)
        if verdict.passed
    ]

    labels = label_puzzles([p for _, p, _ in passing], backend, cfg, recorder)
    new_records: list[PuzzleRecord] = []
    for (goal, puzzle, verdict), label in zip(passing, labels):
        if label is None:
            continue
        new_records.append(
            PuzzleRecord(
                puzzle=puzzle,
                origin=ORIGIN_GENERATED,
                cycle=cycle,
                label=label,
                goal=goal,
                verdict=verdict,
            )
        )
    new_records = _embed_records(new_records, embedders, cfg.embed_target)

    for rec in new_records:
        before = len(archive)
        archive.insert(rec)
        if state.cvt_archive is not None and len(archive) > before:
            space = cfg.cvt.space or embedders[0].name
            state.cvt_archive.insert(rec, rec.embeddings[space])

    archive.calls += n_calls
    archive.cycle = cycle
    logger.info(
        "cycle %d: %d calls, %d candidates, %d valid, archive %d records / %d cells",
        cycle,
        n_calls,
        len(candidates),
        len(passing),
        len(archive),
        len(archive.cells),
    )


def _build_call(state: StrategyState, cfg: ExperimentConfig) -> tuple[SemanticVector | None, str]:
    """Sample whatever the strategy needs for one generation call."""
    archive = state.archive
    rng = archive.rng

    if cfg.mode == MODE_ACES:
        goal = archive.sample_goal(cfg.goal_space)
        examples = archive.select_examples(goal)
        if len(examples) < 3:
            examples = (examples * 3)[:3]  # degenerate tiny archive
        prompt = gateway.build_generation_prompt(
            MODE_ACES, goal, [(r, r.label) for r in examples]
        )
        return goal, prompt

    if cfg.mode == MODE_ELM_SEMANTIC:
        records = archive.all_records()
        examples = _uniform(rng, records, 2)
        cell = rng.choice(archive.occupied_cells())
        target = rng.choice(archive.cells[cell])
        prompt = gateway.build_generation_prompt(
            MODE_ELM_SEMANTIC, None, [(r, None) for r in examples + [target]]
        )
        return None, prompt

    if cfg.mode == MODE_ELM:
        cvt = state.cvt_archive
        # id-sorted within each cell: sampling must not depend on insertion
        # history, or a restored archive would replay differently
        records = [
            r
            for idx in cvt.occupied_cells()
            for r in sorted(cvt.cells[idx], key=lambda rec: rec.id)
        ]
        examples = _uniform(rng, records, 2)
        cell_idx = rng.choice(cvt.occupied_cells())
        target = rng.choice(sorted(cvt.cells[cell_idx], key=lambda rec: rec.id))
        prompt = gateway.build_generation_prompt(
            MODE_ELM, None, [(r, None) for r in examples + [target]]
        )
        return None, prompt

    if cfg.mode == MODE_STATIC:
        train = state.archive.train_records()
        examples = _uniform(rng, train, 3)
        prompt = gateway.build_generation_prompt(
            MODE_STATIC, None, [(r, None) for r in examples]
        )
        return None, prompt

    raise ValueError(f"unknown mode {cfg.mode!r}")


def _uniform(rng: random.Random, pool: list, n: int) -> list:
    if not pool:
        raise ValueError("cannot sample from an empty pool")
    if len(pool) >= n:
        return rng.sample(pool, n)
    return [rng.choice(pool) for _ in range(n)]


# ---------------------------------------------------------------------------
# reports

def _build_report(state: StrategyState) -> MetricsReport:
    archive = state.archive
    cells, cells_beyond, valid, valid_beyond = metrics.count_metrics(archive)
    report = MetricsReport(
        cycle=archive.cycle,
        calls=archive.calls,
        cells_discovered=cells,
        cells_beyond_train=cells_beyond,
        valid_puzzles=valid,
        valid_beyond_train=valid_beyond,
    )
    generated = archive.generated_records()
    if generated:
        report.cell_entropy_bits = metrics.cell_entropy(archive)
        spaces = sorted({name for r in generated for name in r.embeddings})
        for space in spaces:
            matrix = np.array([r.embeddings[space] for r in generated if space in r.embeddings])
            report.vendi[space] = metrics.vendi_score(matrix)
            if len(matrix) >= 2:
                report.mean_pairwise_distance[space] = metrics.mean_pairwise_distance(matrix)
    return report


def _write_reports(out_dir: Path, reports: list[MetricsReport]) -> None:
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_dict(), sort_keys=True) + "\n")
    write_metrics_csv(out_dir / "metrics.csv", reports)


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    """One row per snapshot; per-space metrics become suffixed columns."""
    spaces = sorted({name for rep in reports for name in rep.vendi})
    dist_spaces = sorted({name for rep in reports for name in rep.mean_pairwise_distance})
    fields = [
        "cycle",
        "calls",
        "cells_discovered",
        "cells_beyond_train",
        "valid_puzzles",
        "valid_beyond_train",
        "cell_entropy_bits",
    ]
    fields += [f"pairwise_{s}" for s in dist_spaces] + [f"vendi_{s}" for s in spaces]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for rep in reports:
            row = {
                "cycle": rep.cycle,
                "calls": rep.calls,
                "cells_discovered": rep.cells_discovered,
                "cells_beyond_train": rep.cells_beyond_train,
                "valid_puzzles": rep.valid_puzzles,
                "valid_beyond_train": rep.valid_beyond_train,
                "cell_entropy_bits": _fmt(rep.cell_entropy_bits),
            }
            for s in dist_spaces:
                row[f"pairwise_{s}"] = _fmt(rep.mean_pairwise_distance.get(s))
            for s in spaces:
                row[f"vendi_{s}"] = _fmt(rep.vendi.get(s))
            writer.writerow(row)


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"

"""Quantitative evaluation of an archive snapshot.

Everything here is a pure function: counts and entropy over the semantic
cells, distance/eigenvalue diversity over embedding sets, the unbiased
pass@k estimator, Frechet distance between embedding distributions, and
per-skill confusion tallies against hand labels.
"""

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import N_SKILLS, Puzzle, PuzzleRecord, SemanticVector

logger = logging.getLogger(__name__)


class MetricError(Exception):
    pass


@dataclass
class MetricsReport:
    """All diversity/evaluation numbers for one snapshot of a run."""

    cycle: int
    calls: int
    cells_discovered: int
    cells_beyond_train: int
    valid_puzzles: int
    valid_beyond_train: int
    cell_entropy_bits: Optional[float] = None
    mean_pairwise_distance: dict[str, float] = field(default_factory=dict)
    vendi: dict[str, float] = field(default_factory=dict)
    fid: Optional[dict[str, float]] = None
    pass_at_k: Optional[dict[int, float]] = None
    timestamp: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "calls": self.calls,
            "cells_discovered": self.cells_discovered,
            "cells_beyond_train": self.cells_beyond_train,
            "valid_puzzles": self.valid_puzzles,
            "valid_beyond_train": self.valid_beyond_train,
            "cell_entropy_bits": self.cell_entropy_bits,
            "mean_pairwise_distance": self.mean_pairwise_distance,
            "vendi": self.vendi,
            "fid": self.fid,
            "pass_at_k": self.pass_at_k,
            "timestamp": self.timestamp,
        }


def count_metrics(archive) -> tuple[int, int, int, int]:
    """(cells discovered, cells beyond train, valid generated, ... beyond train)."""
    occupied = archive.occupied_cells()
    cells_discovered = len(occupied)
    cells_beyond = sum(1 for c in occupied if c not in archive.train_cells)
    generated = archive.generated_records()
    valid = len(generated)
    valid_beyond = sum(1 for r in generated if r.label not in archive.train_cells)
    return cells_discovered, cells_beyond, valid, valid_beyond


def cell_entropy(archive) -> float:
    """Shannon entropy (bits) of the generated records' cell distribution."""
    counts: dict[SemanticVector, int] = {}
    for rec in archive.generated_records():
        counts[rec.label] = counts.get(rec.label, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise MetricError("cell entropy is undefined without generated records")
    return -sum((c / total) * math.log2(c / total) for c in counts.values())


def _as_matrix(embeddings) -> np.ndarray:
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricError("embeddings must form a 2-D array")
    return arr


def mean_pairwise_distance(embeddings, metric: str = "cosine") -> float:
    """Mean of 1 - cosine similarity over all unordered pairs."""
    if metric != "cosine":
        raise MetricError(f"unsupported metric {metric!r}")
    x = _as_matrix(embeddings)
    n = len(x)
    if n < 2:
        raise MetricError("need at least 2 embeddings")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise MetricError("zero vector has no cosine distance")
    unit = x / norms[:, None]
    sims = unit @ unit.T
    iu = np.triu_indices(n, k=1)
    return float(np.mean(1.0 - sims[iu]))


def vendi_score(embeddings, similarity: str = "cosine") -> float:
    """Effective diversity count: exp of the eigenvalue entropy of K/n.

    K is the cosine kernel on unit-normalized rows, so its diagonal is 1
    and the score lands in [1, n].
    """
    if similarity != "cosine":
        raise MetricError(f"unsupported similarity {similarity!r}")
    x = _as_matrix(embeddings)
    if len(x) == 0:
        raise MetricError("need at least 1 embedding")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise MetricError("zero vector has no cosine similarity")
    unit = x / norms[:, None]
    kernel = unit @ unit.T
    eigs = np.linalg.eigvalsh(kernel / len(x))
    if np.any(eigs < -1e-8):
        raise MetricError(f"similarity kernel is not PSD (min eigenvalue {eigs.min():.3g})")
    eigs = np.clip(eigs, 0.0, None)
    nonzero = eigs[eigs > 0]
    return float(np.exp(-np.sum(nonzero * np.log(nonzero))))


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator: 1 - C(n-c, k) / C(n, k), via a stable product."""
    if not 0 <= c <= n:
        raise MetricError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise MetricError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(k):
        prod *= (n - c - i) / (n - i)
    return 1.0 - prod


def fid(set_a, set_b) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    A small diagonal shrinkage (1e-6) keeps covariances well-conditioned at
    desk-scale sample counts; the cross-covariance square root goes through
    a symmetric eigen-decomposition with negative eigenvalues clipped to 0.
    """
    a = _as_matrix(set_a)
    b = _as_matrix(set_b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = _shrunk_cov(a)
    cov_b = _shrunk_cov(b)

    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    eigs = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_cross = float(np.sum(np.sqrt(eigs)))

    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    return mean_term + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * trace_cross


def _shrunk_cov(x: np.ndarray, shrinkage: float = 1e-6) -> np.ndarray:
    if len(x) < 2:
        cov = np.zeros((x.shape[1], x.shape[1]))
    else:
        cov = np.cov(x, rowvar=False)
        cov = np.atleast_2d(cov)
    return cov + shrinkage * np.eye(x.shape[1])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(mat)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


@dataclass(frozen=True)
class SkillConfusion:
    """Binary confusion counts for one skill dimension."""

    skill: int
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def support_present(self) -> int:
        return self.tp + self.fn

    @property
    def support_absent(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion_matrices(
    truth: Sequence[SemanticVector], predicted: Sequence[SemanticVector]
) -> list[SkillConfusion]:
    """Per-skill confusion counts of predicted labels against ground truth."""
    if len(truth) != len(predicted):
        raise MetricError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    out = []
    for i in range(N_SKILLS):
        tp = tn = fp = fn = 0
        for t, p in zip(truth, predicted):
            if t.bits[i] and p.bits[i]:
                tp += 1
            elif t.bits[i] and not p.bits[i]:
                fn += 1
            elif not t.bits[i] and p.bits[i]:
                fp += 1
            else:
                tn += 1
        out.append(SkillConfusion(i, tp, tn, fp, fn))
    return out


def complexity_ratio(
    puzzle: Puzzle, ast_counter: Callable[[str], Optional[int]]
) -> tuple[float, Optional[float]]:
    """Solution share of the puzzle: characters, and parse-tree nodes if countable."""
    f_len, g_len = len(puzzle.f_source), len(puzzle.g_source)
    char_ratio = g_len / (f_len + g_len) if (f_len + g_len) else 0.0
    f_nodes = ast_counter(puzzle.f_source)
    g_nodes = ast_counter(puzzle.g_source)
    ast_ratio = None
    if f_nodes is not None and g_nodes is not None and (f_nodes + g_nodes) > 0:
        ast_ratio = g_nodes / (f_nodes + g_nodes)
    return char_ratio, ast_ratio


_ALL_ONES = SemanticVector((1,) * N_SKILLS)


def confusion_sample(
    records: Sequence[PuzzleRecord], n: int = 60, rng: random.Random | None = None
) -> list[PuzzleRecord]:
    """Pick records for hand-labeling: half uniform, half skill-balancing.

    The second half repeatedly draws from the records carrying the skill
    currently least represented in the selection, skipping the anomalous
    all-skills labels. Returns fewer than n (with a warning) when the pool
    runs dry.
    """
    if not records:
        raise MetricError("cannot sample from an empty record set")
    rng = rng if rng is not None else random.Random(0)
    pool = [r for r in records if r.label is not None]

    selected: list[PuzzleRecord] = []
    n_uniform = n // 2
    take = min(n_uniform, len(pool))
    selected.extend(rng.sample(pool, take))
    chosen_ids = {r.id for r in selected}
    remaining = [r for r in pool if r.id not in chosen_ids]

    skill_counts = [0] * N_SKILLS
    for rec in selected:
        for i in rec.label.active_indices():
            skill_counts[i] += 1

    eligible = [r for r in remaining if r.label != _ALL_ONES]
    while len(selected) < n and eligible:
        candidates_by_skill = {
            i: [r for r in eligible if r.label.bits[i]] for i in range(N_SKILLS)
        }
        coverable = [i for i, recs in candidates_by_skill.items() if recs]
        if not coverable:
            break
        least = min(coverable, key=lambda i: (skill_counts[i], i))
        pick = rng.choice(candidates_by_skill[least])
        selected.append(pick)
        eligible = [r for r in eligible if r.id != pick.id]
        for i in pick.label.active_indices():
            skill_counts[i] += 1

    if len(selected) < n:
        logger.warning("confusion sample short: %d of %d requested", len(selected), n)
    return selected

"""Centroidal Voronoi tessellation archive over a continuous embedding space.

The tessellation is built once per run: bootstrap-sample train embeddings,
blur them with Gaussian noise, project to the unit sphere, then k-means
down to a fixed number of centroids. Cell membership afterwards is
nearest-centroid on the sphere.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import CvtSettings, PuzzleRecord

logger = logging.getLogger(__name__)

CvtConfig = CvtSettings


class CvtError(Exception):
    pass


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise CvtError("cannot normalize a zero vector")
    return x / norms


def kmeans(
    points: np.ndarray,
    k: int,
    max_iters: int = 100,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are reseeded to the point farthest from its current
    centroid. Returns (centroids, wcss_history); the within-cluster sum of
    squares is recorded once per iteration and is non-increasing.
    """
    if k <= 0:
        raise CvtError("k must be positive")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise CvtError("points must be a 2-D array")
    n_distinct = len(np.unique(points, axis=0))
    if n_distinct < k:
        raise CvtError(f"need at least {k} distinct points, have {n_distinct}")
    rng = rng if rng is not None else np.random.default_rng()

    centroids = _kmeans_pp_seed(points, k, rng)
    wcss_history: list[float] = []
    for _ in range(max_iters):
        dists = _sq_distances(points, centroids)
        labels = np.argmin(dists, axis=1)
        point_dists = dists[np.arange(len(points)), labels]
        wcss_history.append(float(point_dists.sum()))

        new_centroids = _cluster_means(points, labels, k, centroids)
        empty = np.flatnonzero(np.bincount(labels, minlength=k) == 0)
        for idx in empty:
            farthest = int(np.argmax(point_dists))
            new_centroids[idx] = points[farthest]
            point_dists[farthest] = 0.0  # don't hand one point to two reseeds
        move = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if move < tol:
            break
    return centroids, wcss_history


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    first = int(rng.integers(n))
    centroids = [points[first]]
    closest = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; pick any
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids.append(points[idx])
        closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centroids)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # |x - c|^2 expanded; one matmul instead of a broadcast cube
    cross = points @ centroids.T
    p2 = np.sum(points**2, axis=1)[:, None]
    c2 = np.sum(centroids**2, axis=1)[None, :]
    return np.maximum(p2 - 2.0 * cross + c2, 0.0)


def _cluster_means(
    points: np.ndarray, labels: np.ndarray, k: int, fallback: np.ndarray
) -> np.ndarray:
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    dim = points.shape[1]
    sums = np.empty((k, dim))
    for j in range(dim):
        sums[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
    means = fallback.copy()
    occupied = counts > 0
    means[occupied] = sums[occupied] / counts[occupied, None]
    return means


def build_centroids(train_embeddings: np.ndarray, cfg: CvtConfig) -> np.ndarray:
    """Bootstrap + noise + unit normalization + k-means, per the run config.

    Returns an (n_centroids, dim) array of unit-norm centroids.
    """
    emb = np.asarray(train_embeddings, dtype=np.float64)
    if emb.ndim != 2 or len(emb) == 0:
        raise CvtError("train embeddings must be a non-empty 2-D array")
    rng = np.random.default_rng(cfg.rng_seed)
    picks = rng.integers(len(emb), size=cfg.n_bootstrap)
    cloud = emb[picks] + rng.normal(
        0.0, np.sqrt(cfg.noise_variance), size=(cfg.n_bootstrap, emb.shape[1])
    )
    cloud = _unit_rows(cloud)
    centroids, wcss = kmeans(
        cloud,
        cfg.n_centroids,
        max_iters=cfg.kmeans_max_iters,
        tol=cfg.kmeans_tol,
        rng=rng,
    )
    logger.info(
        "tessellation: %d centroids, %d Lloyd iterations, wcss %.4f -> %.4f",
        cfg.n_centroids,
        len(wcss),
        wcss[0],
        wcss[-1],
    )
    return _unit_rows(centroids)


@dataclass
class CvtArchive:
    """Fixed tessellation plus the records collected in each cell."""

    centroids: np.ndarray
    cells: dict[int, list[PuzzleRecord]] = field(default_factory=dict)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        norms = np.linalg.norm(self.centroids, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise CvtError("centroids must be unit-norm")

    @classmethod
    def build(cls, train_embeddings: np.ndarray, cfg: CvtConfig) -> "CvtArchive":
        return cls(centroids=build_centroids(train_embeddings, cfg))

    def assign(self, embedding) -> int:
        """Cell index for an embedding: nearest centroid on the unit sphere.

        The query is unit-normalized first; ties go to the lowest index.
        """
        vec = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.centroids.shape[1]:
            raise CvtError(
                f"embedding dim {vec.shape[0]} != centroid dim {self.centroids.shape[1]}"
            )
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise CvtError("cannot assign a zero embedding")
        sims = self.centroids @ (vec / norm)
        return int(np.argmax(sims))

    def insert(self, record: PuzzleRecord, embedding) -> int:
        idx = self.assign(embedding)
        self.cells.setdefault(idx, []).append(record)
        return idx

    def occupied_cells(self) -> list[int]:
        return sorted(self.cells)

    def __len__(self) -> int:
        return sum(len(v) for v in self.cells.values())

    # -- persistence -------------------------------------------------------

    def save_centroids(self, path, config_hash: str = "") -> None:
        payload = {
            "dimension": int(self.centroids.shape[1]),
            "count": int(self.centroids.shape[0]),
            "config_hash": config_hash,
            "centroids": self.centroids.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_centroids(cls, path) -> "CvtArchive":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        centroids = np.asarray(payload["centroids"], dtype=np.float64)
        if centroids.shape != (payload["count"], payload["dimension"]):
            raise CvtError(f"{path}: centroid matrix does not match header")
        return cls(centroids=centroids)

import itertools

import numpy as np
import pytest

from aces.core import CvtSettings
from aces.cvt import CvtArchive, CvtError, build_centroids, kmeans

from helpers import generated_record


def brute_force_two_partition(points):
    """Best 2-cluster WCSS over all assignments; the oracle for the 4-point case."""
    best = None
    n = len(points)
    for mask in range(1, 2**n - 1):
        a = points[[i for i in range(n) if mask >> i & 1]]
        b = points[[i for i in range(n) if not mask >> i & 1]]
        wcss = ((a - a.mean(0)) ** 2).sum() + ((b - b.mean(0)) ** 2).sum()
        if best is None or wcss < best[0]:
            best = (wcss, {tuple(a.mean(0)), tuple(b.mean(0))})
    return best


class TestKmeans:
    def test_k_equals_n_distinct_points(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        centroids, _ = kmeans(points, 3, rng=np.random.default_rng(0))
        got = {tuple(c) for c in centroids}
        assert got == {tuple(p) for p in points}

    def test_four_point_oracle(self):
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        oracle_wcss, oracle_centroids = brute_force_two_partition(points)
        centroids, wcss = kmeans(points, 2, rng=np.random.default_rng(1))
        got = {tuple(np.round(c, 9)) for c in centroids}
        assert got == {tuple(np.round(np.array(c), 9)) for c in oracle_centroids}
        assert got == {(0.0, 0.5), (10.0, 0.5)}
        assert wcss[-1] <= oracle_wcss + 1e-9

    def test_wcss_monotone_non_increasing(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((300, 6))
        for k in (2, 7, 25):
            _, wcss = kmeans(points, k, rng=np.random.default_rng(k))
            assert all(a >= b - 1e-9 for a, b in itertools.pairwise(wcss))

    def test_k_nonpositive_rejected(self):
        with pytest.raises(CvtError):
            kmeans(np.zeros((4, 2)), 0)

    def test_too_few_distinct_points_rejected(self):
        points = np.array([[1.0, 1.0]] * 5)
        with pytest.raises(CvtError):
            kmeans(points, 2)


class TestBuildCentroids:
    def test_degenerate_single_input(self):
        # one distinct input in the small-noise limit collapses onto it
        vec = np.array([[3.0, 4.0]])
        cfg = CvtSettings(
            n_bootstrap=50, noise_variance=1e-12, n_centroids=1, rng_seed=0
        )
        centroids = build_centroids(vec, cfg)
        assert centroids.shape == (1, 2)
        np.testing.assert_allclose(centroids[0], [0.6, 0.8], atol=1e-5)

    def test_separation_oracle(self):
        inputs = np.eye(4)
        cfg = CvtSettings(
            n_bootstrap=100, noise_variance=1e-6, n_centroids=4, rng_seed=2
        )
        centroids = build_centroids(inputs, cfg)
        assert centroids.shape == (4, 4)
        # each centroid within 0.05 cosine distance of some input
        sims = centroids @ inputs.T
        assert np.all(1.0 - sims.max(axis=1) < 0.05)
        # and each input owns its own cell
        assert len(set(np.argmax(sims, axis=1))) == 4

    def test_centroids_unit_norm(self):
        rng = np.random.default_rng(3)
        inputs = rng.standard_normal((40, 8))
        cfg = CvtSettings(n_bootstrap=500, noise_variance=0.5, n_centroids=16, rng_seed=3)
        centroids = build_centroids(inputs, cfg)
        np.testing.assert_allclose(np.linalg.norm(centroids, axis=1), 1.0, atol=1e-6)

    def test_more_centroids_than_bootstrap_rejected(self):
        with pytest.raises(ValueError):
            CvtSettings(n_bootstrap=10, n_centroids=11)

    def test_empty_input_rejected(self):
        with pytest.raises(CvtError):
            build_centroids(np.zeros((0, 4)), CvtSettings(n_bootstrap=10, n_centroids=2))


class TestAssign:
    def setup_method(self):
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((12, 5))
        self.archive = CvtArchive(raw / np.linalg.norm(raw, axis=1, keepdims=True))

    def test_exact_centroid(self):
        assert self.archive.assign(self.archive.centroids[7]) == 7

    def test_tie_prefers_lowest_index(self):
        c = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        # duplicate centroids 0 and 2: query equal to both must pick 0
        archive = CvtArchive(c)
        assert archive.assign([2.0, 0.0]) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(CvtError):
            self.archive.assign(np.ones(4))

    def test_zero_vector_rejected(self):
        with pytest.raises(CvtError):
            self.archive.assign(np.zeros(5))

    def test_brute_force_scan_oracle(self):
        rng = np.random.default_rng(11)
        queries = rng.standard_normal((100, 5))
        for q in queries:
            got = self.archive.assign(q)
            unit = q / np.linalg.norm(q)
            dists = np.linalg.norm(self.archive.centroids - unit, axis=1)
            assert got == int(np.argmin(dists))

    def test_assign_pure(self):
        q = np.arange(5, dtype=float)
        assert self.archive.assign(q) == self.archive.assign(q)

    def test_insert_groups_records(self):
        rec = generated_record("cvt", "0000000001")
        idx = self.archive.insert(rec, self.archive.centroids[3])
        assert idx == 3
        assert len(self.archive.cells[3]) == 1


class TestPersistence:
    def test_centroid_roundtrip(self, tmp_path):
        rng = np.random.default_rng(13)
        raw = rng.standard_normal((6, 4))
        archive = CvtArchive(raw / np.linalg.norm(raw, axis=1, keepdims=True))
        path = tmp_path / "centroids.json"
        archive.save_centroids(path, config_hash="cfg1")
        loaded = CvtArchive.load_centroids(path)
        np.testing.assert_allclose(loaded.centroids, archive.centroids)

    def test_non_unit_centroids_rejected(self):
        with pytest.raises(CvtError):
            CvtArchive(np.array([[2.0, 0.0]]))

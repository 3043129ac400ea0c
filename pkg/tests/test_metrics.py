import ast
import itertools
import math
import random

import numpy as np
import pytest

from aces.archive import SemanticArchive
from aces.core import Puzzle, SemanticVector
from aces.metrics import (
    MetricError,
    cell_entropy,
    complexity_ratio,
    confusion_matrices,
    confusion_sample,
    count_metrics,
    fid,
    mean_pairwise_distance,
    pass_at_k,
    vendi_score,
)

from helpers import pow88, generated_record, train_record


def vec(s: str) -> SemanticVector:
    return SemanticVector.from_string(s)


class TestCountMetrics:
    def test_fresh_seed(self):
        archive = SemanticArchive.seed(
            [train_record("a", "0000000001"), train_record("b", "0000000011")]
        )
        assert count_metrics(archive) == (2, 0, 0, 0)

    def test_hand_enumeration(self):
        archive = SemanticArchive.seed(
            [train_record("a", "0000000001"), train_record("b", "0000000011")]
        )
        archive.insert(generated_record("g1", "0000000001"))  # into seed cell A
        archive.insert(generated_record("g2", "0000000111"))  # new cell C
        assert count_metrics(archive) == (3, 1, 2, 1)

    def test_empty(self):
        assert count_metrics(SemanticArchive()) == (0, 0, 0, 0)


class TestCellEntropy:
    def test_single_cell_zero(self):
        archive = SemanticArchive()
        for i in range(5):
            archive.insert(generated_record(f"e{i}", "0000000001"))
        assert cell_entropy(archive) == 0.0

    def test_uniform_four_cells(self):
        archive = SemanticArchive()
        labels = ["0000000001", "0000000010", "0000000100", "0000001000"]
        for i, lab in enumerate(labels * 3):
            archive.insert(generated_record(f"u{i}", lab))
        assert cell_entropy(archive) == pytest.approx(2.0, abs=1e-12)

    def test_three_one_split(self):
        archive = SemanticArchive()
        for i in range(3):
            archive.insert(generated_record(f"a{i}", "0000000001"))
        archive.insert(generated_record("b", "0000000010"))
        assert cell_entropy(archive) == pytest.approx(0.8113, abs=1e-4)

    def test_train_records_excluded(self):
        archive = SemanticArchive.seed([train_record("t", "1110000000")])
        with pytest.raises(MetricError):
            cell_entropy(archive)

    def test_maximal_exactly_for_uniform(self):
        rng = random.Random(0)
        for trial in range(20):
            archive = SemanticArchive()
            n_cells = rng.randint(2, 6)
            labels = [format(1 << i, "010b") for i in range(n_cells)]
            uniform = trial % 2 == 0
            counts = [3] * n_cells if uniform else [3] + [1] * (n_cells - 1)
            i = 0
            for lab, cnt in zip(labels, counts):
                for _ in range(cnt):
                    archive.insert(generated_record(f"m{trial}-{i}", lab))
                    i += 1
            h = cell_entropy(archive)
            if uniform:
                assert h == pytest.approx(math.log2(n_cells), abs=1e-9)
            else:
                assert h < math.log2(n_cells) - 1e-9


class TestMeanPairwiseDistance:
    def test_identical_vectors(self):
        x = np.tile([1.0, 2.0, 3.0], (5, 1))
        assert mean_pairwise_distance(x) == pytest.approx(0.0, abs=1e-12)

    def test_two_orthogonal(self):
        x = np.array([[1.0, 0.0], [0.0, 5.0]])
        assert mean_pairwise_distance(x) == pytest.approx(1.0, abs=1e-12)

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((10, 4))
        total, pairs = 0.0, 0
        for i in range(10):
            for j in range(i + 1, 10):
                cos = x[i] @ x[j] / (np.linalg.norm(x[i]) * np.linalg.norm(x[j]))
                total += 1.0 - cos
                pairs += 1
        assert mean_pairwise_distance(x) == pytest.approx(total / pairs, abs=1e-6)

    def test_too_few_rejected(self):
        with pytest.raises(MetricError):
            mean_pairwise_distance(np.ones((1, 3)))

    def test_zero_vector_rejected(self):
        with pytest.raises(MetricError):
            mean_pairwise_distance(np.array([[0.0, 0.0], [1.0, 0.0]]))


class TestVendiScore:
    def test_identical_vectors_score_one(self):
        x = np.tile([0.3, 0.4], (7, 1))
        assert vendi_score(x) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_vectors_score_n(self):
        for n in (2, 3, 5):
            x = np.eye(n)
            assert vendi_score(x) == pytest.approx(n, abs=1e-9)

    def test_two_vectors_cosine_half(self):
        x = np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        assert vendi_score(x) == pytest.approx(1.7548, abs=1e-3)

    def test_block_kernel_identity(self):
        # k orthogonal directions, each repeated m times, scores exactly k
        for k in range(1, 6):
            for m in range(1, 6):
                x = np.repeat(np.eye(k), m, axis=0)
                assert vendi_score(x) == pytest.approx(k, abs=1e-8)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            vendi_score(np.zeros((0, 3)))


def pass_at_k_enumeration(n: int, c: int, k: int) -> float:
    """Subset-enumeration oracle: fraction of k-subsets hitting a correct sample."""
    hits = 0
    subsets = list(itertools.combinations(range(n), k))
    for s in subsets:
        if any(i < c for i in s):
            hits += 1
    return hits / len(subsets)


class TestPassAtK:
    def test_no_correct(self):
        assert pass_at_k(10, 0, 5) == 0.0

    def test_all_correct(self):
        assert pass_at_k(1, 1, 1) == 1.0

    def test_five_two_two(self):
        assert pass_at_k(5, 2, 2) == pytest.approx(pass_at_k_enumeration(5, 2, 2), abs=1e-12)
        assert pass_at_k(5, 2, 2) == pytest.approx(0.7, abs=1e-12)

    def test_enumeration_oracle_grid(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k(n, c, k) == pytest.approx(
                        pass_at_k_enumeration(n, c, k), abs=1e-9
                    )

    def test_k_above_n_rejected(self):
        with pytest.raises(MetricError):
            pass_at_k(3, 1, 4)

    def test_c_above_n_rejected(self):
        with pytest.raises(MetricError):
            pass_at_k(3, 4, 1)

    def test_large_n_stays_finite(self):
        # the naive binomial-coefficient route would overflow floats here
        value = pass_at_k(10_000, 3, 100)
        assert 0.0 < value < 1.0
        assert value == pytest.approx(1 - (1 - 3 / 10_000) ** 100, rel=0.02)


class TestFid:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 6))
        assert fid(x, x) == pytest.approx(0.0, abs=1e-6)

    def test_mean_shift_closed_form(self):
        rng = np.random.default_rng(3)
        dim, n = 8, 5000
        shift = np.full(dim, 0.7)
        a = rng.standard_normal((n, dim))
        b = rng.standard_normal((n, dim)) + shift
        expected = float(shift @ shift)
        assert fid(a, b) == pytest.approx(expected, rel=0.05)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((40, 5))
        b = rng.standard_normal((60, 5)) * 2.0 + 1.0
        assert fid(a, b) == pytest.approx(fid(b, a), rel=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(MetricError):
            fid(np.ones((5, 3)), np.ones((5, 4)))

    def test_tiny_sets_survive_via_shrinkage(self):
        # far fewer samples than dimensions: the diagonal shrinkage keeps
        # the covariances usable instead of erroring out
        a = np.array([[0.0, 0.0, 0.0, 0.0]])
        b = np.array([[2.0, 0.0, 0.0, 0.0]])
        assert fid(a, b) == pytest.approx(4.0, abs=1e-3)


class TestConfusionMatrices:
    def test_perfect_prediction(self):
        truth = [vec("1100010000"), vec("0000000001")]
        mats = confusion_matrices(truth, truth)
        assert all(m.fp == 0 and m.fn == 0 for m in mats)

    def test_single_flip(self):
        truth = [vec("1000000000")]
        pred = [vec("0100000000")]
        mats = confusion_matrices(truth, pred)
        assert mats[0].fn == 1 and mats[0].tp == 0
        assert mats[1].fp == 1 and mats[1].tn == 0

    def test_tally_oracle_random_pairs(self):
        rng = random.Random(5)
        truth, pred = [], []
        for _ in range(20):
            truth.append(vec("".join(rng.choice("01") for _ in range(10))))
            pred.append(vec("".join(rng.choice("01") for _ in range(10))))
        mats = confusion_matrices(truth, pred)
        for i in range(10):
            tp = sum(1 for t, p in zip(truth, pred) if t.bits[i] and p.bits[i])
            tn = sum(1 for t, p in zip(truth, pred) if not t.bits[i] and not p.bits[i])
            fp = sum(1 for t, p in zip(truth, pred) if not t.bits[i] and p.bits[i])
            fn = sum(1 for t, p in zip(truth, pred) if t.bits[i] and not p.bits[i])
            assert (mats[i].tp, mats[i].tn, mats[i].fp, mats[i].fn) == (tp, tn, fp, fn)
        assert len({m.total for m in mats}) == 1  # same evaluation-set size everywhere

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            confusion_matrices([vec("0000000000")], [])


class TestComplexityRatio:
    @staticmethod
    def counter(source):
        try:
            return sum(1 for _ in ast.walk(ast.parse(source)))
        except SyntaxError:
            return None

    def test_identical_f_and_g_half(self):
        src = "def f(x):\n    return x == 1"
        p = Puzzle(f_source=src, g_source=src)
        char_ratio, ast_ratio = complexity_ratio(p, self.counter)
        assert char_ratio == pytest.approx(0.5)
        assert ast_ratio == pytest.approx(0.5)

    def test_empty_g(self):
        p = Puzzle(f_source="def f(x):\n    return True", g_source="")
        char_ratio, _ = complexity_ratio(p, self.counter)
        assert char_ratio == 0.0

    def test_pow88_hand_counts(self):
        # hand-counted source sizes: f is 172 chars, g is 62
        char_ratio, ast_ratio = complexity_ratio(pow88(), self.counter)
        assert char_ratio == pytest.approx(62 / (172 + 62), abs=1e-12)
        assert ast_ratio is not None

    def test_unparsable_g_drops_ast_ratio(self):
        p = Puzzle(f_source="def f(x):\n    return True", g_source="def g(:\n    oops")
        char_ratio, ast_ratio = complexity_ratio(p, self.counter)
        assert char_ratio > 0
        assert ast_ratio is None


class TestConfusionSample:
    def test_forced_two_skills(self):
        records = [
            generated_record("s0", "1000000000"),
            generated_record("s1", "0100000000"),
        ]
        picked = confusion_sample(records, n=2, rng=random.Random(0))
        assert len(picked) == 2
        assert {str(r.label) for r in picked} == {"1000000000", "0100000000"}

    def test_all_ones_excluded_from_balancing_half(self):
        # only all-ones records carry skill 8; the balancing half must skip them
        records = [generated_record(f"n{i}", "1000000000") for i in range(10)]
        records += [generated_record(f"o{i}", "1111111111") for i in range(5)]
        for trial in range(50):
            picked = confusion_sample(records, n=10, rng=random.Random(trial))
            balancing_half = picked[5:]
            assert all(str(r.label) != "1111111111" for r in balancing_half)

    def test_every_skill_covered_in_simulation(self):
        rng_pool = random.Random(99)
        records = []
        for i in range(200):
            bits = ["0"] * 10
            for j in range(1 + rng_pool.randint(0, 2)):
                bits[rng_pool.randint(0, 9)] = "1"
            records.append(generated_record(f"sim{i}", "".join(bits)))
        for seed in range(100):
            picked = confusion_sample(records, n=60, rng=random.Random(seed))
            covered = set()
            for rec in picked:
                covered.update(rec.label.active_indices())
            present = set()
            for rec in records:
                if rec.label != vec("1111111111"):
                    present.update(rec.label.active_indices())
            assert present <= covered

    def test_no_duplicates(self):
        records = [generated_record(f"d{i}", format(1 << (i % 10), "010b")) for i in range(40)]
        picked = confusion_sample(records, n=30, rng=random.Random(1))
        ids = [r.id for r in picked]
        assert len(ids) == len(set(ids))

    def test_short_pool_warns(self, caplog):
        records = [generated_record("only", "1000000000")]
        with caplog.at_level("WARNING"):
            picked = confusion_sample(records, n=10, rng=random.Random(0))
        assert len(picked) == 1
        assert "short" in caplog.text

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            confusion_sample([], n=5)

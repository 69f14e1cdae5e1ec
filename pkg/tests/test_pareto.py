import numpy as np
import pytest

from hwnas.pareto import (
    dominated_boxes,
    dominates,
    hypervolume,
    hypervolume_improvements,
    hypervolume_values,
    non_dominated_mask,
    pareto_filter,
)
from hwnas.records import EvaluationRecord, ObjectiveVector, logical_timestamp
from hwnas.search_space import random_genome


def make_records(values, subset=("error", "energy", "time")):
    """Wrap raw objective rows into records (unused axes get neutral values)."""
    rng = np.random.default_rng(0)
    g = random_genome(rng)
    records = []
    for i, row in enumerate(values):
        by = {"error": 0.5, "energy": 1.0, "time": 1.0}
        for name, v in zip(subset, row):
            by[name] = float(v)
        ov = ObjectiveVector(error=by["error"], energy_j=by["energy"], time_s=by["time"])
        records.append(EvaluationRecord(g, ov, "dev", i, "random", logical_timestamp(i)))
    return records


def brute_force_front(values):
    """All-pairs dominance oracle (O(n^2) broadcast)."""
    V = np.asarray(values, dtype=float)
    le = np.all(V[:, None, :] <= V[None, :, :], axis=2)
    lt = np.any(V[:, None, :] < V[None, :, :], axis=2)
    dominated = np.any(le & lt, axis=0)
    return ~dominated


class TestDominates:
    def test_paper_pair_error_energy(self):
        a = ObjectiveVector(0.2342, 1.16, 1.0)
        b = ObjectiveVector(0.2390, 1.32, 1.0)
        assert dominates(a, b, ("error", "energy"))
        assert not dominates(b, a, ("error", "energy"))

    def test_mutually_non_dominated_pair(self):
        a = ObjectiveVector(0.2216, 2.02, 1.0)
        b = ObjectiveVector(0.2588, 1.99, 1.0)
        assert not dominates(a, b, ("error", "energy"))
        assert not dominates(b, a, ("error", "energy"))

    def test_no_self_dominance(self):
        a = ObjectiveVector(0.3, 2.0, 0.5)
        assert not dominates(a, a)

    def test_three_objective_dominance(self):
        a = ObjectiveVector(0.2286, 815.0, 6.08)
        b = ObjectiveVector(0.2318, 1160.0, 8.18)
        assert dominates(a, b)

    def test_subset_selects_axes(self):
        a = ObjectiveVector(0.1, 10.0, 1.0)
        b = ObjectiveVector(0.2, 5.0, 2.0)
        assert dominates(a, b, ("error", "time"))
        assert not dominates(a, b, ("error", "energy"))


class TestParetoFilter:
    def test_single_record_is_front(self):
        recs = make_records([[0.5, 1.0, 1.0]])
        assert pareto_filter(recs) == recs

    def test_paper_pair_front(self):
        recs = make_records([[0.2342, 1.16], [0.2390, 1.32]], subset=("error", "energy"))
        front = pareto_filter(recs, ("error", "energy"))
        assert front == [recs[0]]

    def test_duplicates_both_kept(self):
        recs = make_records([[0.3, 1.0], [0.3, 1.0], [0.4, 2.0]], subset=("error", "energy"))
        front = pareto_filter(recs, ("error", "energy"))
        assert front == [recs[0], recs[1]]

    def test_order_preserved(self):
        rng = np.random.default_rng(1)
        recs = make_records(rng.random((50, 3)))
        front = pareto_filter(recs)
        iters = [r.iteration for r in front]
        assert iters == sorted(iters)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 200))
            d = int(rng.integers(2, 4))
            V = rng.random((n, d))
            assert np.array_equal(non_dominated_mask(V), brute_force_front(V))

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        recs = make_records(rng.random((100, 3)))
        front = pareto_filter(recs)
        assert pareto_filter(front) == front


class TestHypervolume:
    def test_unit_box(self):
        pts = [ObjectiveVector(0.5, 1.0, 1.0)]
        ref = ObjectiveVector(1.0, 2.0, 2.0)
        # (error, energy) 2-D: (1 - 0.5) * (2 - 1) = 0.5
        assert hypervolume(pts, ref, ("error", "energy")) == pytest.approx(0.5)

    def test_inclusion_exclusion_2d(self):
        assert hypervolume_values(np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([3.0, 3.0])) == pytest.approx(3.0)

    def test_unit_cube_3d(self):
        assert hypervolume_values(np.zeros((1, 3)), np.ones(3)) == pytest.approx(1.0)

    def test_points_at_or_beyond_ref_excluded(self):
        V = np.array([[1.0, 1.0], [5.0, 0.0], [2.0, 2.0]])
        assert hypervolume_values(V, np.array([2.0, 2.0])) == pytest.approx(1.0)

    def test_monotone_in_points(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            V = rng.random((20, 3))
            ref = np.array([1.1, 1.1, 1.1])
            base = hypervolume_values(V, ref)
            more = hypervolume_values(np.vstack([V, rng.random((1, 3))]), ref)
            assert more >= base - 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        V = rng.random((30, 3))
        ref = np.array([1.2, 1.2, 1.2])
        base = hypervolume_values(V, ref)
        for _ in range(5):
            perm = rng.permutation(30)
            assert hypervolume_values(V[perm], ref) == pytest.approx(base, rel=1e-12)

    def test_monte_carlo_oracle_2d_3d(self):
        rng = np.random.default_rng(6)
        for d in (2, 3):
            for _ in range(5):
                V = rng.random((15, d))
                ref = np.full(d, 1.1)
                exact = hypervolume_values(V, ref)
                samples = rng.random((200_000, d)) * 1.1
                inside = np.zeros(len(samples), dtype=bool)
                for p in V:
                    inside |= np.all(samples >= p, axis=1)
                mc = inside.mean() * 1.1**d
                assert exact == pytest.approx(mc, rel=0.03)


class TestBoxesAndImprovements:
    def test_boxes_are_disjoint_and_sum_to_hv(self):
        rng = np.random.default_rng(7)
        for d in (1, 2, 3):
            for _ in range(30):
                V = rng.random((int(rng.integers(1, 25)), d))
                ref = np.full(d, 1.2)
                boxes = dominated_boxes(V, ref)
                vol = float(np.sum(np.prod(boxes[:, 1, :] - boxes[:, 0, :], axis=1))) if len(boxes) else 0.0
                assert vol == pytest.approx(hypervolume_values(V, ref), abs=1e-10)

    def test_improvement_matches_direct_difference(self):
        rng = np.random.default_rng(8)
        for d in (2, 3):
            for _ in range(30):
                V = rng.random((int(rng.integers(1, 20)), d))
                ref = np.full(d, 1.1)
                base = hypervolume_values(V, ref)
                samples = rng.random((10, d)) * 1.2
                hvi = hypervolume_improvements(V, ref, samples)
                for k in range(10):
                    direct = hypervolume_values(np.vstack([V, samples[k]]), ref) - base
                    assert hvi[k] == pytest.approx(direct, abs=1e-10)

    def test_empty_front_improvement_is_own_box(self):
        ref = np.array([1.0, 1.0, 1.0])
        samples = np.array([[0.5, 0.5, 0.5], [2.0, 0.0, 0.0]])
        hvi = hypervolume_improvements(np.empty((0, 3)), ref, samples)
        assert hvi[0] == pytest.approx(0.125)
        assert hvi[1] == pytest.approx(0.0)

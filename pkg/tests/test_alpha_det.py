"""
Tests for alpha-determinants, permanents and set partitions.
"""

import itertools
import math

import numpy as np
import pytest

from dppp_lab.src.alpha_det import (
    SetPartition,
    alpha_determinant,
    bell_number,
    cycle_count,
    heap_permutations,
    permanent_ryser,
    permanent_via_partitions,
    restricted_growth_strings,
    set_partitions,
)
from dppp_lab.src.errors import SizeLimit


def brute_force_alpha_det(A, alpha):
    n = A.shape[0]
    total = 0.0
    for perm in itertools.permutations(range(n)):
        total += alpha ** (n - cycle_count(perm)) * math.prod(A[i, perm[i]] for i in range(n))
    return total


def test_heap_permutations_are_complete_and_distinct():
    for n in range(1, 7):
        perms = list(heap_permutations(n))
        assert len(perms) == math.factorial(n)
        assert len(set(perms)) == len(perms)


def test_cycle_count():
    assert cycle_count((0, 1, 2)) == 3
    assert cycle_count((1, 0, 2)) == 2
    assert cycle_count((1, 2, 0)) == 1
    assert cycle_count(()) == 0


def test_alpha_determinant_special_values():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))

    assert alpha_determinant(A, -1) == pytest.approx(np.linalg.det(A), rel=1e-12)
    assert alpha_determinant(A, 0) == pytest.approx(np.prod(np.diag(A)), rel=1e-12)
    assert alpha_determinant(A, 1) == pytest.approx(brute_force_alpha_det(A, 1.0), rel=1e-10)
    assert alpha_determinant(np.zeros((0, 0)), 0.5) == 1.0


@pytest.mark.parametrize("alpha", [-0.5, 0.5, 2.0, -1.0 / 3.0])
def test_alpha_determinant_methods_agree(alpha):
    rng = np.random.default_rng(1)
    for n in range(1, 7):
        A = rng.standard_normal((n, n))
        expected = brute_force_alpha_det(A, alpha)
        assert alpha_determinant(A, alpha, "permutations") == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert alpha_determinant(A, alpha, "cycle_covers") == pytest.approx(expected, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("alpha", [-1.0, -0.5, 0.0, 0.5, 1.0])
def test_dispatch_matches_both_exact_sums(alpha):
    rng = np.random.default_rng(7)
    for n in range(2, 9):
        for _ in range(50):
            A = rng.standard_normal((n, n))
            auto = alpha_determinant(A, alpha)
            assert alpha_determinant(A, alpha, "permutations") == pytest.approx(auto, rel=1e-9, abs=1e-9)
            assert alpha_determinant(A, alpha, "cycle_covers") == pytest.approx(auto, rel=1e-9, abs=1e-9)


class TestAlphaDeterminantStructure:
    def setup_method(self):
        self.rng = np.random.default_rng(11)
        self.alphas = [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0]

    def test_multilinear_in_each_row(self):
        for n in range(2, 7):
            A = self.rng.standard_normal((n, n))
            row = int(self.rng.integers(n))
            first, second = A.copy(), A.copy()
            first[row] = self.rng.standard_normal(n)
            second[row] = A[row] - first[row]
            scaled = A.copy()
            scaled[row] *= 2.5
            for alpha in self.alphas:
                total = alpha_determinant(A, alpha)
                split = alpha_determinant(first, alpha) + alpha_determinant(second, alpha)
                assert split == pytest.approx(total, abs=1e-10)
                assert alpha_determinant(scaled, alpha) == pytest.approx(2.5 * total, abs=1e-10)

    def test_invariant_under_simultaneous_row_and_column_permutation(self):
        for n in range(2, 8):
            A = self.rng.standard_normal((n, n))
            P = np.eye(n)[self.rng.permutation(n)]
            for alpha in self.alphas:
                assert alpha_determinant(P @ A @ P.T, alpha) == pytest.approx(
                    alpha_determinant(A, alpha), rel=1e-9, abs=1e-10
                )

    def test_repeated_rows(self):
        A = self.rng.uniform(0.1, 1.0, (5, 5))
        A[3] = A[1]
        for method in ("auto", "permutations", "cycle_covers"):
            assert abs(alpha_determinant(A, -1.0, method)) <= 1e-12
        assert alpha_determinant(A, 1.0) > 0.1 ** 5
        assert alpha_determinant(A, 1.0, "cycle_covers") == pytest.approx(brute_force_alpha_det(A, 1.0), rel=1e-10)


def test_alpha_determinant_cycle_covers_beyond_table():
    rng = np.random.default_rng(2)
    A = rng.uniform(0.0, 1.0, (9, 9))
    # alpha = 1 reduces to the permanent, which Ryser computes independently
    assert alpha_determinant(A, 1.0, "cycle_covers") == pytest.approx(permanent_ryser(A), rel=1e-10)


def test_alpha_determinant_rejects_bad_input():
    with pytest.raises(ValueError):
        alpha_determinant(np.ones((2, 3)), 0.5)
    with pytest.raises(ValueError):
        alpha_determinant(np.eye(2), 0.5, method="laplace")
    with pytest.raises(SizeLimit):
        alpha_determinant(np.eye(13), 0.5)


def test_permanent_small_cases():
    assert permanent_ryser(np.array([[1.0, 2.0], [3.0, 4.0]])) == pytest.approx(10.0)
    assert permanent_ryser(np.ones((3, 3))) == pytest.approx(6.0)
    assert permanent_ryser(np.ones((4, 4))) == pytest.approx(24.0)


def test_permanent_via_partitions_matches_ryser():
    assert permanent_via_partitions(np.ones((3, 3))) == pytest.approx(6.0)
    rng = np.random.default_rng(3)
    for n in range(1, 7):
        A = rng.standard_normal((n, n))
        assert permanent_via_partitions(A) == pytest.approx(permanent_ryser(A), rel=1e-9, abs=1e-12)


def test_set_partitions_are_counted_by_bell_numbers():
    assert [bell_number(n) for n in range(8)] == [1, 1, 2, 5, 15, 52, 203, 877]
    for n in range(6):
        assert len(list(restricted_growth_strings(n))) == bell_number(n)
        partitions = list(set_partitions(n))
        assert len(set(partitions)) == bell_number(n)
        assert all(p.size == n for p in partitions)


def test_set_partition_validation():
    assert SetPartition.from_growth_string((0, 1, 0)).blocks == ((0, 2), (1,))
    with pytest.raises(ValueError):
        SetPartition(((0,), (2,)))
    with pytest.raises(ValueError):
        bell_number(-1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

"""
Exact alpha-determinants, permanents and set partitions.

The alpha-determinant of an n x n matrix is

    det_alpha A = sum over sigma in S_n of alpha^(n - nu(sigma)) * prod_i a[i, sigma(i)]

where nu(sigma) counts the cycles of sigma. It is the usual determinant at alpha = -1,
the permanent at alpha = 1 and the diagonal product at alpha = 0.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterator, Tuple

import numpy as np

from ..config.config import (
    PARTITION_LIMIT,
    PERMUTATION_SUM_LIMIT,
    PERMUTATION_TABLE_LIMIT,
    RYSER_LIMIT,
)
from .errors import SizeLimit

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)

METHODS = ("auto", "permutations", "cycle_covers")


@dataclass(frozen=True)
class SetPartition:
    """A partition of {0, ..., n-1} into nonempty blocks."""

    blocks: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in block) for block in self.blocks)
        seen = [i for block in blocks for i in block]
        if any(len(block) == 0 for block in blocks):
            raise ValueError("Set partition blocks must be nonempty")
        if sorted(seen) != list(range(len(seen))):
            raise ValueError(f"Blocks {blocks} do not partition range({len(seen)})")
        object.__setattr__(self, "blocks", blocks)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def size(self) -> int:
        return sum(len(block) for block in self.blocks)

    @classmethod
    def from_growth_string(cls, growth: Tuple[int, ...]) -> "SetPartition":
        """Build the partition whose element i lies in block growth[i]."""
        blocks: Dict[int, list] = {}
        for element, label in enumerate(growth):
            blocks.setdefault(label, []).append(element)
        return cls(tuple(tuple(blocks[label]) for label in sorted(blocks)))


def heap_permutations(n: int) -> Iterator[Tuple[int, ...]]:
    """Yield every permutation of range(n) in Heap's order."""
    perm = list(range(n))
    yield tuple(perm)
    counters = [0] * n
    i = 1
    while i < n:
        if counters[i] < i:
            if i % 2 == 0:
                perm[0], perm[i] = perm[i], perm[0]
            else:
                j = counters[i]
                perm[j], perm[i] = perm[i], perm[j]
            yield tuple(perm)
            counters[i] += 1
            i = 1
        else:
            counters[i] = 0
            i += 1


def cycle_count(perm) -> int:
    """Number of cycles of a permutation, by union-find over its functional graph."""
    parent = list(range(len(perm)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    cycles = len(perm)
    for i, j in enumerate(perm):
        root_i, root_j = find(i), find(int(j))
        if root_i != root_j:
            parent[root_i] = root_j
            cycles -= 1
    return cycles


@lru_cache(maxsize=None)
def _permutation_table(n: int) -> Tuple[np.ndarray, np.ndarray]:
    perms = np.array(list(heap_permutations(n)), dtype=np.intp).reshape(-1, n)
    exponents = np.array([n - cycle_count(p) for p in perms.tolist()], dtype=np.int64)
    perms.setflags(write=False)
    exponents.setflags(write=False)
    logging.debug(f"Cached {len(perms)} permutations of size {n}")
    return perms, exponents


def _as_square(A) -> np.ndarray:
    matrix = np.asarray(A, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {matrix.shape}")
    return matrix


def _permutation_sum(A: np.ndarray, alpha: float) -> float:
    n = A.shape[0]
    if n <= PERMUTATION_TABLE_LIMIT:
        perms, exponents = _permutation_table(n)
        products = A[np.arange(n), perms].prod(axis=1)
        return float(np.dot(np.power(alpha, exponents), products))

    rows = range(n)
    total = 0.0
    for perm in heap_permutations(n):
        product = 1.0
        for i in rows:
            product *= A[i, perm[i]]
        total += alpha ** (n - cycle_count(perm)) * product
    return total


def _cycle_cover_sum(A: np.ndarray, alpha: float) -> float:
    """
    Evaluate the defining sum grouped by cycle covers.

    Every permutation is a set partition of the indices into directed cycles, and its
    weight alpha^(n - nu) splits as a product of alpha^(len - 1) over the cycles. The sum
    of products around all directed cycles on a subset T is obtained from Hamiltonian
    path sums anchored at min(T); the partition sum is then a subset recursion.
    """
    n = A.shape[0]
    size = 1 << n

    paths = np.zeros((size, n))
    for start in range(n):
        paths[1 << start, start] = 1.0
    cycle_sums = np.zeros(size)
    for mask in range(1, size):
        low = (mask & -mask).bit_length() - 1
        row = paths[mask]
        cycle_sums[mask] = row @ A[:, low]
        extended = row @ A
        for nxt in range(low + 1, n):
            bit = 1 << nxt
            if not mask & bit:
                paths[mask | bit, nxt] += extended[nxt]

    cycles = cycle_sums.tolist()
    powers = [alpha**k for k in range(n)]
    totals = [0.0] * size
    totals[0] = 1.0
    for mask in range(1, size):
        low_bit = mask & -mask
        rest = mask ^ low_bit
        acc = 0.0
        sub = rest
        while True:
            block = sub | low_bit
            acc += powers[block.bit_count() - 1] * cycles[block] * totals[mask ^ block]
            if sub == 0:
                break
            sub = (sub - 1) & rest
        totals[mask] = acc
    return float(totals[size - 1])


def alpha_determinant(A, alpha, method: str = "auto") -> float:
    """
    Compute det_alpha A.

    Args:
        A: square real matrix
        alpha: real parameter (floats and AlphaParameter both accepted)
        method: "auto" dispatches to LU (alpha=-1), Ryser (alpha=1), the diagonal
            product (alpha=0) or the general sum; "permutations" and "cycle_covers"
            force one of the two exact evaluations of the general sum

    Returns:
        float: the alpha-determinant (1.0 for the empty matrix)
    """
    matrix = _as_square(A)
    alpha = float(alpha)
    n = matrix.shape[0]
    if method not in METHODS:
        raise ValueError(f"Unknown alpha-determinant method '{method}'")
    if n == 0:
        return 1.0

    if method == "auto":
        if alpha == -1.0:
            return float(np.linalg.det(matrix))
        if alpha == 1.0:
            return permanent_ryser(matrix)
        if alpha == 0.0:
            return float(np.prod(np.diag(matrix)))
        method = "permutations" if n <= PERMUTATION_TABLE_LIMIT else "cycle_covers"

    if n > PERMUTATION_SUM_LIMIT:
        logging.error(f"General alpha-determinant requested for n={n}")
        raise SizeLimit(
            f"General alpha-determinant limited to n <= {PERMUTATION_SUM_LIMIT}, got {n}"
        )
    if method == "permutations":
        return _permutation_sum(matrix, alpha)
    return _cycle_cover_sum(matrix, alpha)


def permanent_ryser(A) -> float:
    """Permanent by Ryser's inclusion-exclusion formula with Gray-code column updates."""
    matrix = _as_square(A)
    n = matrix.shape[0]
    if n == 0:
        return 1.0
    if n > RYSER_LIMIT:
        raise SizeLimit(f"Ryser permanent limited to n <= {RYSER_LIMIT}, got {n}")

    row_sums = np.zeros(n)
    total = 0.0
    gray = 0
    for k in range(1, 1 << n):
        column = (k & -k).bit_length() - 1
        gray ^= 1 << column
        if gray >> column & 1:
            row_sums += matrix[:, column]
        else:
            row_sums -= matrix[:, column]
        sign = -1.0 if gray.bit_count() % 2 else 1.0
        total += sign * float(np.prod(row_sums))
    return (-1.0) ** n * total


def restricted_growth_strings(n: int) -> Iterator[Tuple[int, ...]]:
    """Yield restricted growth strings of length n in lexicographic order."""
    if n == 0:
        yield ()
        return
    growth = [0] * n
    while True:
        yield tuple(growth)
        i = n - 1
        while i > 0 and growth[i] > max(growth[:i]):
            i -= 1
        if i == 0:
            return
        growth[i] += 1
        for k in range(i + 1, n):
            growth[k] = 0


def set_partitions(n: int) -> Iterator[SetPartition]:
    for growth in restricted_growth_strings(n):
        yield SetPartition.from_growth_string(growth)


def permanent_via_partitions(A) -> float:
    """
    Permanent from principal minors over set partitions:

        per A = sum over partitions sigma of (-1)^(n + k) * k! * prod_blocks det A[block]

    with k the number of blocks.
    """
    matrix = _as_square(A)
    n = matrix.shape[0]
    if n == 0:
        return 1.0
    if n > PARTITION_LIMIT:
        raise SizeLimit(
            f"Partition expansion limited to n <= {PARTITION_LIMIT}, got {n}"
        )

    minors: Dict[Tuple[int, ...], float] = {}

    def minor(block: Tuple[int, ...]) -> float:
        if block not in minors:
            idx = np.array(block, dtype=np.intp)
            minors[block] = float(np.linalg.det(matrix[np.ix_(idx, idx)]))
        return minors[block]

    total = 0.0
    for partition in set_partitions(n):
        k = partition.block_count
        product = float(math.factorial(k))
        for block in partition.blocks:
            product *= minor(block)
        total += (-1.0) ** (n + k) * product
    return total


def bell_number(n: int) -> int:
    """Number of set partitions of an n-set, from the Bell triangle."""
    if n < 0:
        raise ValueError("Bell numbers are defined for n >= 0")
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for value in row:
            nxt.append(nxt[-1] + value)
        row = nxt
    return row[0]

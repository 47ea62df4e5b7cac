"""
Distributional objects of an alpha-determinantal point process on a ground space:
configurations, Laplace functionals, Janossy densities, correlation functions, the
exact probability mass oracle of small ground sets and the conditional thinning law.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import binom

from ..config.config import (
    EXACT_PMF_LIMIT,
    EXPANSION_ORDER_LIMIT,
    JANOSSY_CLAMP_TOLERANCE,
    MULTISET_PMF_LIMIT,
    THINNING_ATOM_LIMIT,
    ZERO_DENOMINATOR_TOLERANCE,
)
from .alpha_det import alpha_determinant
from .errors import (
    NegativeWeight,
    NormViolation,
    SizeLimit,
    UnsupportedAlpha,
    ZeroDenominator,
)
from .linalg_kernel import (
    AlphaKind,
    GroundSpace,
    KernelMatrix,
    as_alpha,
    fredholm_power,
    j_kernel_values,
    j_operator,
    rescale,
)

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


@dataclass(frozen=True)
class Configuration:
    """Finite configuration of node indices, stored as sorted (index, multiplicity) atoms."""

    atoms: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        merged: Dict[int, int] = {}
        for index, multiplicity in self.atoms:
            if int(multiplicity) < 1:
                raise ValueError(f"Atom {index} has multiplicity {multiplicity} < 1")
            if int(index) < 0:
                raise ValueError(f"Negative node index {index}")
            merged[int(index)] = merged.get(int(index), 0) + int(multiplicity)
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))

    @classmethod
    def from_indices(cls, indices: Iterable[int]) -> "Configuration":
        return cls(tuple((int(i), 1) for i in indices))

    @classmethod
    def from_counts(cls, counts) -> "Configuration":
        """Build from a per-node count vector."""
        counts = np.asarray(counts, dtype=np.int64)
        nonzero = np.flatnonzero(counts)
        return cls(tuple((int(i), int(counts[i])) for i in nonzero))

    @property
    def indices(self) -> Tuple[int, ...]:
        """Node indices repeated by multiplicity."""
        return tuple(i for i, m in self.atoms for _ in range(m))

    @property
    def size(self) -> int:
        return sum(m for _, m in self.atoms)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(i for i, _ in self.atoms)

    @property
    def is_simple(self) -> bool:
        return all(m == 1 for _, m in self.atoms)

    def multiplicity(self, index: int) -> int:
        return dict(self.atoms).get(int(index), 0)

    def counts(self, n: int) -> np.ndarray:
        vector = np.zeros(n, dtype=np.int64)
        for i, m in self.atoms:
            vector[i] = m
        return vector

    def union(self, other: "Configuration") -> "Configuration":
        return Configuration(self.atoms + other.atoms)

    def contains(self, other: "Configuration") -> bool:
        mine = dict(self.atoms)
        return all(mine.get(i, 0) >= m for i, m in other.atoms)

    def difference(self, other: "Configuration") -> "Configuration":
        if not self.contains(other):
            raise ValueError(f"{other} is not a sub-configuration of {self}")
        remaining = dict(self.atoms)
        for i, m in other.atoms:
            remaining[i] -= m
        return Configuration(tuple((i, m) for i, m in remaining.items() if m > 0))

    def positions(self, space: GroundSpace) -> np.ndarray:
        return space.nodes[np.array(self.indices, dtype=np.intp)]

    def __str__(self) -> str:
        return "{" + ", ".join(
            str(i) if m == 1 else f"{i}^{m}" for i, m in self.atoms
        ) + "}"


EMPTY = Configuration()


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Nonnegative function given by its values on the nodes."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if np.any(values < 0) or np.any(np.isnan(values)):
            raise NegativeWeight("Step function values must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, n: int, value: float) -> "StepFunction":
        return cls(np.full(n, float(value)))

    @classmethod
    def from_callable(cls, space: GroundSpace, fn: Callable) -> "StepFunction":
        return cls(np.asarray(fn(space.nodes), dtype=float))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, scale: float = 1.0) -> "StepFunction":
        return cls(rng.uniform(0.0, scale, size=n))

    def total(self, xi: Configuration) -> float:
        """<f, xi>, the sum of f over the atoms of xi."""
        return float(sum(self.values[i] * m for i, m in xi.atoms))


def _as_step(f, n: int) -> np.ndarray:
    values = f.values if isinstance(f, StepFunction) else StepFunction(f).values
    return np.broadcast_to(values, (n,))


def _indices(points) -> Tuple[int, ...]:
    if isinstance(points, Configuration):
        return points.indices
    return tuple(sorted(int(i) for i in points))


@lru_cache(maxsize=200_000)
def _configuration_det(K: KernelMatrix, alpha_value: float, indices: Tuple[int, ...]) -> float:
    if not indices:
        return 1.0
    idx = np.array(indices, dtype=np.intp)
    J = j_kernel_values(K, alpha_value)
    return alpha_determinant(J[np.ix_(idx, idx)], alpha_value)


def configuration_det(K: KernelMatrix, alpha, points) -> float:
    """det_alpha of the raw J matrix restricted to the atoms of a configuration."""
    return _configuration_det(K, float(as_alpha(alpha)), _indices(points))


def laplace_functional(K: KernelMatrix, alpha, f) -> float:
    """
    E[exp(-<f, xi>)] = Det(I + alpha K[1 - exp(-f)])^(-1/alpha).

    Args:
        K: kernel
        alpha: nonzero alpha parameter
        f: StepFunction or nonnegative node values (np.inf allowed)

    Returns:
        float: Laplace functional value in (0, 1]
    """
    a = as_alpha(alpha)
    if a.kind == AlphaKind.POISSON:
        raise UnsupportedAlpha("Use poisson_limit_functional for alpha = 0")
    g = -np.expm1(-_as_step(f, K.size))
    return fredholm_power(rescale(K, g), a)


def laplace_functional_factorized(K: KernelMatrix, alpha, f) -> float:
    """
    Laplace functional through the J-operator:
    Det(I + alpha K)^(-1/alpha) * Det(I - alpha J[exp(-f)])^(-1/alpha).
    """
    a = float(as_alpha(alpha))
    if a == 0.0:
        raise UnsupportedAlpha("Use poisson_limit_functional for alpha = 0")
    root = np.sqrt(np.exp(-_as_step(f, K.size)))
    J = np.asarray(j_operator(K, a).weighted)
    sign, log_det = np.linalg.slogdet(np.eye(K.size) - a * root[:, None] * J * root[None, :])
    if sign <= 0:
        raise NormViolation("I - alpha J[exp(-f)] is not positive definite")
    return fredholm_power(K, a) * math.exp(-log_det / a)


def janossy(K: KernelMatrix, alpha, points) -> float:
    """
    Janossy density j(x_1, ..., x_n) = Det(I + alpha K)^(-1/alpha) det_alpha J(x_i, x_j).

    Uses the raw (unweighted) J kernel; node masses enter only through the probability
    P(xi) = j(xi) * prod masses / prod multiplicity!. Slightly negative values from
    round-off are clamped to zero.
    """
    a = as_alpha(alpha)
    value = fredholm_power(K, a) * configuration_det(K, a, points)
    if value < 0:
        if value >= -JANOSSY_CLAMP_TOLERANCE:
            logging.debug(f"Clamped Janossy value {value:.3e} to 0")
            return 0.0
        logging.warning(
            f"Negative Janossy value {value:.3e} at {_indices(points)} for alpha={a}"
        )
    return value


def correlation(K: KernelMatrix, alpha, points) -> float:
    """Correlation function rho_n(x_1, ..., x_n) = det_alpha K(x_i, x_j)."""
    idx = np.array(_indices(points), dtype=np.intp)
    if idx.size == 0:
        return 1.0
    return alpha_determinant(np.asarray(K.raw)[np.ix_(idx, idx)], float(as_alpha(alpha)))


def configuration_probability(K: KernelMatrix, alpha, xi: Configuration) -> float:
    """P(process = xi) on a discrete ground space."""
    masses = K.space.masses
    weight = 1.0
    for i, m in xi.atoms:
        weight *= masses[i] ** m / math.factorial(m)
    return janossy(K, alpha, xi) * weight


def exact_pmf(K: KernelMatrix, alpha=-1) -> Dict[Configuration, float]:
    """
    Probability of every subset of the nodes under the determinantal law (alpha = -1).

    Raises:
        UnsupportedAlpha: for alpha != -1
        SizeLimit: for more than EXACT_PMF_LIMIT nodes
    """
    if float(as_alpha(alpha)) != -1.0:
        raise UnsupportedAlpha(
            "exact_pmf enumerates simple configurations; use exact_pmf_multiset for -1/m"
        )
    n = K.size
    if n > EXACT_PMF_LIMIT:
        raise SizeLimit(f"Exact pmf limited to {EXACT_PMF_LIMIT} nodes, got {n}")

    pmf = {}
    for k in range(n + 1):
        for subset in itertools.combinations(range(n), k):
            xi = Configuration.from_indices(subset)
            pmf[xi] = configuration_probability(K, -1, xi)
    logging.debug(f"Enumerated {len(pmf)} configurations, total mass {sum(pmf.values()):.12f}")
    return pmf


def exact_pmf_multiset(K: KernelMatrix, alpha) -> Dict[Configuration, float]:
    """
    Probability of every configuration under the alpha = -1/m law.

    Multiplicities range over {0, ..., m}: a superposition of m simple processes.
    """
    a = as_alpha(alpha)
    if a.kind != AlphaKind.DETERMINANTAL:
        raise UnsupportedAlpha(f"Multiset enumeration needs alpha = -1/m, got {a}")
    m, n = a.layers, K.size
    if (m + 1) ** n > MULTISET_PMF_LIMIT:
        raise SizeLimit(
            f"{(m + 1) ** n} multiplicity vectors exceed the limit of {MULTISET_PMF_LIMIT}"
        )
    pmf = {}
    for counts in itertools.product(range(m + 1), repeat=n):
        xi = Configuration.from_counts(counts)
        pmf[xi] = configuration_probability(K, a, xi)
    return pmf


def pmf_expectation(pmf: Dict[Configuration, float], fn: Callable) -> float:
    """Expectation of fn(xi) under an enumerated law."""
    return math.fsum(p * fn(xi) for xi, p in pmf.items())


class ExpansionCheck(NamedTuple):
    truncated_sum: float
    fredholm_value: float
    tail_bound: float


def _majorant_tail(size: int, a: float, radius: float, n_max: int) -> Tuple[float, float]:
    """Total and post-n_max tail of the coefficient majorant (1 - a r z)^(-N/a) at z = 1."""
    if a == 0.0 or radius == 0.0 or size == 0:
        return 1.0, 0.0
    ks = np.arange(n_max + 1)
    if a > 0:
        total = (1.0 - a * radius) ** (-size / a)
        partial = float(np.sum(binom(size / a + ks - 1, ks) * (a * radius) ** ks))
    else:
        c = -a
        total = (1.0 + c * radius) ** (size / c)
        partial = float(np.sum(binom(size / c, ks) * (c * radius) ** ks))
    return total, max(total - partial, 0.0)


def expansion_check(K: KernelMatrix, alpha, n_max: int) -> ExpansionCheck:
    """
    Compare Det(I - alpha K)^(-1/alpha) with its expansion in alpha-determinants,

        sum over n <= n_max of 1/n! * sum over ordered node tuples of det_alpha K~[tuple],

    evaluated as a sum over node multisets weighted by 1/prod multiplicity!.

    Returns:
        ExpansionCheck: (truncated_sum, fredholm_value, tail_bound), with
            |truncated_sum - fredholm_value| <= tail_bound
    """
    a = float(as_alpha(alpha))
    if abs(a) * K.max_eigenvalue >= 1.0:
        raise NormViolation(
            f"|alpha| * max eigenvalue = {abs(a) * K.max_eigenvalue:.6f} is not below 1"
        )
    if n_max > EXPANSION_ORDER_LIMIT:
        raise SizeLimit(f"Expansion order limited to {EXPANSION_ORDER_LIMIT}, got {n_max}")
    n = K.size
    terms = math.comb(n + n_max, n_max)
    if terms > MULTISET_PMF_LIMIT:
        raise SizeLimit(f"Expansion needs {terms} multisets, limit {MULTISET_PMF_LIMIT}")

    weighted = np.asarray(K.weighted)
    orders = []
    for order in range(n_max + 1):
        total = 0.0
        for combo in itertools.combinations_with_replacement(range(n), order):
            counts = np.bincount(np.array(combo, dtype=np.intp), minlength=n)
            if a == -1.0 and np.any(counts > 1):
                continue
            idx = np.array(combo, dtype=np.intp)
            denominator = math.prod(math.factorial(c) for c in counts)
            total += alpha_determinant(weighted[np.ix_(idx, idx)], a) / denominator
        orders.append(total)
    truncated = math.fsum(orders)

    if a == 0.0:
        fredholm_value = math.exp(K.trace)
    else:
        fredholm_value = math.exp(-float(np.sum(np.log1p(-a * K.eigenvalues))) / a)
    majorant, tail = _majorant_tail(n, a, K.max_eigenvalue, n_max)
    tail_bound = tail + 1e-12 * majorant
    logging.info(
        f"Expansion check alpha={a}: truncated={truncated:.12f}, "
        f"fredholm={fredholm_value:.12f}, tail bound={tail_bound:.3e}"
    )
    return ExpansionCheck(truncated, fredholm_value, tail_bound)


def thinning_weight(
    eta: Configuration, omega: Configuration, s: int, K1: KernelMatrix
) -> float:
    """
    Conditional probability that the first of s layers equals eta given their union omega.

    Layers are independent determinantal processes with kernel K1, so the union is the
    alpha = -1/s process with kernel s*K1 and

        R(eta, omega) = prod_{x in eta} mult_omega(x) * j_{-1,K1}(eta)
                        * j_{-1/(s-1),(s-1)K1}(omega - eta) / j_{-1/s,s*K1}(omega)

    Raises:
        ZeroDenominator: when the Janossy density of omega vanishes
    """
    if s < 1:
        raise ValueError(f"Number of layers must be positive, got {s}")
    if not omega.contains(eta):
        raise ValueError(f"{eta} is not a sub-configuration of {omega}")
    if s == 1:
        return 1.0 if eta == omega else 0.0
    if not eta.is_simple:
        return 0.0

    denominator = janossy(K1.scaled(s), as_alpha(-1 / s), omega)
    if abs(denominator) <= ZERO_DENOMINATOR_TOLERANCE:
        logging.error(f"Janossy density of {omega} vanishes for s={s}")
        raise ZeroDenominator(f"j(omega) = {denominator:.3e} for omega = {omega}")

    rest = omega.difference(eta)
    factor = math.prod(omega.multiplicity(i) for i in eta.support)
    first = janossy(K1, -1, eta)
    remainder = janossy(K1.scaled(s - 1), as_alpha(-1 / (s - 1)), rest)
    return factor * first * remainder / denominator


def thinning_law(
    omega: Configuration, s: int, K1: KernelMatrix
) -> Dict[Configuration, float]:
    """Full conditional law {eta: R(eta, omega)} over simple eta inside omega."""
    support = omega.support
    if len(support) > THINNING_ATOM_LIMIT:
        raise SizeLimit(
            f"Thinning law limited to {THINNING_ATOM_LIMIT} distinct atoms, got {len(support)}"
        )
    law = {}
    for k in range(len(support) + 1):
        for subset in itertools.combinations(support, k):
            eta = Configuration.from_indices(subset)
            law[eta] = thinning_weight(eta, omega, s, K1)
    return law


def poisson_limit_functional(K: KernelMatrix, f) -> float:
    """exp(-sum_j (1 - exp(-f(x_j))) K(x_j, x_j) m_j), the alpha -> 0 Laplace functional."""
    g = -np.expm1(-_as_step(f, K.size))
    return math.exp(-float(np.sum(g * np.diag(K.raw) * K.space.masses)))


def enumerate_configurations(
    n: int, max_multiplicity: int = 1, max_size: Optional[int] = None
) -> List[Configuration]:
    """Every configuration of n nodes with bounded multiplicities (and total size)."""
    configurations = []
    for counts in itertools.product(range(max_multiplicity + 1), repeat=n):
        if max_size is None or sum(counts) <= max_size:
            configurations.append(Configuration.from_counts(counts))
    return configurations

"""
Exact samplers on a ground space and the seeded Monte Carlo driver.

Determinantal draws use the spectral algorithm (Bernoulli selection of eigenvectors,
then sequential sampling from the projection kernel). alpha = -1/m superposes m such
draws with kernel K/m; alpha = 2/m superposes m Gaussian-Cox layers with covariance
K~/m. Every replica of a Monte Carlo run owns a counter-based Philox stream, so
results do not depend on thread scheduling.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from ..config.config import MAX_WORKERS, MC_REPLICA_SIZE
from .errors import UnsupportedAlpha
from .law import (
    EMPTY,
    Configuration,
    janossy,
    thinning_law,
)
from .linalg_kernel import AlphaKind, KernelMatrix, as_alpha

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


@dataclass(frozen=True, eq=False)
class RngStream:
    """Reproducible random stream identified by (seed, stream) within a family of streams."""

    seed: int
    stream: int = 0
    family: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        sequence = np.random.SeedSequence(
            int(self.seed), spawn_key=(int(self.family), int(self.stream))
        )
        object.__setattr__(
            self, "generator", np.random.Generator(np.random.Philox(sequence))
        )

    def spawn(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream, self.family)


def _generator(rng: Union[RngStream, np.random.Generator]) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class LayeredConfiguration:
    layers: Tuple[Configuration, ...]

    @property
    def merged(self) -> Configuration:
        merged = EMPTY
        for layer in self.layers:
            merged = merged.union(layer)
        return merged

    @property
    def depth(self) -> int:
        return len(self.layers)


def _spectral_draw(
    eigenvalues: np.ndarray, eigenvectors: np.ndarray, generator: np.random.Generator
) -> Tuple[int, ...]:
    selected = generator.random(eigenvalues.size) < eigenvalues
    basis = np.asarray(eigenvectors)[:, selected]
    n = basis.shape[0]
    picked = []
    while basis.shape[1] > 0:
        cumulative = np.cumsum(np.sum(basis**2, axis=1))
        node = int(np.searchsorted(cumulative, generator.random() * cumulative[-1], side="right"))
        node = min(node, n - 1)
        picked.append(node)

        pivot = int(np.argmax(np.abs(basis[node])))
        column = basis[:, pivot]
        basis = basis - np.outer(column, basis[node] / column[node])
        basis = np.delete(basis, pivot, axis=1)
        if basis.shape[1] > 0:
            basis, _ = np.linalg.qr(basis)
    return tuple(sorted(picked))


def sample_dpp(K: KernelMatrix, rng) -> Configuration:
    """Exact draw of the determinantal process (alpha = -1) with kernel K."""
    return Configuration.from_indices(
        _spectral_draw(K.eigenvalues, K.eigenvectors, _generator(rng))
    )


def _cox_layer(root: np.ndarray, generator: np.random.Generator) -> Configuration:
    field_values = root @ generator.standard_normal(root.shape[0])
    return Configuration.from_counts(generator.poisson(field_values**2))


def sample_alpha(K: KernelMatrix, alpha, rng) -> LayeredConfiguration:
    """
    Draw the alpha-process as a superposition of independent layers.

    alpha = -1/m: m determinantal layers with kernel K/m.
    alpha = 2/m: m Cox layers driven by squared Gaussian fields of covariance K~/m.

    Raises:
        UnsupportedAlpha: for alpha = 1 and for the alpha = 0 limit (see sample_poisson)
    """
    a = as_alpha(alpha)
    generator = _generator(rng)
    m = a.layers
    if a.kind == AlphaKind.DETERMINANTAL:
        eigenvalues = K.eigenvalues / m
        return LayeredConfiguration(
            tuple(
                Configuration.from_indices(
                    _spectral_draw(eigenvalues, K.eigenvectors, generator)
                )
                for _ in range(m)
            )
        )
    if a.kind == AlphaKind.PERMANENTAL:
        if float(a) == 1.0:
            raise UnsupportedAlpha(
                "Exact sampling is not available for alpha = 1; use importance_sample"
            )
        vectors = np.asarray(K.eigenvectors)
        root = (vectors * np.sqrt(K.eigenvalues / m)) @ vectors.T
        return LayeredConfiguration(tuple(_cox_layer(root, generator) for _ in range(m)))
    raise UnsupportedAlpha("Use sample_poisson for the alpha = 0 limit")


def sample_poisson(K: KernelMatrix, rng) -> Configuration:
    """Independent Poisson counts with means K(x_j, x_j) m_j."""
    means = np.diag(np.asarray(K.weighted))
    return Configuration.from_counts(_generator(rng).poisson(np.clip(means, 0.0, None)))


def conditional_thin(omega: Configuration, s: int, K1: KernelMatrix, rng) -> Configuration:
    """Draw the first layer given the union omega of s layers, with probabilities R(eta, omega)."""
    if s == 1 or omega.size == 0:
        return omega
    law = thinning_law(omega, s, K1)
    outcomes = list(law)
    cumulative = np.cumsum(np.clip([law[eta] for eta in outcomes], 0.0, None))
    u = _generator(rng).random() * cumulative[-1]
    index = min(int(np.searchsorted(cumulative, u, side="right")), len(outcomes) - 1)
    return outcomes[index]


def importance_sample(
    K: KernelMatrix, target_alpha, rng, proposal_alpha=2
) -> Tuple[Configuration, float]:
    """
    Draw from the proposal alpha-process and weight by j_target(xi) / j_proposal(xi).

    Both laws share the node-mass factors of the configuration probability, so the
    Janossy ratio is the likelihood ratio.
    """
    xi = sample_alpha(K, proposal_alpha, rng).merged
    proposal = janossy(K, proposal_alpha, xi)
    return xi, janossy(K, target_alpha, xi) / proposal


class MonteCarloEstimate(NamedTuple):
    mean: np.ndarray
    std_error: np.ndarray
    count: int
    values: np.ndarray


def _replica_sizes(count: int) -> List[int]:
    full, rest = divmod(int(count), MC_REPLICA_SIZE)
    return [MC_REPLICA_SIZE] * full + ([rest] if rest else [])


def run_replicas(
    draw: Callable[[RngStream, int], list],
    count: int,
    seed: int,
    family: int = 0,
    parallel: bool = False,
) -> list:
    """
    Run draw(stream, size) once per replica and concatenate the results in replica order.

    Args:
        draw: produces `size` results from the given stream
        count: total number of results
        seed: base seed
        family: stream family, one per check
        parallel: run replicas on a thread pool

    Returns:
        list: all results, replica 0 first
    """
    sizes = _replica_sizes(count)
    streams = [RngStream(seed, replica, family) for replica in range(len(sizes))]
    if parallel and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
            chunks = list(executor.map(draw, streams, sizes))
    else:
        chunks = [draw(stream, size) for stream, size in zip(streams, sizes)]
    results = [item for chunk in chunks for item in chunk]
    logging.debug(f"Collected {len(results)} draws from {len(sizes)} replicas (family {family})")
    return results


def monte_carlo(
    sample: Callable[[np.random.Generator], Sequence[float]],
    count: int,
    seed: int,
    family: int = 0,
    parallel: bool = False,
) -> MonteCarloEstimate:
    """Mean and standard error of a vector-valued sample(generator) over `count` draws."""

    def draw(stream: RngStream, size: int) -> list:
        return [np.atleast_1d(np.asarray(sample(stream.generator), dtype=float)) for _ in range(size)]

    values = np.vstack(run_replicas(draw, count, seed, family, parallel))
    n = values.shape[0]
    std = values.std(axis=0, ddof=1) if n > 1 else np.zeros(values.shape[1])
    return MonteCarloEstimate(values.mean(axis=0), std / math.sqrt(n), n, values)

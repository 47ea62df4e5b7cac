"""
Kernel-operator algebra on a discretized ground space.

A ground space carries quadrature nodes x_j, weights w_j and a reference density rho,
so that integrals against lambda = rho dm become sums with node masses rho(x_j) w_j.
A kernel operator is represented by its raw values K(x_i, x_j) and by the symmetric
weighted matrix sqrt(m_i) K(x_i, x_j) sqrt(m_j), whose spectrum is the operator's.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from ..config.config import (
    CONDITION_WARNING,
    LOG_DENSITY_FD_STEP,
    SPECTRUM_TOLERANCE,
    SYMMETRY_TOLERANCE,
    TRACE_SERIES_MAX_TERMS,
    TRACE_SERIES_TOLERANCE,
)
from .errors import (
    AsymmetryError,
    NegativeWeight,
    NotInvertible,
    SeriesDivergence,
    SpectrumViolation,
    UnsupportedAlpha,
    ZeroDensity,
)

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)

QUADRATURE_RULES = ("midpoint", "gauss_legendre", "discrete")


def uniform_density(x):
    return np.ones_like(np.asarray(x, dtype=float))


def zero_log_derivative(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GroundSpace:
    """Quadrature discretization of [0, 1] carrying the reference measure rho dm."""

    nodes: np.ndarray
    weights: np.ndarray
    density: Callable = uniform_density
    density_log_derivative: Callable = zero_log_derivative
    dimension: int = 1
    rule: str = "midpoint"
    masses: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        if self.dimension != 1:
            raise ValueError("Only one-dimensional ground spaces are supported")
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError(
                f"Nodes {nodes.shape} and weights {weights.shape} must be matching 1-D arrays"
            )
        if np.any(weights <= 0) or not np.isfinite(weights.sum()):
            raise ValueError("Quadrature weights must be strictly positive and finite")
        if nodes.size > 1 and np.any(np.diff(nodes) <= 0):
            raise ValueError("Nodes must be strictly increasing")
        rho = np.asarray(self.density(nodes), dtype=float)
        if np.any(rho <= 0):
            raise ZeroDensity("Reference density must be positive at every node")

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "masses", _frozen(rho * weights))

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def log_derivative_error(self, step: float = LOG_DENSITY_FD_STEP) -> float:
        """Largest gap between beta(x_j) and a central difference of log rho at the nodes."""
        x = self.nodes
        numeric = (
            np.log(self.density(x + step)) - np.log(self.density(x - step))
        ) / (2 * step)
        return float(np.max(np.abs(numeric - self.density_log_derivative(x)), initial=0.0))

    @classmethod
    def uniform(
        cls,
        n: int,
        rule: str = "midpoint",
        density: Callable = uniform_density,
        density_log_derivative: Callable = zero_log_derivative,
    ) -> "GroundSpace":
        """
        Build an n-node quadrature of [0, 1].

        Args:
            n: number of nodes
            rule: "midpoint" (default), "gauss_legendre" or "discrete" (unit weights,
                the abstract ground set of the exact regime)
            density: reference density rho
            density_log_derivative: closed-form rho'/rho

        Returns:
            GroundSpace: the discretized space
        """
        if n < 1:
            raise ValueError("A ground space needs at least one node")
        if rule == "midpoint":
            nodes = (np.arange(n) + 0.5) / n
            weights = np.full(n, 1.0 / n)
        elif rule == "gauss_legendre":
            points, gl_weights = np.polynomial.legendre.leggauss(n)
            nodes = (points + 1.0) / 2.0
            weights = gl_weights / 2.0
        elif rule == "discrete":
            return cls.discrete(n)
        else:
            raise ValueError(f"Unknown quadrature rule '{rule}'")
        return cls(nodes, weights, density, density_log_derivative, rule=rule)

    @classmethod
    def discrete(cls, n: int) -> "GroundSpace":
        """Abstract n-point ground set: node labels in [0, 1], unit masses."""
        return cls((np.arange(n) + 0.5) / n, np.ones(n), rule="discrete")


class AlphaKind(str, Enum):
    DETERMINANTAL = "determinantal_family"
    PERMANENTAL = "permanental_family"
    POISSON = "poisson_limit"


@dataclass(frozen=True)
class AlphaParameter:
    """alpha in {2/m} u {-1/m} u {0}, kept as an exact fraction."""

    value: Fraction

    def __post_init__(self):
        value = Fraction(self.value).limit_denominator(1_000_000)
        if value < 0 and (1 / -value).denominator != 1:
            raise UnsupportedAlpha(f"alpha={value} is not of the form -1/m")
        if value > 0 and (2 / value).denominator != 1:
            raise UnsupportedAlpha(f"alpha={value} is not of the form 2/m")
        object.__setattr__(self, "value", value)

    @property
    def kind(self) -> AlphaKind:
        if self.value < 0:
            return AlphaKind.DETERMINANTAL
        if self.value > 0:
            return AlphaKind.PERMANENTAL
        return AlphaKind.POISSON

    @property
    def layers(self) -> int:
        """m such that alpha = -1/m or alpha = 2/m (0 for the Poisson limit)."""
        if self.value < 0:
            return int(1 / -self.value)
        if self.value > 0:
            return int(2 / self.value)
        return 0

    def __float__(self) -> float:
        return float(self.value)

    def __str__(self) -> str:
        return str(self.value)

    @classmethod
    def parse(cls, text: str) -> "AlphaParameter":
        """Parse "-1/2", "−1/2", "0.5" or "2"."""
        cleaned = str(text).strip().replace("−", "-")
        try:
            value = Fraction(cleaned)
        except (ValueError, ZeroDivisionError) as e:
            raise UnsupportedAlpha(f"Cannot parse alpha '{text}': {e}") from e
        return cls(value)


def as_alpha(alpha: Union["AlphaParameter", str, float, int, Fraction]) -> AlphaParameter:
    if isinstance(alpha, AlphaParameter):
        return alpha
    if isinstance(alpha, str):
        return AlphaParameter.parse(alpha)
    return AlphaParameter(Fraction(alpha).limit_denominator(1000))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    Symmetric kernel operator on a ground space.

    Instances are built through kernel_from_raw / build_kernel, which validate symmetry
    and the spectrum and cache the eigendecomposition of the weighted matrix. The
    optional kernel_fn and kernel_dx (first-argument derivative) allow off-node
    evaluation.
    """

    space: GroundSpace
    raw: np.ndarray
    weighted: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_fn: Optional[Callable] = None
    kernel_dx: Optional[Callable] = None

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def trace(self) -> float:
        return float(np.trace(self.weighted))

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues.max(initial=0.0))

    def scaled(self, factor: float) -> "KernelMatrix":
        """The kernel c*K; spectrum bounds are enforced on the result."""
        return scaled_kernel(self, float(factor))


def _check_spectrum(eigenvalues: np.ndarray):
    if eigenvalues.size == 0:
        return
    lowest, highest = float(eigenvalues.min()), float(eigenvalues.max())
    if lowest < -SPECTRUM_TOLERANCE or highest >= 1.0 - SPECTRUM_TOLERANCE:
        logging.error(f"Kernel spectrum [{lowest:.3e}, {highest:.6f}] outside [0, 1)")
        raise SpectrumViolation(
            f"Weighted kernel eigenvalues span [{lowest:.3e}, {highest:.12f}], need [0, 1)"
        )


def kernel_from_raw(
    space: GroundSpace,
    raw,
    kernel_fn: Optional[Callable] = None,
    kernel_dx: Optional[Callable] = None,
    bounded: bool = True,
) -> KernelMatrix:
    """
    Wrap raw kernel values K(x_i, x_j) as a KernelMatrix.

    Args:
        space: ground space the values live on
        raw: N x N matrix of kernel values
        kernel_fn: optional vectorized K(x, y) for off-node evaluation
        kernel_dx: optional vectorized dK/dx(x, y)
        bounded: enforce the spectrum in [0, 1); J-operators are built unbounded

    Returns:
        KernelMatrix: validated kernel with cached spectral decomposition
    """
    values = np.array(raw, dtype=float)
    n = space.size
    if values.shape != (n, n):
        raise ValueError(f"Kernel values have shape {values.shape}, expected {(n, n)}")
    asymmetry = float(np.max(np.abs(values - values.T), initial=0.0))
    if asymmetry > SYMMETRY_TOLERANCE * float(np.max(np.abs(values), initial=0.0)):
        logging.error(f"Kernel asymmetry {asymmetry:.3e}")
        raise AsymmetryError(f"Kernel is not symmetric (max |K - K^T| = {asymmetry:.3e})")
    values = 0.5 * (values + values.T)

    root = np.sqrt(space.masses)
    weighted = root[:, None] * values * root[None, :]
    eigenvalues, eigenvectors = linalg.eigh(weighted)
    if bounded:
        _check_spectrum(eigenvalues)
    elif eigenvalues.size and eigenvalues.min() < -SPECTRUM_TOLERANCE:
        raise SpectrumViolation(f"Kernel has negative eigenvalue {eigenvalues.min():.3e}")
    eigenvalues = np.clip(eigenvalues, 0.0, None)

    return KernelMatrix(
        space=space,
        raw=_frozen(values),
        weighted=_frozen(weighted),
        eigenvalues=_frozen(eigenvalues),
        eigenvectors=_frozen(eigenvectors),
        kernel_fn=kernel_fn,
        kernel_dx=kernel_dx,
    )


def build_kernel(
    space: GroundSpace, kernel_fn: Callable, kernel_dx: Optional[Callable] = None
) -> KernelMatrix:
    """Evaluate a vectorized kernel function on the nodes and validate it."""
    x = space.nodes
    values = np.asarray(kernel_fn(x[:, None], x[None, :]), dtype=float)
    values = np.broadcast_to(values, (space.size, space.size)).copy()
    kernel = kernel_from_raw(space, values, kernel_fn, kernel_dx)
    logging.debug(
        f"Built kernel on {space.size} nodes: trace={kernel.trace:.6f}, "
        f"max eigenvalue={kernel.max_eigenvalue:.6f}"
    )
    return kernel


@lru_cache(maxsize=64)
def scaled_kernel(K: KernelMatrix, factor: float) -> KernelMatrix:
    if factor == 1.0:
        return K
    fn = dx = None
    if K.kernel_fn is not None:

        def fn(x, y):
            return factor * K.kernel_fn(x, y)

    if K.kernel_dx is not None:

        def dx(x, y):
            return factor * K.kernel_dx(x, y)

    return kernel_from_raw(K.space, factor * K.raw, fn, dx)


def random_kernel(
    space: GroundSpace,
    rng: np.random.Generator,
    max_eigenvalue: float = 0.9,
    rank: Optional[int] = None,
) -> KernelMatrix:
    """Random kernel whose weighted eigenvalues are uniform on [0, max_eigenvalue)."""
    n = space.size
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    eigenvalues = rng.uniform(0.0, max_eigenvalue, size=n)
    if rank is not None:
        eigenvalues[rank:] = 0.0
    weighted = (q * eigenvalues) @ q.T
    root = np.sqrt(space.masses)
    return kernel_from_raw(space, weighted / np.outer(root, root))


def _trace_series_det(T: np.ndarray) -> float:
    """exp(sum_k (-1)^(k-1) trace(T^k) / k), truncated once terms drop below tolerance."""
    n = T.shape[0]
    if n == 0:
        return 1.0
    log_det = 0.0
    power = np.eye(n)
    previous = math.inf
    for k in range(1, TRACE_SERIES_MAX_TERMS + 1):
        power = power @ T
        term = (-1.0) ** (k - 1) * float(np.trace(power)) / k
        log_det += term
        magnitude = abs(term)
        if magnitude < TRACE_SERIES_TOLERANCE:
            return math.exp(log_det)
        if magnitude > previous:
            logging.error(f"Trace series term {k} grew to {magnitude:.3e}")
            raise SeriesDivergence(f"Trace series stopped decreasing at term {k}")
        previous = magnitude
    raise SeriesDivergence(
        f"Trace series did not reach {TRACE_SERIES_TOLERANCE} in {TRACE_SERIES_MAX_TERMS} terms"
    )


def fredholm_det(K: KernelMatrix, alpha, method: str = "eigen") -> float:
    """
    Det(I + alpha K).

    Args:
        K: kernel
        alpha: alpha parameter
        method: "eigen" (product over the cached spectrum) or "trace_series"

    Returns:
        float: the Fredholm determinant
    """
    a = float(as_alpha(alpha))
    if method == "eigen":
        return float(np.prod(1.0 + a * K.eigenvalues))
    if method == "trace_series":
        return _trace_series_det(a * np.asarray(K.weighted))
    raise ValueError(f"Unknown Fredholm determinant method '{method}'")


def fredholm_power(K: KernelMatrix, alpha) -> float:
    """Det(I + alpha K)^(-1/alpha), equal to exp(-trace K) in the alpha -> 0 limit."""
    a = float(as_alpha(alpha))
    if a == 0.0:
        return math.exp(-K.trace)
    return math.exp(-float(np.sum(np.log1p(a * K.eigenvalues))) / a)


def j_operator(K: KernelMatrix, alpha) -> KernelMatrix:
    """J = (I + alpha K)^-1 K, returned unbounded (its spectrum lies in [0, inf))."""
    a = float(as_alpha(alpha))
    weighted = np.asarray(K.weighted)
    if a == 0.0 or K.size == 0:
        j_weighted = weighted.copy()
    else:
        system = np.eye(K.size) + a * weighted
        condition = float(np.linalg.cond(system))
        if condition > CONDITION_WARNING:
            logging.warning(f"I + alpha K is ill-conditioned (cond={condition:.3e})")
        j_weighted = linalg.solve(system, weighted, assume_a="sym")
        j_weighted = 0.5 * (j_weighted + j_weighted.T)
    root = np.sqrt(K.space.masses)
    return kernel_from_raw(K.space, j_weighted / np.outer(root, root), bounded=False)


@lru_cache(maxsize=64)
def _j_values(K: KernelMatrix, alpha_value: float) -> np.ndarray:
    return j_operator(K, alpha_value).raw


def j_kernel_values(K: KernelMatrix, alpha) -> np.ndarray:
    """Raw J(x_i, x_j) at the nodes, cached per kernel and alpha."""
    return _j_values(K, float(as_alpha(alpha)))


def rescale(K: KernelMatrix, g) -> KernelMatrix:
    """K[g](x, y) = sqrt(g(x)) K(x, y) sqrt(g(y)) for g >= 0 given on the nodes."""
    values = np.asarray(getattr(g, "values", g), dtype=float)
    values = np.broadcast_to(values, (K.size,))
    if np.any(values < 0):
        raise NegativeWeight("Rescaling function must be nonnegative on every node")
    root = np.sqrt(values)
    raw = root[:, None] * np.asarray(K.raw) * root[None, :]
    return kernel_from_raw(K.space, raw, bounded=bool(np.all(values <= 1.0)))


def transfer_reference(K: KernelMatrix) -> KernelMatrix:
    """
    Move the reference density into the kernel: returns K[rho] over the same nodes
    with Lebesgue weights. Both describe the same point process.
    """
    space = K.space
    lebesgue = GroundSpace(space.nodes, space.weights, rule=space.rule)
    root_rho = np.sqrt(space.density(space.nodes))
    raw = root_rho[:, None] * np.asarray(K.raw) * root_rho[None, :]

    fn = dx = None
    if K.kernel_fn is not None:

        def fn(x, y):
            return np.sqrt(space.density(x) * space.density(y)) * K.kernel_fn(x, y)

    if K.kernel_fn is not None and K.kernel_dx is not None:

        def dx(x, y):
            outer = np.sqrt(space.density(x) * space.density(y))
            return outer * (
                0.5 * space.density_log_derivative(x) * K.kernel_fn(x, y)
                + K.kernel_dx(x, y)
            )

    return kernel_from_raw(lebesgue, raw, fn, dx)


@dataclass(frozen=True, eq=False)
class NodePermutation:
    """Bijection of the node set: node i is sent to node sigma[i]."""

    sigma: np.ndarray
    inverse_indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=np.intp)
        if sigma.ndim != 1 or sorted(sigma.tolist()) != list(range(sigma.size)):
            raise NotInvertible(f"{sigma.tolist()} is not a permutation of the nodes")
        inverse = np.empty_like(sigma)
        inverse[sigma] = np.arange(sigma.size)
        sigma.setflags(write=False)
        inverse.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "inverse_indices", inverse)

    @property
    def size(self) -> int:
        return int(self.sigma.size)

    def apply(self, indices) -> np.ndarray:
        return self.sigma[np.asarray(indices, dtype=np.intp)]

    @classmethod
    def identity(cls, n: int) -> "NodePermutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "NodePermutation":
        return cls(rng.permutation(n))


def _image_density(space: GroundSpace, phi) -> Callable:
    def density(y):
        pre = phi.inverse(y)
        return space.density(pre) / phi.jacobian(pre)

    return density


def _numerical_log_derivative(density: Callable, step: float = LOG_DENSITY_FD_STEP):
    def log_derivative(x):
        x = np.asarray(x, dtype=float)
        return (np.log(density(x + step)) - np.log(density(x - step))) / (2 * step)

    return log_derivative


def pushforward(
    K: KernelMatrix, phi, onto: Optional[GroundSpace] = None
) -> Tuple[KernelMatrix, GroundSpace]:
    """
    Image of the kernel under a node permutation or a flow map.

    Args:
        K: kernel
        phi: NodePermutation, or any map exposing forward / inverse / jacobian
        onto: for flow maps, re-discretize the image measure on these nodes instead of
            transporting the original nodes and weights

    Returns:
        tuple: (K^phi, image ground space)
    """
    space = K.space
    if isinstance(phi, NodePermutation):
        if phi.size != K.size:
            raise NotInvertible(f"Permutation of {phi.size} nodes applied to {K.size}")
        inverse = phi.inverse_indices
        image_masses = space.masses[inverse]
        image = GroundSpace(
            space.nodes,
            image_masses / space.density(space.nodes),
            space.density,
            space.density_log_derivative,
            rule=space.rule,
        )
        raw = np.asarray(K.raw)[np.ix_(inverse, inverse)]
        return kernel_from_raw(image, raw), image

    density = _image_density(space, phi)
    log_derivative = _numerical_log_derivative(density)
    fn = dx = None
    if K.kernel_fn is not None:

        def fn(x, y):
            return K.kernel_fn(phi.inverse(x), phi.inverse(y))

    if K.kernel_dx is not None:

        def dx(x, y):
            pre_x = phi.inverse(x)
            return K.kernel_dx(pre_x, phi.inverse(y)) / phi.jacobian(pre_x)

    if onto is None:
        image_nodes = np.asarray(phi.forward(space.nodes), dtype=float)
        if image_nodes.size > 1 and np.any(np.diff(image_nodes) <= 0):
            raise NotInvertible("Flow map collapses or reorders quadrature nodes")
        weights = space.weights * np.asarray(phi.jacobian(space.nodes), dtype=float)
        image = GroundSpace(image_nodes, weights, density, log_derivative, rule=space.rule)
        return kernel_from_raw(image, K.raw, fn, dx), image

    if fn is None:
        raise ValueError("Re-discretizing an image kernel requires a kernel function")
    image = GroundSpace(onto.nodes, onto.weights, density, log_derivative, rule=onto.rule)
    return build_kernel(image, fn, dx), image


class ResolventKernel:
    """
    Off-node evaluation of J = (I + alpha K)^-1 K and of its first-argument derivative.

    J(x, y) = K(x, y) - alpha * k_x^T (I + alpha K~)^-1 k_y with k_x = (K(x, x_j) sqrt(m_j))_j,
    which reproduces the raw J matrix on the nodes and is as smooth as K elsewhere.
    """

    def __init__(self, K: KernelMatrix, alpha):
        if K.kernel_fn is None:
            raise ValueError("Off-node J evaluation requires the kernel function")
        self.kernel = K
        self.alpha = float(as_alpha(alpha))
        self._root = np.sqrt(K.space.masses)
        vectors = np.asarray(K.eigenvectors)
        self._middle = (vectors / (1.0 + self.alpha * K.eigenvalues)) @ vectors.T

    def _features(self, fn: Callable, xs: np.ndarray) -> np.ndarray:
        nodes = self.kernel.space.nodes
        values = np.asarray(fn(xs[:, None], nodes[None, :]), dtype=float)
        return np.broadcast_to(values, (xs.size, nodes.size)) * self._root

    def matrix(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).ravel()
        fn = self.kernel.kernel_fn
        base = np.broadcast_to(
            np.asarray(fn(xs[:, None], xs[None, :]), dtype=float), (xs.size, xs.size)
        )
        features = self._features(fn, xs)
        return base - self.alpha * features @ self._middle @ features.T

    def dx(self, xs) -> np.ndarray:
        """Matrix of dJ/dx evaluated at (x_i, x_j)."""
        if self.kernel.kernel_dx is None:
            raise ValueError("Kernel derivative is not available")
        xs = np.asarray(xs, dtype=float).ravel()
        fn, dfn = self.kernel.kernel_fn, self.kernel.kernel_dx
        base = np.broadcast_to(
            np.asarray(dfn(xs[:, None], xs[None, :]), dtype=float), (xs.size, xs.size)
        )
        return base - self.alpha * (
            self._features(dfn, xs) @ self._middle @ self._features(fn, xs).T
        )


@lru_cache(maxsize=64)
def _resolvent(K: KernelMatrix, alpha_value: float) -> ResolventKernel:
    return ResolventKernel(K, alpha_value)


def resolvent_kernel(K: KernelMatrix, alpha) -> ResolventKernel:
    return _resolvent(K, float(as_alpha(alpha)))

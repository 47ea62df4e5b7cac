"""
Flows of compactly supported vector fields on [0, 1] and the quantities they induce on
configurations: Jacobians, the image density p, the Radon-Nikodym density L, the
divergence term B_v, the potential U = -log det_alpha J and its directional derivative.
Cylindrical functionals F(xi) = f(<h_1, xi>, ..., <h_N, xi>) live here as well.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from ..config.config import (
    DETERMINANT_FLOOR,
    FLOW_GROUP_TOLERANCE,
    FLOW_MAX_STEP,
    FLOW_T_MAX,
    GRADIENT_FD_STEP,
    GRADIENT_MISMATCH_TOLERANCE,
)
from .alpha_det import alpha_determinant
from .errors import (
    DegenerateConfiguration,
    DegenerateDenominator,
    StepTooLarge,
    UnsupportedAlpha,
    ZeroDensity,
)
from .law import Configuration, configuration_det
from .linalg_kernel import (
    GroundSpace,
    KernelMatrix,
    NodePermutation,
    as_alpha,
    j_kernel_values,
    resolvent_kernel,
)

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Smooth field v on [0, 1] vanishing outside support = (lo, hi), with v' and v''."""

    name: str
    v: Callable
    dv: Callable
    d2v: Callable
    support: Tuple[float, float]

    def __call__(self, x):
        return self.v(np.asarray(x, dtype=float))

    def sup_norm(self, grid: int = 2001) -> float:
        return float(np.max(np.abs(self(np.linspace(0.0, 1.0, grid)))))


def _masked(fn: Callable, lo: float, hi: float) -> Callable:
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        inside = (x > lo) & (x < hi)
        out = np.zeros_like(x)
        if np.any(inside):
            out[inside] = fn(x[inside])
        return out

    return wrapped


def _bump_parts(center: float, radius: float, amplitude: float):
    def q(x):
        return 1.0 - ((x - center) / radius) ** 2

    def dq(x):
        return -2.0 * (x - center) / radius**2

    def value(x):
        return amplitude * np.exp(1.0 - 1.0 / q(x))

    def first(x):
        return value(x) * dq(x) / q(x) ** 2

    def second(x):
        qx, dqx = q(x), dq(x)
        return value(x) * (
            (dqx / qx**2) ** 2 - 2.0 / (radius**2 * qx**2) - 2.0 * dqx**2 / qx**3
        )

    return value, first, second


def bump_field(center: float = 0.5, radius: float = 0.35, amplitude: float = 0.15) -> VectorField:
    """amplitude * exp(1 - 1/(1 - ((x - center)/radius)^2)) on (center - radius, center + radius)."""
    lo, hi = center - radius, center + radius
    if lo < 0 or hi > 1:
        raise ValueError(f"Bump support ({lo}, {hi}) leaves [0, 1]")
    value, first, second = _bump_parts(center, radius, amplitude)
    return VectorField(
        "bump",
        _masked(value, lo, hi),
        _masked(first, lo, hi),
        _masked(second, lo, hi),
        (lo, hi),
    )


def sine_window_field(lo: float = 0.1, hi: float = 0.9, amplitude: float = 0.1) -> VectorField:
    """amplitude * sin^4(pi (x - lo)/(hi - lo)) on (lo, hi)."""
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"Invalid sine window ({lo}, {hi})")
    k = math.pi / (hi - lo)

    def value(x):
        return amplitude * np.sin(k * (x - lo)) ** 4

    def first(x):
        s, c = np.sin(k * (x - lo)), np.cos(k * (x - lo))
        return amplitude * 4.0 * k * s**3 * c

    def second(x):
        s, c = np.sin(k * (x - lo)), np.cos(k * (x - lo))
        return amplitude * k**2 * (12.0 * s**2 * c**2 - 4.0 * s**4)

    return VectorField(
        "sine_window",
        _masked(value, lo, hi),
        _masked(first, lo, hi),
        _masked(second, lo, hi),
        (lo, hi),
    )


def polynomial_field(lo: float, hi: float, coefficients: Sequence[float]) -> VectorField:
    """P(x) * (x - lo)^2 (hi - x)^2 on (lo, hi), P given by increasing-degree coefficients."""
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"Invalid polynomial window ({lo}, {hi})")
    window = Polynomial([-lo, 1.0]) ** 2 * Polynomial([hi, -1.0]) ** 2
    poly = window * Polynomial(list(coefficients))
    first, second = poly.deriv(1), poly.deriv(2)
    return VectorField(
        "polynomial",
        _masked(poly, lo, hi),
        _masked(first, lo, hi),
        _masked(second, lo, hi),
        (lo, hi),
    )


def zero_field() -> VectorField:
    def nothing(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return VectorField("zero", nothing, nothing, nothing, (0.0, 0.0))


class Flow:
    """
    Time-t maps of dx/dt = v(x) by classical fourth-order Runge-Kutta.

    The step is t / ceil(|t| / max_step); points outside the field's support are fixed
    and returned unchanged. The inverse map integrates backwards in time.
    """

    def __init__(self, field: VectorField, max_step: float = FLOW_MAX_STEP, t_max: float = FLOW_T_MAX):
        if max_step <= 0:
            raise ValueError("Integrator step must be positive")
        self.field = field
        self.max_step = max_step
        self.t_max = t_max

    def _steps(self, t: float) -> int:
        return max(1, math.ceil(round(abs(t) / self.max_step, 9)))

    def _check_time(self, t: float):
        if abs(t) > self.t_max + 1e-12:
            raise ValueError(f"|t| = {abs(t)} exceeds the flow horizon {self.t_max}")

    def _moving(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.field.support
        return (x > lo) & (x < hi)

    def _integrate(self, z: np.ndarray, t: float, log_jacobian: bool = False):
        v, dv = self.field.v, self.field.dv
        steps = self._steps(t)
        h = t / steps
        acc = np.zeros_like(z)
        for _ in range(steps):
            k1 = v(z)
            k2 = v(z + 0.5 * h * k1)
            k3 = v(z + 0.5 * h * k2)
            k4 = v(z + h * k3)
            if log_jacobian:
                acc += h / 6.0 * (
                    dv(z)
                    + 2.0 * dv(z + 0.5 * h * k1)
                    + 2.0 * dv(z + 0.5 * h * k2)
                    + dv(z + h * k3)
                )
            z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return z, acc

    def forward(self, t: float, x):
        """phi_t(x)."""
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        out = x.copy()
        if t == 0.0:
            return out
        moving = self._moving(x)
        if np.any(moving):
            out[moving], _ = self._integrate(x[moving], t)
        return out

    def inverse(self, t: float, y):
        """eta_{0,t}(y), the preimage of y under phi_t."""
        return self.forward(-t, y)

    def jacobian(self, t: float, x):
        """
        d phi_t / dx at x, as exp of the integral of v' along the trajectory.

        The integral is accumulated backwards from y = phi_t(x) along eta_{r,t}(y).
        """
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        if t == 0.0:
            return out
        moving = self._moving(x)
        if np.any(moving):
            y, _ = self._integrate(x[moving], t)
            _, backward = self._integrate(y, -t, log_jacobian=True)
            out[moving] = np.exp(-backward)
        return out


def flow_forward(flow: Flow, t: float, x):
    """phi_t(x) with a round-trip self-check against the inverse flow."""
    y = flow.forward(t, x)
    deviation = float(np.max(np.abs(flow.inverse(t, y) - np.asarray(x)), initial=0.0))
    if deviation > FLOW_GROUP_TOLERANCE:
        logging.error(f"Flow round trip deviates by {deviation:.3e} at t={t}")
        raise StepTooLarge(
            f"Round trip phi_-t(phi_t(x)) deviates by {deviation:.3e}; reduce the step"
        )
    return y


def jacobian(flow: Flow, t: float, x):
    return flow.jacobian(t, x)


def inverse_flow(flow: Flow, t: float, y):
    return flow.inverse(t, y)


@dataclass(frozen=True, eq=False)
class FlowMap:
    """The diffeomorphism phi_t of a flow at a fixed time."""

    flow: Flow
    t: float

    def forward(self, x):
        return self.flow.forward(self.t, x)

    def inverse(self, y):
        return self.flow.inverse(self.t, y)

    def jacobian(self, x):
        return self.flow.jacobian(self.t, x)

    @property
    def is_identity(self) -> bool:
        return self.t == 0.0 or self.flow.field.support[0] >= self.flow.field.support[1]


def density_p(phi, space: GroundSpace, x):
    """
    Density of the image measure lambda_phi with respect to lambda.

    For a flow map: rho(phi^-1 x) / (rho(x) * phi'(phi^-1 x)), evaluated at points x.
    For a node permutation: m_{sigma^-1(i)} / m_i, evaluated at node indices x.
    """
    if isinstance(phi, NodePermutation):
        idx = np.asarray(x, dtype=np.intp)
        return space.masses[phi.inverse_indices[idx]] / space.masses[idx]
    x = np.asarray(x, dtype=float)
    rho = space.density(x)
    if np.any(rho <= 0):
        raise ZeroDensity("Reference density vanishes where the image density is evaluated")
    pre = phi.inverse(x)
    return space.density(pre) / (rho * phi.jacobian(pre))


class RadonNikodymDensity:
    """
    L(xi) = prod_{x in xi} p(x) * det_alpha J(phi^-1 xi) / det_alpha J(xi).

    Node permutations read J from the node matrix; flow maps evaluate J off the nodes
    through the resolvent extension.
    """

    def __init__(self, K: KernelMatrix, alpha, phi):
        self.kernel = K
        self.alpha = as_alpha(alpha)
        self.phi = phi
        self._discrete = isinstance(phi, NodePermutation)
        if self._discrete:
            self._p = density_p(phi, K.space, np.arange(K.size))
        else:
            self._resolvent = resolvent_kernel(K, self.alpha)
            self._p = density_p(phi, K.space, K.space.nodes)

    def __call__(self, xi: Configuration) -> float:
        if xi.size == 0:
            return 1.0
        a = float(self.alpha)
        idx = np.array(xi.indices, dtype=np.intp)
        if self._discrete:
            denominator = configuration_det(self.kernel, self.alpha, xi)
            moved = self.phi.inverse_indices[idx]
            numerator = configuration_det(self.kernel, self.alpha, tuple(sorted(moved.tolist())))
        else:
            x = self.kernel.space.nodes[idx]
            denominator = alpha_determinant(self._resolvent.matrix(x), a)
            numerator = alpha_determinant(self._resolvent.matrix(self.phi.inverse(x)), a)
        if denominator <= DETERMINANT_FLOOR:
            logging.debug(f"det_alpha J = {denominator:.3e} on {xi}")
            raise DegenerateDenominator(f"det_alpha J(xi) = {denominator:.3e} for xi = {xi}")
        return float(np.prod(self._p[idx])) * numerator / denominator


def radon_nikodym_L(K: KernelMatrix, alpha, phi, xi: Configuration) -> float:
    return RadonNikodymDensity(K, alpha, phi)(xi)


def _positions(space: GroundSpace, xi) -> np.ndarray:
    if isinstance(xi, Configuration):
        return xi.positions(space)
    return np.asarray(xi, dtype=float).ravel()


def b_v(space: GroundSpace, v: VectorField, xi) -> float:
    """B_v(xi) = sum over atoms of beta(x) v(x) + v'(x)."""
    x = _positions(space, xi)
    if x.size == 0:
        return 0.0
    return float(np.sum(space.density_log_derivative(x) * v(x) + v.dv(x)))


def _j_matrix(K: KernelMatrix, alpha, xi) -> np.ndarray:
    if isinstance(xi, Configuration):
        idx = np.array(xi.indices, dtype=np.intp)
        return j_kernel_values(K, alpha)[np.ix_(idx, idx)]
    return resolvent_kernel(K, alpha).matrix(_positions(K.space, xi))


def potential_U(K: KernelMatrix, alpha, xi) -> float:
    """U(xi) = -log det_alpha J(xi); xi is a Configuration or an array of positions."""
    a = as_alpha(alpha)
    if isinstance(xi, Configuration):
        if xi.size == 0:
            return 0.0
        value = configuration_det(K, a, xi)
    else:
        matrix = _j_matrix(K, a, xi)
        if matrix.size == 0:
            return 0.0
        value = alpha_determinant(matrix, float(a))
    if value <= DETERMINANT_FLOOR:
        raise DegenerateConfiguration(f"det_alpha J = {value:.3e}; U is infinite")
    return -math.log(value)


def _grad_from_matrices(A: np.ndarray, dA: np.ndarray, alpha: float) -> float:
    if alpha == -1.0:
        sign, _ = np.linalg.slogdet(A)
        if sign <= 0:
            raise DegenerateConfiguration("det J is not positive")
        return -float(np.trace(np.linalg.solve(A, dA)))
    value = alpha_determinant(A, alpha)
    if value <= DETERMINANT_FLOOR:
        raise DegenerateConfiguration(f"det_alpha J = {value:.3e}; U is infinite")
    derivative = 0.0
    for i in range(A.shape[0]):
        replaced = A.copy()
        replaced[i] = dA[i]
        derivative += alpha_determinant(replaced, alpha)
    return -derivative / value


def _j_and_derivative(K: KernelMatrix, alpha, x: np.ndarray, v: VectorField):
    resolvent = resolvent_kernel(K, alpha)
    A = resolvent.matrix(x)
    D = resolvent.dx(x)
    vx = v(x)
    dA = D * vx[:, None] + D.T * vx[None, :]
    return A, dA


def grad_U_analytic(K: KernelMatrix, alpha, xi, v: VectorField) -> float:
    x = _positions(K.space, xi)
    if x.size == 0:
        return 0.0
    A, dA = _j_and_derivative(K, alpha, x, v)
    return _grad_from_matrices(A, dA, float(as_alpha(alpha)))


def grad_U_finite_difference(
    K: KernelMatrix, alpha, xi, v: VectorField, step: float = GRADIENT_FD_STEP
) -> float:
    """(U(phi_step xi) - U(phi_-step xi)) / (2 step) along the flow of v."""
    x = _positions(K.space, xi)
    if x.size == 0:
        return 0.0
    flow = Flow(v)
    forward = potential_U(K, alpha, flow.forward(step, x))
    backward = potential_U(K, alpha, flow.forward(-step, x))
    return (forward - backward) / (2.0 * step)


def grad_U_with_check(K: KernelMatrix, alpha, xi, v: VectorField) -> Tuple[float, float]:
    """Analytic directional derivative and its finite-difference counterpart."""
    analytic = grad_U_analytic(K, alpha, xi, v)
    numeric = grad_U_finite_difference(K, alpha, xi, v)
    if abs(analytic - numeric) > GRADIENT_MISMATCH_TOLERANCE:
        logging.warning(
            f"grad_U mismatch: analytic {analytic:.8f} vs finite difference {numeric:.8f}"
        )
    return analytic, numeric


def grad_U(K: KernelMatrix, alpha, xi, v: VectorField, cross_check: bool = True) -> float:
    """
    Directional derivative of U along v at xi.

    Row-wise derivative of det_alpha J(xi) with dJ_ij = d1J(x_i, x_j) v(x_i) +
    d1J(x_j, x_i) v(x_j); the determinantal case uses trace(J^-1 dJ). With cross_check a
    finite-difference estimate is computed too and disagreements are logged.
    """
    if cross_check:
        return grad_U_with_check(K, alpha, xi, v)[0]
    return grad_U_analytic(K, alpha, xi, v)


def hypothesis_bound_ratio(K: KernelMatrix, alpha, xi, v: VectorField) -> float:
    """|d det_alpha J(phi_t xi)/dt at t=0| / n^(n/2), the growth measured against u_n."""
    x = _positions(K.space, xi)
    n = x.size
    if n == 0:
        return 0.0
    a = float(as_alpha(alpha))
    A, dA = _j_and_derivative(K, alpha, x, v)
    derivative = sum(
        alpha_determinant(np.vstack([A[:i], dA[i : i + 1], A[i + 1 :]]), a) for i in range(n)
    )
    return abs(derivative) / n ** (n / 2)


def hypothesis_bound_constant(K: KernelMatrix, alpha, v: VectorField, n: int) -> float:
    """
    Hadamard constant 2 n |v| |d1J| max(|J|, 1)^(n-1) bounding the ratio above for
    determinantal configurations of at most n points on the nodes.
    """
    if float(as_alpha(alpha)) != -1.0:
        raise UnsupportedAlpha("The Hadamard bound applies to the determinantal case")
    nodes = K.space.nodes
    resolvent = resolvent_kernel(K, alpha)
    j_norm = float(np.max(np.abs(resolvent.matrix(nodes))))
    dj_norm = float(np.max(np.abs(resolvent.dx(nodes))))
    v_norm = float(np.max(np.abs(v(nodes))))
    return 2.0 * n * v_norm * dj_norm * max(j_norm, 1.0) ** (n - 1)


@dataclass(frozen=True, eq=False)
class ProbeFunction:
    """Smooth inner function h of a cylindrical functional, with derivative."""

    name: str
    h: Callable
    dh: Callable


def sine_probe(k: int = 1) -> ProbeFunction:
    def h(x):
        return np.sin(k * math.pi * np.asarray(x, dtype=float))

    def dh(x):
        return k * math.pi * np.cos(k * math.pi * np.asarray(x, dtype=float))

    return ProbeFunction(f"sine{k}", h, dh)


def bump_probe(center: float = 0.5, radius: float = 0.3) -> ProbeFunction:
    value, first, _ = _bump_parts(center, radius, 1.0)
    lo, hi = center - radius, center + radius
    return ProbeFunction("bump", _masked(value, lo, hi), _masked(first, lo, hi))


@dataclass(frozen=True, eq=False)
class OuterFunction:
    name: str
    f: Callable
    grad: Callable


def tanh_outer(scale: float = 1.0) -> OuterFunction:
    def f(y):
        return math.tanh(scale * float(np.sum(y)))

    def grad(y):
        return np.full(len(y), scale / math.cosh(scale * float(np.sum(y))) ** 2)

    return OuterFunction("tanh", f, grad)


def gaussian_bump_outer(center: float = 0.0, width: float = 1.0) -> OuterFunction:
    def f(y):
        return math.exp(-float(np.sum((np.asarray(y) - center) ** 2)) / width**2)

    def grad(y):
        return -2.0 * (np.asarray(y) - center) / width**2 * f(y)

    return OuterFunction("gaussian_bump", f, grad)


def polynomial_outer(coefficients: Sequence[float]) -> OuterFunction:
    """P(tanh(y_1 + ... + y_N)); composing with tanh keeps it bounded."""
    poly = Polynomial(list(coefficients))
    slope = poly.deriv()

    def f(y):
        return float(poly(math.tanh(float(np.sum(y)))))

    def grad(y):
        s = float(np.sum(y))
        return np.full(len(y), float(slope(math.tanh(s))) / math.cosh(s) ** 2)

    return OuterFunction("polynomial", f, grad)


def constant_outer(value: float = 1.0) -> OuterFunction:
    return OuterFunction("constant", lambda y: float(value), lambda y: np.zeros(len(y)))


@dataclass(frozen=True, eq=False)
class CylindricalFunctional:
    """F(xi) = f(<h_1, xi>, ..., <h_N, xi>) evaluated on atom positions."""

    outer: OuterFunction
    probes: Tuple[ProbeFunction, ...]

    def coordinates(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        return np.array([float(np.sum(probe.h(x))) for probe in self.probes])

    def __call__(self, x) -> float:
        return self.outer.f(self.coordinates(x))

    def gradient(self, x, v: VectorField) -> float:
        """nabla_v F(xi) = sum_i d_i f(...) * sum over atoms of h_i'(x) v(x)."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return 0.0
        vx = v(x)
        directional = np.array([float(np.sum(probe.dh(x) * vx)) for probe in self.probes])
        return float(np.dot(self.outer.grad(self.coordinates(x)), directional))

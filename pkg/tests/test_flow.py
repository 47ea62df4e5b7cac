"""
Tests for vector fields, flows, the image density, the Radon-Nikodym density and the
potential gradient.
"""

import math

import numpy as np
import pytest

from dppp_lab.src.errors import DegenerateConfiguration, UnsupportedAlpha
from dppp_lab.src.flow import (
    CylindricalFunctional,
    Flow,
    FlowMap,
    RadonNikodymDensity,
    b_v,
    bump_field,
    bump_probe,
    constant_outer,
    density_p,
    flow_forward,
    gaussian_bump_outer,
    grad_U,
    grad_U_analytic,
    grad_U_finite_difference,
    hypothesis_bound_constant,
    hypothesis_bound_ratio,
    inverse_flow,
    jacobian,
    polynomial_field,
    polynomial_outer,
    potential_U,
    radon_nikodym_L,
    sine_probe,
    sine_window_field,
    tanh_outer,
    zero_field,
)
from dppp_lab.src.law import Configuration, exact_pmf, pmf_expectation
from dppp_lab.src.linalg_kernel import GroundSpace, NodePermutation, build_kernel


def gaussian(x, y):
    return 0.6 * np.exp(-((x - y) ** 2) / 0.0625)


def gaussian_dx(x, y):
    return -2.0 * (x - y) / 0.0625 * gaussian(x, y)


def exponential_density(x):
    return np.exp(-np.asarray(x, dtype=float)) / (1.0 - math.exp(-1.0))


def exponential_beta(x):
    return np.full_like(np.asarray(x, dtype=float), -1.0)


class TestVectorFields:
    @pytest.mark.parametrize(
        "field",
        [bump_field(), sine_window_field(), polynomial_field(0.2, 0.8, [1.0, -2.0])],
    )
    def test_derivatives_by_finite_difference(self, field):
        x = np.linspace(0.06, 0.94, 37)
        h = 1e-6
        np.testing.assert_allclose((field(x + h) - field(x - h)) / (2 * h), field.dv(x), atol=1e-6)
        np.testing.assert_allclose(
            (field.dv(x + h) - field.dv(x - h)) / (2 * h), field.d2v(x), atol=1e-4
        )

    def test_fields_vanish_outside_support(self):
        field = bump_field(0.5, 0.2, 0.1)
        assert field.support == pytest.approx((0.3, 0.7))
        np.testing.assert_array_equal(field(np.array([0.0, 0.3, 0.7, 1.0])), np.zeros(4))
        assert field.sup_norm() == pytest.approx(0.1)
        assert zero_field().sup_norm() == 0.0

    def test_invalid_support(self):
        with pytest.raises(ValueError):
            bump_field(0.1, 0.3)
        with pytest.raises(ValueError):
            sine_window_field(0.8, 0.2)


class TestFlow:
    def setup_method(self):
        self.flow = Flow(bump_field())
        self.grid = np.linspace(0.05, 0.95, 20)

    def test_identity_at_time_zero(self):
        np.testing.assert_array_equal(self.flow.forward(0.0, self.grid), self.grid)
        np.testing.assert_array_equal(self.flow.jacobian(0.0, self.grid), np.ones(20))

    def test_points_outside_support_are_fixed(self):
        x = np.array([0.0, 0.1, 0.9, 1.0])
        np.testing.assert_array_equal(self.flow.forward(0.5, x), x)

    def test_group_property(self):
        for s in (0.1, 0.2):
            for t in (0.1, 0.2):
                composed = self.flow.forward(t, self.flow.forward(s, self.grid))
                np.testing.assert_allclose(composed, self.flow.forward(s + t, self.grid), atol=1e-8)

    def test_inverse_round_trip(self):
        y = flow_forward(self.flow, 0.3, self.grid)
        np.testing.assert_allclose(inverse_flow(self.flow, 0.3, y), self.grid, atol=1e-8)

    def test_jacobian_by_finite_difference(self):
        eps = 1e-5
        numeric = (self.flow.forward(0.3, self.grid + eps) - self.flow.forward(0.3, self.grid - eps)) / (2 * eps)
        np.testing.assert_allclose(jacobian(self.flow, 0.3, self.grid), numeric, atol=1e-6)
        assert np.all(jacobian(self.flow, 0.3, self.grid) > 0)

    def test_time_horizon(self):
        with pytest.raises(ValueError):
            self.flow.forward(1.5, self.grid)
        with pytest.raises(ValueError):
            Flow(bump_field(), max_step=0.0)

    def test_flow_map(self):
        phi = FlowMap(self.flow, 0.2)
        np.testing.assert_allclose(phi.inverse(phi.forward(self.grid)), self.grid, atol=1e-8)
        assert FlowMap(self.flow, 0.0).is_identity
        assert FlowMap(Flow(zero_field()), 0.5).is_identity


class TestDensities:
    def setup_method(self):
        self.space = GroundSpace.uniform(32, "midpoint", exponential_density, exponential_beta)
        self.field = bump_field()
        self.flow = Flow(self.field)

    def test_image_density_integrates_to_one(self):
        fine = GroundSpace.uniform(400, "gauss_legendre", exponential_density, exponential_beta)
        p = density_p(FlowMap(self.flow, 0.3), fine, fine.nodes)
        assert float(np.sum(p * fine.masses)) == pytest.approx(fine.total_mass, rel=1e-8)

    def test_log_density_derivative_is_minus_b(self):
        x = np.array([0.3, 0.45, 0.7])
        h = 1e-4
        ahead = np.sum(np.log(density_p(FlowMap(self.flow, h), self.space, x)))
        behind = np.sum(np.log(density_p(FlowMap(self.flow, -h), self.space, x)))
        assert (ahead - behind) / (2 * h) == pytest.approx(-b_v(self.space, self.field, x), abs=1e-6)

    def test_b_v(self):
        x = np.array([0.4])
        expected = -self.field(x)[0] + self.field.dv(x)[0]
        assert b_v(self.space, self.field, x) == pytest.approx(expected)
        assert b_v(self.space, self.field, Configuration()) == 0.0

    def test_discrete_density_p(self):
        space = GroundSpace.uniform(4, "midpoint", exponential_density, exponential_beta)
        sigma = NodePermutation(np.array([1, 2, 3, 0]))
        p = density_p(sigma, space, np.arange(4))
        np.testing.assert_allclose(p, space.masses[sigma.inverse_indices] / space.masses)


class TestRadonNikodym:
    def test_discrete_quasi_invariance(self):
        space = GroundSpace.discrete(5)
        K = build_kernel(space, lambda x, y: 0.3 * np.exp(-((x - y) ** 2) / 0.1))
        pmf = exact_pmf(K)
        f = np.random.default_rng(0).uniform(0.0, 1.0, 5)
        sigma = NodePermutation(np.array([3, 0, 4, 1, 2]))
        density = RadonNikodymDensity(K, -1, sigma)
        moved = f[sigma.sigma]
        lhs = pmf_expectation(pmf, lambda xi: math.exp(-float(moved @ xi.counts(5))))
        rhs = pmf_expectation(pmf, lambda xi: math.exp(-float(f @ xi.counts(5))) * density(xi))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_identity_map_gives_unit_density(self):
        space = GroundSpace.uniform(16)
        K = build_kernel(space, gaussian, gaussian_dx)
        density = RadonNikodymDensity(K, -1, FlowMap(Flow(bump_field()), 0.0))
        assert density(Configuration.from_indices([2, 7, 11])) == pytest.approx(1.0)
        assert density(Configuration()) == 1.0

    def test_function_form_matches_the_density_object(self):
        K = build_kernel(GroundSpace.discrete(4), lambda x, y: 0.3 * np.exp(-((x - y) ** 2) / 0.1))
        sigma = NodePermutation(np.array([1, 0, 3, 2]))
        xi = Configuration.from_indices([0, 3])
        assert radon_nikodym_L(K, -1, sigma, xi) == pytest.approx(RadonNikodymDensity(K, -1, sigma)(xi))


class TestPotential:
    def setup_method(self):
        self.space = GroundSpace.uniform(32)
        self.K = build_kernel(self.space, gaussian, gaussian_dx)
        self.field = bump_field()

    @pytest.mark.parametrize("alpha", ["-1", "1", "-1/2"])
    def test_gradient_matches_finite_difference(self, alpha):
        xi = np.array([0.3, 0.5, 0.72])
        analytic = grad_U_analytic(self.K, alpha, xi, self.field)
        numeric = grad_U_finite_difference(self.K, alpha, xi, self.field)
        assert analytic == pytest.approx(numeric, abs=1e-6)
        assert grad_U(self.K, alpha, xi, self.field) == pytest.approx(analytic)

    def test_potential_on_nodes_and_positions(self):
        xi = Configuration.from_indices([4, 20])
        assert potential_U(self.K, -1, xi) == pytest.approx(potential_U(self.K, -1, xi.positions(self.space)))
        assert potential_U(self.K, -1, Configuration()) == 0.0

    def test_coinciding_points_are_degenerate(self):
        with pytest.raises(DegenerateConfiguration):
            potential_U(self.K, -1, np.array([0.4, 0.4]))

    def test_hypothesis_bound(self):
        rng = np.random.default_rng(1)
        constant = hypothesis_bound_constant(self.K, -1, self.field, 5)
        for _ in range(10):
            idx = rng.choice(32, size=int(rng.integers(1, 6)), replace=False)
            assert hypothesis_bound_ratio(self.K, -1, Configuration.from_indices(idx), self.field) <= constant
        with pytest.raises(UnsupportedAlpha):
            hypothesis_bound_constant(self.K, 1, self.field, 5)


class TestCylindricalFunctionals:
    def test_gradient_along_the_flow(self):
        F = CylindricalFunctional(tanh_outer(1.0), (sine_probe(1), bump_probe(0.4, 0.3)))
        field = bump_field()
        flow = Flow(field)
        x = np.array([0.25, 0.5, 0.66])
        h = 1e-5
        numeric = (F(flow.forward(h, x)) - F(flow.forward(-h, x))) / (2 * h)
        assert F.gradient(x, field) == pytest.approx(numeric, abs=1e-7)

    def test_outer_functions(self):
        y = np.array([0.2, -0.1])
        for outer in (tanh_outer(2.0), gaussian_bump_outer(0.1, 0.8), polynomial_outer([0.0, 1.0, 0.5])):
            h = 1e-6
            numeric = [(outer.f(y + h * e) - outer.f(y - h * e)) / (2 * h) for e in np.eye(2)]
            np.testing.assert_allclose(outer.grad(y), numeric, atol=1e-8)
        one = CylindricalFunctional(constant_outer(1.0), ())
        assert one(np.array([0.3])) == 1.0
        assert one.gradient(np.array([0.3]), bump_field()) == 0.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

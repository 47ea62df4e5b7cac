"""
Tests for the exact samplers and the seeded Monte Carlo driver.

Monte Carlo assertions use fixed seeds and a 4 sigma margin.
"""

import math
from collections import Counter

import numpy as np
import pytest

from dppp_lab.src.errors import UnsupportedAlpha
from dppp_lab.src.law import (
    Configuration,
    StepFunction,
    exact_pmf,
    laplace_functional,
    poisson_limit_functional,
    thinning_law,
)
from dppp_lab.src.linalg_kernel import GroundSpace, random_kernel
from dppp_lab.src.sampler import (
    LayeredConfiguration,
    RngStream,
    conditional_thin,
    importance_sample,
    monte_carlo,
    run_replicas,
    sample_alpha,
    sample_dpp,
    sample_poisson,
)


def small_kernel(n=4, seed=0, top=0.7):
    return random_kernel(GroundSpace.discrete(n), np.random.default_rng(seed), top)


class TestRngStream:
    def test_same_key_same_stream(self):
        a = RngStream(42, 3, 7).generator.random(5)
        b = RngStream(42, 3, 7).generator.random(5)
        np.testing.assert_array_equal(a, b)

    def test_different_keys_differ(self):
        base = RngStream(42, 0, 0).generator.random(5)
        assert not np.array_equal(base, RngStream(42, 1, 0).generator.random(5))
        assert not np.array_equal(base, RngStream(42, 0, 1).generator.random(5))
        assert not np.array_equal(base, RngStream(43, 0, 0).generator.random(5))

    def test_spawn(self):
        stream = RngStream(1, 0, 9).spawn(4)
        assert (stream.seed, stream.stream, stream.family) == (1, 4, 9)


def test_layered_configuration_merges_layers():
    layered = LayeredConfiguration(
        (Configuration.from_indices([0, 2]), Configuration.from_indices([2]))
    )
    assert layered.merged == Configuration.from_indices([0, 2, 2])
    assert layered.depth == 2


class TestSamplers:
    def test_dpp_frequencies_match_exact_pmf(self):
        K = small_kernel()
        pmf = exact_pmf(K)
        count = 20000
        generator = RngStream(5, 0, 1).generator
        draws = Counter(sample_dpp(K, generator) for _ in range(count))
        for xi, p in pmf.items():
            std = math.sqrt(p * (1 - p) / count)
            assert abs(draws.get(xi, 0) / count - p) <= 4 * std + 1e-12

    def test_dpp_configurations_are_simple(self):
        K = small_kernel(6, seed=1, top=0.95)
        generator = np.random.default_rng(2)
        for _ in range(200):
            assert sample_dpp(K, generator).is_simple

    @pytest.mark.parametrize("alpha", ["-1/2", "-1/3", "2", "1/2"])
    def test_mean_count_is_the_trace(self, alpha):
        K = small_kernel(5, seed=3)
        estimate = monte_carlo(lambda g: sample_alpha(K, alpha, g).merged.size, 20000, seed=11)
        assert abs(estimate.mean[0] - K.trace) <= 4 * estimate.std_error[0]

    @pytest.mark.parametrize("alpha", ["-1/2", "2"])
    def test_laplace_functional(self, alpha):
        K = small_kernel(4, seed=4)
        f = StepFunction.random(4, np.random.default_rng(5), 1.0)
        estimate = monte_carlo(
            lambda g: math.exp(-f.total(sample_alpha(K, alpha, g).merged)), 20000, seed=12
        )
        assert abs(estimate.mean[0] - laplace_functional(K, alpha, f)) <= 4 * estimate.std_error[0]

    def test_layers_follow_the_requested_depth(self):
        K = small_kernel()
        assert sample_alpha(K, "-1/3", np.random.default_rng(0)).depth == 3
        assert sample_alpha(K, "2/5", np.random.default_rng(0)).depth == 5

    @pytest.mark.parametrize("alpha", ["-1/3", "2/3"])
    def test_first_and_last_layer_have_the_same_law(self, alpha):
        K = small_kernel(3, seed=15, top=0.6)
        count = 20000
        generator = RngStream(16, 0, 3).generator
        first, last = Counter(), Counter()
        for _ in range(count):
            layers = sample_alpha(K, alpha, generator).layers
            first[layers[0]] += 1
            last[layers[-1]] += 1

        # two-sample chi-square over equal sample sizes, sparse cells pooled
        cells, pooled = [], [0, 0]
        for xi in set(first) | set(last):
            a, b = first.get(xi, 0), last.get(xi, 0)
            if a + b < 10:
                pooled[0] += a
                pooled[1] += b
            else:
                cells.append((a, b))
        if sum(pooled):
            cells.append(tuple(pooled))
        statistic = sum((a - b) ** 2 / (a + b) for a, b in cells)
        df = len(cells) - 1
        assert df >= 2
        assert statistic <= df + 4 * math.sqrt(2 * df)

    def test_unsupported_alphas(self):
        K = small_kernel()
        with pytest.raises(UnsupportedAlpha):
            sample_alpha(K, 1, np.random.default_rng(0))
        with pytest.raises(UnsupportedAlpha):
            sample_alpha(K, 0, np.random.default_rng(0))

    def test_poisson_sampler(self):
        K = small_kernel(4, seed=6)
        f = StepFunction.constant(4, 0.7)
        estimate = monte_carlo(lambda g: math.exp(-f.total(sample_poisson(K, g))), 20000, seed=13)
        assert abs(estimate.mean[0] - poisson_limit_functional(K, f)) <= 4 * estimate.std_error[0]


class TestConditionalSampling:
    def test_conditional_thin_frequencies(self):
        K1 = small_kernel(3, seed=7, top=0.3)
        omega = Configuration.from_indices([0, 1, 1, 2])
        law = thinning_law(omega, 2, K1)
        count = 20000
        generator = np.random.default_rng(8)
        draws = Counter(conditional_thin(omega, 2, K1, generator) for _ in range(count))
        for eta, r in law.items():
            std = math.sqrt(max(r * (1 - r), 0.0) / count)
            assert abs(draws.get(eta, 0) / count - r) <= 4 * std + 1e-12

    def test_single_layer_returns_omega(self):
        omega = Configuration.from_indices([0, 2])
        assert conditional_thin(omega, 1, small_kernel(), np.random.default_rng(0)) == omega

    def test_importance_sampling_of_the_permanental_law(self):
        K = small_kernel(3, seed=9, top=0.5)
        f = StepFunction.random(3, np.random.default_rng(10), 1.0)

        def weighted(generator):
            xi, weight = importance_sample(K, 1, generator)
            return [weight * math.exp(-f.total(xi)), weight]

        estimate = monte_carlo(weighted, 40000, seed=14)
        assert abs(estimate.mean[1] - 1.0) <= 4 * estimate.std_error[1]
        assert abs(estimate.mean[0] - laplace_functional(K, 1, f)) <= 4 * estimate.std_error[0]


class TestMonteCarlo:
    def test_replicas_concatenate_in_order(self, monkeypatch):
        monkeypatch.setattr("dppp_lab.src.sampler.MC_REPLICA_SIZE", 3)

        def draw(stream, size):
            return [(stream.stream, k) for k in range(size)]

        results = run_replicas(draw, 8, seed=0)
        assert results == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1)]

    def test_parallel_run_is_identical(self, monkeypatch):
        monkeypatch.setattr("dppp_lab.src.sampler.MC_REPLICA_SIZE", 250)
        K = small_kernel()

        def sample(generator):
            return sample_dpp(K, generator).size

        serial = monte_carlo(sample, 1000, seed=21, family=5)
        parallel = monte_carlo(sample, 1000, seed=21, family=5, parallel=True)
        np.testing.assert_array_equal(serial.values, parallel.values)
        assert serial.count == 1000

    def test_standard_error_shrinks_with_samples(self):
        K = small_kernel()

        def sample(generator):
            return sample_dpp(K, generator).size

        small = monte_carlo(sample, 2000, seed=3, family=1)
        large = monte_carlo(sample, 20000, seed=3, family=2)
        assert large.std_error[0] / small.std_error[0] == pytest.approx(1 / math.sqrt(10), rel=0.2)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

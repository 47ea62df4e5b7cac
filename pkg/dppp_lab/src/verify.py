"""
Verification suite runner.

Every check compares two independently computed sides of an identity of the process
and returns a VerificationReport. Deterministic checks draw their random kernels from
a stream fixed by the check identifier, so they never depend on the run seed; Monte
Carlo checks use one Philox stream per replica within the check's stream family.
"""

import itertools
import logging
import math
import os
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from ..config.config import (
    CHI2_MIN_EXPECTED,
    DEFAULT_CONFIG_PATH,
    FLOW_GROUP_TOLERANCE,
    GRADIENT_FD_STEP,
    IBP_BIAS_ALLOWANCE,
    MAX_WORKERS,
    MC_SIGMA,
    POISSON_RATIO_WINDOW,
    get_check_names,
)
from .catalog import SuiteConfig, build_kernel_entry
from .errors import (
    ConfigError,
    DegenerateConfiguration,
    DegenerateDenominator,
    LabError,
    SizeLimit,
    ZeroDenominator,
)
from .flow import (
    Flow,
    FlowMap,
    RadonNikodymDensity,
    b_v,
    density_p,
    flow_forward,
    grad_U_analytic,
    grad_U_with_check,
    hypothesis_bound_constant,
    hypothesis_bound_ratio,
)
from .law import (
    Configuration,
    StepFunction,
    configuration_probability,
    exact_pmf,
    exact_pmf_multiset,
    expansion_check,
    laplace_functional,
    laplace_functional_factorized,
    pmf_expectation,
    poisson_limit_functional,
    thinning_law,
)
from .linalg_kernel import (
    AlphaKind,
    GroundSpace,
    KernelMatrix,
    NodePermutation,
    as_alpha,
    fredholm_det,
    pushforward,
    random_kernel,
    transfer_reference,
)
from .report_writer import ReportWriter
from .sampler import (
    RngStream,
    importance_sample,
    monte_carlo,
    run_replicas,
    sample_alpha,
    sample_dpp,
    sample_poisson,
)
from .utils import stream_family

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)


class Regime(str, Enum):
    DISCRETE_EXACT = "discrete_exact"
    CONTINUUM = "continuum_quadrature"
    MONTE_CARLO = "monte_carlo"


def _plain(value):
    """Convert numpy scalars and arrays (recursively) into JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


@dataclass
class VerificationReport:
    check_name: str
    regime: Regime
    lhs: float
    rhs: float
    abs_error: float
    rel_error: float
    tolerance: float
    n_samples: int
    std_error: float
    passed: bool
    seed: str
    config_digest: str
    check_id: str = ""
    details: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return _plain(
            {
                "id": self.check_id,
                "check_name": self.check_name,
                "regime": self.regime.value,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "abs_error": self.abs_error,
                "rel_error": self.rel_error,
                "tolerance": self.tolerance,
                "n_samples": self.n_samples,
                "std_error": self.std_error,
                "passed": self.passed,
                "seed": self.seed,
                "config_digest": self.config_digest,
                "details": self.details,
            }
        )


@dataclass
class CheckContext:
    """Everything a check needs: its suite entry, resolved seed and sample count."""

    suite: SuiteConfig
    entry: Dict
    check_id: str
    seed: int
    samples: int
    parallel: bool = False
    series: Optional[Tuple[List[str], List[list]]] = None

    @property
    def name(self) -> str:
        return self.entry["name"]

    @property
    def family(self) -> int:
        return stream_family(self.check_id)

    def option(self, key: str, default=None):
        return self.entry.get(key, default)

    def mode(self, default: str) -> str:
        return self.entry.get("mode", self.entry.get("regime", default))

    def alpha(self, default="-1"):
        return as_alpha(self.entry.get("alpha", default))

    def alphas(self, default: Sequence) -> list:
        values = self.entry.get("alphas")
        if values is None:
            values = [self.entry["alpha"]] if "alpha" in self.entry else list(default)
        return [as_alpha(value) for value in values]

    def kernel(self, default: Optional[str] = None, nodes: Optional[int] = None) -> KernelMatrix:
        name = self.entry.get("kernel", default)
        if name is None:
            raise ConfigError("Check needs a kernel", field=f"{self.check_id}.kernel")
        return self.suite.kernel(name, nodes)

    def field(self, default: str = "bump"):
        return self.suite.field(self.entry.get("field", default))

    def fixed_rng(self) -> np.random.Generator:
        """Seed-independent stream for deterministic checks."""
        return RngStream(0, 0, self.family).generator

    def stream_family(self, suffix: str = "") -> int:
        return stream_family(f"{self.check_id}{suffix}")


def make_report(
    ctx: CheckContext,
    regime: Regime,
    lhs: float,
    rhs: float,
    tolerance: float,
    abs_error: Optional[float] = None,
    n_samples: int = 0,
    std_error: float = 0.0,
    details: Optional[Dict] = None,
) -> VerificationReport:
    """
    Build a report; passed iff abs_error <= tolerance, or, for Monte Carlo regimes,
    |lhs - rhs| <= MC_SIGMA * std_error.
    """
    lhs, rhs = float(lhs), float(rhs)
    abs_error = abs(lhs - rhs) if abs_error is None else float(abs_error)
    rel_error = abs_error / abs(rhs) if rhs != 0 else abs_error
    passed = abs_error <= tolerance
    if regime == Regime.MONTE_CARLO and std_error > 0:
        passed = passed or abs(lhs - rhs) <= MC_SIGMA * std_error
    return VerificationReport(
        check_name=ctx.name,
        regime=regime,
        lhs=lhs,
        rhs=rhs,
        abs_error=abs_error,
        rel_error=rel_error,
        tolerance=float(tolerance),
        n_samples=int(n_samples),
        std_error=float(std_error),
        passed=bool(passed),
        seed=str(ctx.seed),
        config_digest=ctx.suite.digest,
        check_id=ctx.check_id,
        details=details or {},
    )


def _worst_z_report(ctx: CheckContext, rows: List[Dict], n_samples: int, details: Dict) -> VerificationReport:
    """Report the Monte Carlo comparison with the largest |estimate - exact| / std_error."""

    def z_score(row):
        if row["std_error"] > 0:
            return abs(row["estimate"] - row["exact"]) / row["std_error"]
        return math.inf if row["estimate"] != row["exact"] else 0.0

    worst = max(rows, key=z_score)
    details = dict(details, comparisons=rows)
    return make_report(
        ctx,
        Regime.MONTE_CARLO,
        worst["estimate"],
        worst["exact"],
        0.0,
        n_samples=n_samples,
        std_error=worst["std_error"],
        details=details,
    )


def _run_draws(ctx: CheckContext, draw_one: Callable, count: int, family: Optional[int] = None) -> list:
    def draw(stream: RngStream, size: int) -> list:
        return [draw_one(stream.generator) for _ in range(size)]

    return run_replicas(draw, count, ctx.seed, ctx.family if family is None else family, ctx.parallel)


def _collect(ctx: CheckContext, draw_one: Callable, count: int, family: Optional[int] = None):
    """Monte Carlo rows of draw_one(generator); None marks a skipped draw."""
    return _summarize(_run_draws(ctx, draw_one, count, family))


def _collect_flagged(ctx: CheckContext, draw_one: Callable, count: int, family: Optional[int] = None):
    """
    Like _collect for draw_one returning (flag, row); flags are tallied after the
    replicas are joined, so the counts do not depend on thread scheduling.
    """
    pairs = _run_draws(ctx, draw_one, count, family)
    counters = Counter(flag for flag, _ in pairs if flag is not None)
    return (*_summarize([row for _, row in pairs]), counters)


def _summarize(results: list):
    kept = [np.atleast_1d(np.asarray(row, dtype=float)) for row in results if row is not None]
    skipped = len(results) - len(kept)
    if not kept:
        raise DegenerateConfiguration("Every Monte Carlo draw was degenerate")
    values = np.vstack(kept)
    n = values.shape[0]
    std = values.std(axis=0, ddof=1) if n > 1 else np.zeros(values.shape[1])
    return values.mean(axis=0), std / math.sqrt(n), n, skipped


def _merge_cells(cells: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """Pool cells, smallest expected count first, until each pool expects at least the minimum."""
    merged = []
    pool_observed = pool_expected = 0.0
    for observed, expected in sorted(cells, key=lambda cell: cell[1]):
        pool_observed += observed
        pool_expected += expected
        if pool_expected >= CHI2_MIN_EXPECTED:
            merged.append((pool_observed, pool_expected))
            pool_observed = pool_expected = 0.0
    if pool_expected > 0 or pool_observed > 0:
        if merged:
            observed, expected = merged[-1]
            merged[-1] = (observed + pool_observed, expected + pool_expected)
        else:
            merged.append((pool_observed, pool_expected))
    return merged


def _chi_square_report(
    ctx: CheckContext, groups: List[List[Tuple[float, float]]], n_samples: int, details: Dict
) -> VerificationReport:
    statistic, df = 0.0, 0
    for cells in groups:
        merged = _merge_cells(cells)
        statistic += sum((o - e) ** 2 / e for o, e in merged if e > 0)
        df += len(merged) - 1
    tolerance = MC_SIGMA * math.sqrt(2.0 * df)
    details = dict(details, df=df, statistic=statistic, p_value=float(chi2.sf(statistic, df)) if df else 1.0)
    return make_report(
        ctx,
        Regime.MONTE_CARLO,
        statistic,
        df,
        tolerance,
        abs_error=max(statistic - df, 0.0),
        n_samples=n_samples,
        details=details,
    )


def _scaled_for_series(K: KernelMatrix, alpha: float) -> KernelMatrix:
    """Shrink K so that |alpha| K has spectral radius below 0.9 for the trace series."""
    radius = abs(alpha) * K.max_eigenvalue
    return K.scaled(0.9 / radius) if radius >= 0.9 else K


def check_fredholm(ctx: CheckContext) -> VerificationReport:
    """Eigenvalue product against the trace series for Det(I + alpha K)."""
    rng = ctx.fixed_rng()
    trials = int(ctx.option("trials", 100))
    nodes_max = int(ctx.option("nodes_max", 16))
    top = float(ctx.option("max_eigenvalue", 0.9))
    alphas = ctx.alphas(["-1", "-1/2", "1/2", "1", "2"])

    kernels = [
        random_kernel(GroundSpace.uniform(int(rng.integers(1, nodes_max + 1))), rng, top)
        for _ in range(trials)
    ]
    if "kernel" in ctx.entry:
        kernels.append(ctx.kernel())

    worst = (0.0, 1.0, 1.0)
    for K in kernels:
        for a in alphas:
            kernel = _scaled_for_series(K, float(a))
            eigen = fredholm_det(kernel, a, "eigen")
            series = fredholm_det(kernel, a, "trace_series")
            relative = abs(eigen - series) / abs(eigen)
            if relative >= worst[0]:
                worst = (relative, eigen, series)
    return make_report(
        ctx,
        Regime.DISCRETE_EXACT,
        worst[1],
        worst[2],
        float(ctx.option("tolerance", 1e-10)),
        abs_error=worst[0],
        details={"kernels": len(kernels), "alphas": [str(a) for a in alphas]},
    )


def check_expansion(ctx: CheckContext) -> VerificationReport:
    """Truncated alpha-determinant expansion against the Fredholm value, within the tail bound."""
    rng = ctx.fixed_rng()
    nodes = int(ctx.option("nodes", 3))
    n_max = int(ctx.option("n_max", 8))
    top = float(ctx.option("max_eigenvalue", 0.4))
    kernels = [random_kernel(GroundSpace.discrete(nodes), rng, top) for _ in range(int(ctx.option("trials", 3)))]
    if "kernel" in ctx.entry:
        kernels.append(ctx.kernel())

    rows = []
    for K in kernels:
        for a in ctx.alphas(["-1", "1/2"]):
            result = expansion_check(K, a, n_max)
            gap = abs(result.truncated_sum - result.fredholm_value)
            rows.append(
                {
                    "alpha": str(a),
                    "truncated_sum": result.truncated_sum,
                    "fredholm_value": result.fredholm_value,
                    "tail_bound": result.tail_bound,
                    "gap": gap,
                }
            )
    worst = max(rows, key=lambda row: row["gap"] / row["tail_bound"] if row["tail_bound"] > 0 else math.inf)
    return make_report(
        ctx,
        Regime.DISCRETE_EXACT,
        worst["truncated_sum"],
        worst["fredholm_value"],
        worst["tail_bound"],
        details={"n_max": n_max, "cases": rows},
    )


def check_janossy(ctx: CheckContext) -> VerificationReport:
    """
    Exact pmf on random discrete kernels: total mass, Laplace functional and mean count;
    with a named kernel also the transfer of the reference density into the kernel.
    """
    rng = ctx.fixed_rng()
    trials = int(ctx.option("trials", 10))
    nodes_max = int(ctx.option("nodes_max", 8))
    errors = {"mass": 0.0, "laplace": 0.0, "mean_count": 0.0, "transfer": 0.0}
    worst_mass = 1.0

    for _ in range(trials):
        n = int(rng.integers(2, nodes_max + 1))
        K = random_kernel(GroundSpace.discrete(n), rng, float(ctx.option("max_eigenvalue", 0.9)))
        pmf = exact_pmf(K)
        total = math.fsum(pmf.values())
        if abs(total - 1.0) >= errors["mass"]:
            errors["mass"], worst_mass = abs(total - 1.0), total
        for _ in range(3):
            f = StepFunction.random(n, rng, 2.0)
            enumerated = pmf_expectation(pmf, lambda xi, f=f: math.exp(-f.total(xi)))
            errors["laplace"] = max(errors["laplace"], abs(enumerated - laplace_functional(K, -1, f)))
        mean = pmf_expectation(pmf, lambda xi: xi.size)
        errors["mean_count"] = max(errors["mean_count"], abs(mean - K.trace))

    if "kernel" in ctx.entry:
        K = ctx.kernel()
        moved = transfer_reference(K)
        for xi in exact_pmf(K):
            gap = abs(configuration_probability(K, -1, xi) - configuration_probability(moved, -1, xi))
            errors["transfer"] = max(errors["transfer"], gap)

    return make_report(
        ctx,
        Regime.DISCRETE_EXACT,
        worst_mass,
        1.0,
        float(ctx.option("tolerance", 1e-10)),
        abs_error=max(errors.values()),
        details={"errors": errors, "trials": trials},
    )


def check_factorization(ctx: CheckContext) -> VerificationReport:
    """Laplace functional through K against the J-operator factorization."""
    rng = ctx.fixed_rng()
    worst = (0.0, 1.0, 1.0)
    for _ in range(int(ctx.option("trials", 10))):
        n = int(ctx.option("nodes", 6))
        K = random_kernel(GroundSpace.discrete(n), rng, float(ctx.option("max_eigenvalue", 0.9)))
        f = StepFunction.random(n, rng, 2.0)
        for a in ctx.alphas(["-1", "-1/2", "1"]):
            direct = laplace_functional(K, a, f)
            factored = laplace_functional_factorized(K, a, f)
            if abs(direct - factored) >= worst[0]:
                worst = (abs(direct - factored), direct, factored)
    return make_report(
        ctx, Regime.DISCRETE_EXACT, worst[1], worst[2], float(ctx.option("tolerance", 1e-9))
    )


def check_cox(ctx: CheckContext) -> VerificationReport:
    """alpha = 2 Laplace functional against the Gaussian expectation det(I + 2 Sigma D)^(-1/2)."""
    rng = ctx.fixed_rng()
    worst = (0.0, 1.0, 1.0)
    for _ in range(int(ctx.option("trials", 10))):
        n = int(ctx.option("nodes", 6))
        K = random_kernel(GroundSpace.discrete(n), rng, float(ctx.option("max_eigenvalue", 0.9)))
        f = StepFunction.random(n, rng, 2.0)
        d = -np.expm1(-f.values)
        gaussian = float(np.linalg.det(np.eye(n) + 2.0 * np.asarray(K.weighted) * d[None, :])) ** -0.5
        value = laplace_functional(K, 2, f)
        if abs(gaussian - value) >= worst[0]:
            worst = (abs(gaussian - value), gaussian, value)
    return make_report(
        ctx, Regime.DISCRETE_EXACT, worst[1], worst[2], float(ctx.option("tolerance", 1e-10))
    )


def _merged_draw(K: KernelMatrix, alpha) -> Callable:
    if alpha.kind == AlphaKind.POISSON:
        return lambda generator: sample_poisson(K, generator)
    if float(alpha) == -1.0:
        return lambda generator: sample_dpp(K, generator)
    return lambda generator: sample_alpha(K, alpha, generator).merged


def check_sampler(ctx: CheckContext) -> VerificationReport:
    """Sampler exactness: chi-square against the pmf, mean counts, or Laplace functionals."""
    K = ctx.kernel("disc6")
    mode = ctx.mode("chi_square")

    if mode == "chi_square":

        def draw(stream: RngStream, size: int) -> list:
            return [sample_dpp(K, stream) for _ in range(size)]

        counts = Counter(run_replicas(draw, ctx.samples, ctx.seed, ctx.family, ctx.parallel))
        pmf = exact_pmf(K)
        cells = [(counts.get(xi, 0), p * ctx.samples) for xi, p in pmf.items()]
        return _chi_square_report(ctx, [cells], ctx.samples, {"mode": mode, "cells": len(cells)})

    if mode == "mean_count":
        rows = []
        for a in ctx.alphas(["-1", "-1/2", "2"]):
            sampler = _merged_draw(K, a)
            estimate = monte_carlo(
                lambda generator, sampler=sampler: sampler(generator).size,
                ctx.samples,
                ctx.seed,
                ctx.stream_family(f"/{a}"),
                ctx.parallel,
            )
            rows.append(
                {
                    "alpha": str(a),
                    "estimate": float(estimate.mean[0]),
                    "exact": K.trace,
                    "std_error": float(estimate.std_error[0]),
                }
            )
        return _worst_z_report(ctx, rows, ctx.samples, {"mode": mode})

    if mode == "laplace":
        rng = ctx.fixed_rng()
        functions = [StepFunction.random(K.size, rng, 1.0) for _ in range(int(ctx.option("functions", 3)))]
        table = np.vstack([f.values for f in functions])
        rows = []
        for a in ctx.alphas(["-1/2"]):
            sampler = _merged_draw(K, a)
            estimate = monte_carlo(
                lambda generator, sampler=sampler: np.exp(-table @ sampler(generator).counts(K.size)),
                ctx.samples,
                ctx.seed,
                ctx.stream_family(f"/{a}"),
                ctx.parallel,
            )
            for k, f in enumerate(functions):
                exact = poisson_limit_functional(K, f) if a.kind == AlphaKind.POISSON else laplace_functional(K, a, f)
                rows.append(
                    {
                        "alpha": str(a),
                        "function": k,
                        "estimate": float(estimate.mean[k]),
                        "exact": exact,
                        "std_error": float(estimate.std_error[k]),
                    }
                )
        return _worst_z_report(ctx, rows, ctx.samples, {"mode": mode})

    raise ConfigError(f"Unknown sampler mode '{mode}'", field=f"{ctx.check_id}.mode")


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _joint_thinning(K1: KernelMatrix, s: int):
    """P(first layer = eta, union = omega), grouped by omega, and P(union = omega)."""
    layer = [(xi, p) for xi, p in exact_pmf(K1).items() if p > 0]
    joint: Dict[Configuration, Dict[Configuration, float]] = defaultdict(lambda: defaultdict(float))
    marginal: Dict[Configuration, float] = defaultdict(float)
    for combo in itertools.product(layer, repeat=s):
        probability = math.prod(p for _, p in combo)
        omega = combo[0][0]
        for xi, _ in combo[1:]:
            omega = omega.union(xi)
        joint[omega][combo[0][0]] += probability
        marginal[omega] += probability
    return joint, marginal


def check_thinning(ctx: CheckContext) -> VerificationReport:
    """Conditional law of the first layer given the union of s layers."""
    mode = ctx.mode("exact")

    if mode == "exact":
        K1 = ctx.kernel("disc5")
        max_atoms = int(ctx.option("max_atoms", 6))
        if K1.size > max_atoms:
            raise SizeLimit(f"Joint enumeration limited to {max_atoms} nodes, got {K1.size}")
        deviation = completeness = 0.0
        worst = (0.0, 0.0)
        skipped = 0
        for s in _as_list(ctx.option("s", [1, 2, 3])):
            joint, marginal = _joint_thinning(K1, int(s))
            for omega, total in marginal.items():
                if total <= 0:
                    continue
                try:
                    law = thinning_law(omega, int(s), K1)
                except ZeroDenominator:
                    skipped += 1
                    continue
                completeness = max(completeness, abs(math.fsum(law.values()) - 1.0))
                first_layers = joint[omega]
                for eta in set(law) | set(first_layers):
                    conditional = first_layers.get(eta, 0.0) / total
                    gap = abs(law.get(eta, 0.0) - conditional)
                    if gap >= deviation:
                        deviation, worst = gap, (law.get(eta, 0.0), conditional)
        return make_report(
            ctx,
            Regime.DISCRETE_EXACT,
            worst[0],
            worst[1],
            float(ctx.option("tolerance", 1e-10)),
            abs_error=max(deviation, completeness),
            details={"mode": mode, "deviation": deviation, "completeness": completeness, "skipped": skipped},
        )

    if mode == "monte_carlo":
        K1 = ctx.kernel("disc5")
        s = int(ctx.option("s", 2))
        merged_kernel = K1.scaled(s)
        alpha = as_alpha(-1 / s)

        def draw(stream: RngStream, size: int) -> list:
            pairs = []
            for _ in range(size):
                layered = sample_alpha(merged_kernel, alpha, stream)
                pairs.append((layered.merged, layered.layers[0]))
            return pairs

        pairs = run_replicas(draw, ctx.samples, ctx.seed, ctx.family, ctx.parallel)
        by_omega: Dict[Configuration, Counter] = defaultdict(Counter)
        for omega, eta in pairs:
            by_omega[omega][eta] += 1
        groups = []
        skipped = 0
        for omega, observed in by_omega.items():
            try:
                law = thinning_law(omega, s, K1)
            except ZeroDenominator:
                skipped += 1
                continue
            total = sum(observed.values())
            groups.append([(observed.get(eta, 0), total * r) for eta, r in law.items()])
        return _chi_square_report(ctx, groups, ctx.samples, {"mode": mode, "groups": len(groups), "skipped": skipped})

    if mode == "poisson_sanity":
        s = int(ctx.option("s", 2))
        nodes = int(ctx.option("nodes", 8))
        omega = Configuration.from_indices(ctx.option("omega", [1, 3, 6]))
        k = omega.size
        deviations = []
        lengths = [float(x) for x in ctx.option("lengths", [0.3, 0.15, 0.08, 0.04, 0.02])]
        for length in lengths:
            K1 = build_kernel_entry(
                {
                    "type": "gaussian",
                    "nodes": nodes,
                    "rule": "discrete",
                    "parameters": {"length": length},
                    "target_max_eigenvalue": 0.8 / s,
                },
                f"{ctx.check_id}.lengths",
            )
            law = thinning_law(omega, s, K1)
            deviations.append(
                max(
                    abs(r - (1 / s) ** eta.size * (1 - 1 / s) ** (k - eta.size))
                    for eta, r in law.items()
                )
            )
        monotone = all(b <= a + 1e-12 for a, b in zip(deviations, deviations[1:]))
        ctx.series = (["length", "deviation"], [[x, d] for x, d in zip(lengths, deviations)])
        abs_error = deviations[-1] if monotone else max(deviations[-1], 1.0)
        return make_report(
            ctx,
            Regime.DISCRETE_EXACT,
            deviations[-1],
            0.0,
            float(ctx.option("tolerance", 1e-6)),
            abs_error=abs_error,
            details={"mode": mode, "deviations": deviations, "monotone": monotone},
        )

    raise ConfigError(f"Unknown thinning mode '{mode}'", field=f"{ctx.check_id}.mode")


def check_quasi_invariance(ctx: CheckContext) -> VerificationReport:
    """E[exp(-<f o phi, xi>)] against E[exp(-<f, xi>) L(xi)]."""
    mode = ctx.mode("discrete")

    if mode in ("discrete", Regime.DISCRETE_EXACT.value):
        K = ctx.kernel("disc6")
        rng = ctx.fixed_rng()
        f = StepFunction.random(K.size, rng, 1.0)
        permutations = [NodePermutation.identity(K.size)] + [
            NodePermutation.random(K.size, rng) for _ in range(int(ctx.option("permutations", 5)))
        ]
        worst = (0.0, 1.0, 1.0)
        skipped = 0
        matrix_gap = 0.0
        for a in ctx.alphas(["-1", "-1/2"]):
            pmf = exact_pmf(K) if float(a) == -1.0 else exact_pmf_multiset(K, a)
            for sigma in permutations:
                moved = StepFunction(f.values[sigma.sigma])
                density = RadonNikodymDensity(K, a, sigma)
                lhs = pmf_expectation(pmf, lambda xi: math.exp(-moved.total(xi)))
                terms = []
                for xi, p in pmf.items():
                    try:
                        terms.append(p * math.exp(-f.total(xi)) * density(xi))
                    except DegenerateDenominator:
                        skipped += 1
                rhs = math.fsum(terms)
                matrix_gap = max(matrix_gap, abs(lhs - laplace_functional(K, a, moved)))
                if abs(lhs - rhs) >= worst[0]:
                    worst = (abs(lhs - rhs), lhs, rhs)
        return make_report(
            ctx,
            Regime.DISCRETE_EXACT,
            worst[1],
            worst[2],
            float(ctx.option("tolerance", 1e-10)),
            abs_error=max(worst[0], matrix_gap),
            details={"mode": "discrete", "permutations": len(permutations), "skipped": skipped, "matrix_gap": matrix_gap},
        )

    K = ctx.kernel("gauss128_gl" if mode == "continuum_matrix" else "gauss64")
    a = ctx.alpha("-1")
    phi = FlowMap(Flow(ctx.field()), float(ctx.option("t", 0.2)))
    f = ctx.suite.test_function_callable(ctx.option("test_function", "bump_f"))
    nodes = K.space.nodes
    lhs = laplace_functional(K, a, f(phi.forward(nodes)))

    if mode == "continuum_matrix":
        onto = GroundSpace.uniform(K.size, K.space.rule)
        image_kernel, image = pushforward(K, phi, onto=onto)
        rhs = laplace_functional(image_kernel, a, f(image.nodes))
        transported, _ = pushforward(K, phi)
        det_gap = abs(fredholm_det(transported, a) - fredholm_det(K, a))
        return make_report(
            ctx,
            Regime.CONTINUUM,
            lhs,
            rhs,
            float(ctx.option("tolerance", 1e-6)),
            abs_error=max(abs(lhs - rhs), det_gap),
            details={"mode": mode, "nodes": K.size, "fredholm_gap": det_gap},
        )

    if mode == "continuum_mc":
        density = RadonNikodymDensity(K, a, phi)
        f_nodes = f(nodes)
        sampler = _merged_draw(K, a)

        def draw_one(generator):
            xi = sampler(generator)
            try:
                return math.exp(-float(f_nodes @ xi.counts(K.size))) * density(xi)
            except DegenerateDenominator:
                return None

        mean, std_error, n, skipped = _collect(ctx, draw_one, ctx.samples)
        return make_report(
            ctx,
            Regime.MONTE_CARLO,
            lhs,
            mean[0],
            0.0,
            n_samples=n,
            std_error=std_error[0],
            details={"mode": mode, "nodes": K.size, "skipped": skipped},
        )

    raise ConfigError(f"Unknown quasi-invariance regime '{mode}'", field=f"{ctx.check_id}.regime")


def _separated_configurations(
    space: GroundSpace, rng: np.random.Generator, count: int, max_atoms: int, min_gap: float
) -> List[Configuration]:
    configurations = []
    while len(configurations) < count:
        k = int(rng.integers(1, max_atoms + 1))
        for _ in range(1000):
            picked = np.sort(rng.choice(space.size, size=k, replace=False))
            if k == 1 or np.min(np.diff(space.nodes[picked])) >= min_gap:
                configurations.append(Configuration.from_indices(picked.tolist()))
                break
    return configurations


def check_gradient(ctx: CheckContext) -> VerificationReport:
    """
    Analytic derivatives against finite differences: grad_U, the flow Jacobian, the
    log-derivative of the image density, the flow group property and beta.
    """
    K = ctx.kernel("gauss32")
    v = ctx.field()
    flow = Flow(v)
    rng = ctx.fixed_rng()
    configurations = _separated_configurations(
        K.space,
        rng,
        int(ctx.option("configurations", 20)),
        int(ctx.option("max_atoms", 5)),
        float(ctx.option("min_gap", 0.15)),
    )

    grad_error, worst, degenerate = 0.0, (0.0, 0.0), 0
    for a in ctx.alphas(["-1", "1"]):
        for xi in configurations:
            try:
                analytic, numeric = grad_U_with_check(K, a, xi, v)
            except DegenerateConfiguration:
                degenerate += 1
                continue
            if abs(analytic - numeric) >= grad_error:
                grad_error, worst = abs(analytic - numeric), (analytic, numeric)

    grid = np.linspace(0.05, 0.95, 20)
    t_jac = float(ctx.option("t", 0.3))
    eps = 1e-5
    finite = (flow.forward(t_jac, grid + eps) - flow.forward(t_jac, grid - eps)) / (2 * eps)
    jacobian_error = float(np.max(np.abs(flow.jacobian(t_jac, grid) - finite)))

    group_error = max(
        float(np.max(np.abs(flow.forward(t, flow.forward(s, grid)) - flow.forward(s + t, grid))))
        for s, t in itertools.product([0.1, 0.2], repeat=2)
    )
    round_trip = float(np.max(np.abs(flow.inverse(0.2, flow_forward(flow, 0.2, grid)) - grid)))

    h = GRADIENT_FD_STEP
    log_density_error = 0.0
    for xi in configurations:
        x = xi.positions(K.space)
        ahead = np.sum(np.log(density_p(FlowMap(flow, h), K.space, x)))
        behind = np.sum(np.log(density_p(FlowMap(flow, -h), K.space, x)))
        log_density_error = max(
            log_density_error, abs((ahead - behind) / (2 * h) + b_v(K.space, v, x))
        )
    beta_error = K.space.log_derivative_error()

    errors = {
        "grad_U": grad_error / 1e-6,
        "jacobian": jacobian_error / 1e-6,
        "group": group_error / 1e-8,
        "round_trip": round_trip / 1e-8,
        "log_density": log_density_error / 1e-6,
        "beta": beta_error / 1e-6,
    }
    return make_report(
        ctx,
        Regime.CONTINUUM,
        worst[0],
        worst[1],
        1.0,
        abs_error=max(errors.values()),
        details={
            "normalized_errors": errors,
            "configurations": len(configurations),
            "degenerate": degenerate,
            "group_tolerance": FLOW_GROUP_TOLERANCE,
            "fd_step": GRADIENT_FD_STEP,
        },
    )


def check_hypothesis_bound(ctx: CheckContext) -> VerificationReport:
    """Measured |d det J(phi_t xi)/dt| / n^(n/2) against the Hadamard constant."""
    K = ctx.kernel("gauss32")
    v = ctx.field()
    rng = ctx.fixed_rng()
    max_atoms = int(ctx.option("max_atoms", 6))
    by_size: Dict[int, float] = defaultdict(float)
    for _ in range(int(ctx.option("configurations", 50))):
        k = int(rng.integers(1, max_atoms + 1))
        xi = Configuration.from_indices(rng.choice(K.size, size=k, replace=False).tolist())
        by_size[k] = max(by_size[k], hypothesis_bound_ratio(K, -1, xi, v))
    measured = max(by_size.values())
    constant = hypothesis_bound_constant(K, -1, v, max_atoms)
    return make_report(
        ctx,
        Regime.DISCRETE_EXACT,
        measured,
        constant,
        0.0,
        abs_error=max(measured - constant, 0.0),
        details={"max_ratio_by_size": {str(k): by_size[k] for k in sorted(by_size)}},
    )


def _ibp_row(F, G, v, x: np.ndarray, boundary: float, weight: float = 1.0) -> np.ndarray:
    f_value, g_value = F(x), G(x)
    lhs = F.gradient(x, v) * g_value
    first = -f_value * G.gradient(x, v)
    second = f_value * g_value * boundary
    return weight * np.array([lhs, first, second, lhs - first - second])


def _ibp_estimate(ctx: CheckContext, K: KernelMatrix, family: int) -> Dict:
    a = ctx.alpha("-1")
    v = ctx.field()
    F = ctx.suite.functional(ctx.option("F", "F_tanh"))
    G = ctx.suite.functional(ctx.option("G", "G_bump"))
    space = K.space

    def boundary_term(kernel: KernelMatrix, alpha, x: np.ndarray) -> float:
        if x.size == 0:
            return 0.0
        return grad_U_analytic(kernel, alpha, x, v) - b_v(space, v, x)

    if a.kind == AlphaKind.DETERMINANTAL and a.layers > 1:
        s = a.layers
        K1 = K.scaled(1.0 / s)
        max_atoms = int(ctx.option("thinning_max_atoms", 6))

        @lru_cache(maxsize=None)
        def layer_term(eta: Configuration) -> float:
            return boundary_term(K1, -1, eta.positions(space))

        def draw_one(generator):
            layered = sample_alpha(K, a, generator)
            omega = layered.merged
            flag = None
            try:
                if len(omega.support) <= max_atoms:
                    law = thinning_law(omega, s, K1)
                    boundary = s * sum(r * layer_term(eta) for eta, r in law.items() if r != 0.0)
                else:
                    flag = "layer_estimator"
                    boundary = sum(layer_term(layer) for layer in layered.layers)
            except (ZeroDenominator, DegenerateConfiguration):
                return "degenerate", None
            return flag, _ibp_row(F, G, v, omega.positions(space), boundary)

    elif a.kind == AlphaKind.PERMANENTAL and float(a) == 1.0:

        def draw_one(generator):
            try:
                xi, weight = importance_sample(K, a, generator, ctx.option("proposal_alpha", 2))
                x = xi.positions(space)
                return None, _ibp_row(F, G, v, x, boundary_term(K, a, x), weight)
            except (SizeLimit, DegenerateConfiguration):
                return "skipped", None

    else:
        sampler = _merged_draw(K, a)

        def draw_one(generator):
            x = sampler(generator).positions(space)
            try:
                return None, _ibp_row(F, G, v, x, boundary_term(K, a, x))
            except DegenerateConfiguration:
                return "degenerate", None

    mean, std_error, n, skipped, counters = _collect_flagged(ctx, draw_one, ctx.samples, family)
    allowance = float(ctx.option("bias_allowance", IBP_BIAS_ALLOWANCE))
    scale = float(np.max(np.abs(mean[:3])))
    return {
        "nodes": K.size,
        "lhs": float(mean[0]),
        "rhs": float(mean[1] + mean[2]),
        "terms": [float(m) for m in mean[:3]],
        "residual": float(mean[3]),
        "std_error": float(std_error[3]),
        "allowance": allowance * scale,
        "n": n,
        "skipped": skipped,
        "counters": dict(counters),
    }


def check_ibp(ctx: CheckContext) -> VerificationReport:
    """
    Integration by parts E[grad_v F * G] = -E[F grad_v G] + E[F G (grad_v U - B_v)],
    estimated by Monte Carlo; alpha = -1/s averages the boundary term over the thinning
    law and alpha = 1 reweights alpha = 2 draws.
    """
    sweep = ctx.option("node_sweep")
    if not sweep:
        result = _ibp_estimate(ctx, ctx.kernel("gauss64"), ctx.family)
        return make_report(
            ctx,
            Regime.MONTE_CARLO,
            result["lhs"],
            result["rhs"],
            result["allowance"],
            n_samples=result["n"],
            std_error=result["std_error"],
            details={"alpha": str(ctx.alpha("-1")), **result},
        )

    results = [
        _ibp_estimate(ctx, ctx.kernel("gauss_sweep", int(n)), ctx.stream_family(f"/{n}")) for n in sweep
    ]
    excess = [
        abs(r["residual"]) / max(MC_SIGMA * r["std_error"], r["allowance"], 1e-300) for r in results
    ]
    monotone = all(
        abs(b["residual"])
        <= abs(a["residual"]) + MC_SIGMA * math.sqrt(a["std_error"] ** 2 + b["std_error"] ** 2)
        for a, b in zip(results, results[1:])
    )
    ctx.series = (
        ["nodes", "residual", "std_error"],
        [[r["nodes"], r["residual"], r["std_error"]] for r in results],
    )
    worst = max(excess)
    return make_report(
        ctx,
        Regime.MONTE_CARLO,
        worst,
        0.0,
        1.0,
        abs_error=worst if monotone else max(worst, 1.0 + 1e-9),
        n_samples=sum(r["n"] for r in results),
        details={"alpha": str(ctx.alpha("-1")), "sweep": results, "excess": excess, "monotone": monotone},
    )


def check_poisson_limit(ctx: CheckContext) -> VerificationReport:
    """e(alpha) = |Laplace(alpha) - Poisson limit| along an alpha sweep toward 0."""
    K = ctx.kernel("rank1")
    f = ctx.suite.test_function(ctx.option("test_function", "const_one"), K.space)
    alphas = ctx.alphas(["-1/2", "-1/4", "-1/8", "-1/16"])
    limit = poisson_limit_functional(K, f)
    errors = [abs(laplace_functional(K, a, f) - limit) for a in alphas]
    ctx.series = (["alpha", "error"], [[str(a), e] for a, e in zip(alphas, errors)])
    lo, hi = ctx.option("ratio_window", POISSON_RATIO_WINDOW)
    details = {"alphas": [str(a) for a in alphas], "errors": errors}

    if max(errors) == 0.0:
        return make_report(ctx, Regime.DISCRETE_EXACT, 0.0, 0.0, (hi - lo) / 2, details=details)

    ratios = [b / a for a, b in zip(errors, errors[1:])]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    scaled = [e / abs(float(a)) for a, e in zip(alphas, errors)]
    bounded = max(scaled) <= 2.0 * scaled[0]
    center = (lo + hi) / 2
    abs_error = max((abs(r - center) for r in ratios), default=0.0)

    closed_form_gap = 0.0
    if int(np.sum(K.eigenvalues > 1e-12)) == 1:
        g = -np.expm1(-f.values)
        mu = float(np.sum(g * np.diag(K.weighted)))
        for a, e in zip(alphas, errors):
            exact = abs((1.0 + float(a) * mu) ** (-1.0 / float(a)) - math.exp(-mu))
            closed_form_gap = max(closed_form_gap, abs(exact - e))
        details["closed_form_gap"] = closed_form_gap

    if not monotone or not bounded or closed_form_gap > 1e-12:
        abs_error = max(abs_error, 1.0)
    details.update(ratios=ratios, monotone=monotone, bounded=bounded, error_over_alpha=scaled)
    return make_report(
        ctx,
        Regime.DISCRETE_EXACT,
        ratios[-1] if ratios else 0.0,
        center,
        (hi - lo) / 2,
        abs_error=abs_error,
        details=details,
    )


def check_error_scaling(ctx: CheckContext) -> VerificationReport:
    """Monte Carlo standard errors shrink by 1/sqrt(10) over a tenfold sample increase."""
    K = ctx.kernel("disc6")
    f = StepFunction.random(K.size, ctx.fixed_rng(), 1.0)

    def sample(generator):
        return math.exp(-f.total(sample_dpp(K, generator)))

    n = ctx.samples
    small = monte_carlo(sample, n, ctx.seed, ctx.family, ctx.parallel)
    large = monte_carlo(sample, 10 * n, ctx.seed, ctx.stream_family("/large"), ctx.parallel)
    repeat = monte_carlo(sample, n, ctx.seed, ctx.family, ctx.parallel)
    reproducible = bool(np.array_equal(small.values, repeat.values))

    target = 1.0 / math.sqrt(10.0)
    ratio = float(large.std_error[0] / small.std_error[0])
    abs_error = abs(ratio - target) if reproducible else math.inf
    return make_report(
        ctx,
        Regime.MONTE_CARLO,
        ratio,
        target,
        0.2 * target,
        abs_error=abs_error,
        n_samples=11 * n,
        details={"std_errors": [float(small.std_error[0]), float(large.std_error[0])], "reproducible": reproducible},
    )


CHECKS: Dict[str, Callable[[CheckContext], VerificationReport]] = {
    "fredholm": check_fredholm,
    "expansion": check_expansion,
    "janossy": check_janossy,
    "factorization": check_factorization,
    "cox": check_cox,
    "sampler": check_sampler,
    "thinning": check_thinning,
    "quasi_invariance": check_quasi_invariance,
    "gradient": check_gradient,
    "hypothesis_bound": check_hypothesis_bound,
    "ibp": check_ibp,
    "poisson_limit": check_poisson_limit,
    "error_scaling": check_error_scaling,
}


def run_check(ctx: CheckContext) -> VerificationReport:
    logging.info(f"Running check {ctx.check_id} ({ctx.name})")
    try:
        report = CHECKS[ctx.name](ctx)
    except ConfigError:
        raise
    except LabError as e:
        logging.error(f"Check {ctx.check_id} raised {type(e).__name__}: {e}")
        report = make_report(
            ctx,
            Regime.DISCRETE_EXACT,
            math.nan,
            math.nan,
            0.0,
            abs_error=math.inf,
            details={"error": f"{type(e).__name__}: {e}"},
        )
    status = "PASSED" if report.passed else "FAILED"
    logging.info(
        f"Check {ctx.check_id}: {status} (abs_error={report.abs_error:.3e}, tolerance={report.tolerance:.3e})"
    )
    return report


def run_suite(
    config_path: Optional[str] = None,
    checks: Optional[List[str]] = None,
    seed: Optional[int] = None,
    samples: Optional[int] = None,
    parallel: bool = False,
    out: Optional[str] = None,
    emit_plots: Optional[str] = None,
) -> Tuple[List[VerificationReport], int]:
    """
    Run the selected checks of a suite.

    Args:
        config_path: suite JSON (defaults to the bundled suite)
        checks: check names or ids to run (all when None)
        seed: overrides the suite seed
        samples: overrides every Monte Carlo sample count
        parallel: run checks and Monte Carlo replicas on thread pools
        out: path of the JSON report
        emit_plots: directory for per-check CSV series

    Returns:
        tuple: (reports in declaration order, exit code 0 if all passed else 1)

    Raises:
        ConfigError: malformed suite or check entry
    """
    suite = SuiteConfig.load(config_path or DEFAULT_CONFIG_PATH)
    if checks:
        known = set(get_check_names()) | {entry.get("id") for _, entry in suite.checks()}
        unknown = [name for name in checks if name not in known]
        if unknown:
            raise ConfigError(f"Unknown check(s): {', '.join(unknown)}", field="checks")
    run_seed = suite.seed if seed is None else int(seed)

    contexts = []
    for index, entry in suite.checks(checks):
        count = samples if samples is not None else int(entry.get("samples", suite.samples))
        contexts.append(
            CheckContext(suite, entry, entry.get("id", f"{entry['name']}-{index}"), run_seed, count, parallel)
        )

    if parallel and len(contexts) > 1:
        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as executor:
            reports = list(executor.map(run_check, contexts))
    else:
        reports = [run_check(ctx) for ctx in contexts]

    exit_code = 0 if all(report.passed for report in reports) else 1
    logging.info(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed")

    if out:
        writer = ReportWriter(os.path.dirname(os.path.abspath(out)))
        writer.save_report([r.to_dict() for r in reports], suite.digest, os.path.basename(out))
    if emit_plots:
        writer = ReportWriter(emit_plots)
        for ctx in contexts:
            if ctx.series is not None:
                writer.save_series(ctx.check_id, *ctx.series)
    return reports, exit_code

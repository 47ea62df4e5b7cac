"""
Named building blocks of a verification suite: reference densities, kernels, vector
fields, cylindrical functionals and Laplace test functions, plus the JSON suite loader.
"""

import logging
import math
import os
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import norm

from ..config.config import CHECK_NAMES, DEFAULT_SAMPLES, DEFAULT_SEED
from .errors import ConfigError, LabError
from .flow import (
    CylindricalFunctional,
    VectorField,
    bump_field,
    bump_probe,
    constant_outer,
    gaussian_bump_outer,
    polynomial_field,
    polynomial_outer,
    sine_probe,
    sine_window_field,
    tanh_outer,
    zero_field,
)
from .law import StepFunction
from .linalg_kernel import (
    GroundSpace,
    KernelMatrix,
    build_kernel,
    kernel_from_raw,
    uniform_density,
    zero_log_derivative,
)
from .utils import digest, load_json, read_matrix_csv

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s"
)

KERNEL_TYPES = ("gaussian", "exponential", "finite_rank", "explicit_matrix")
DEFAULT_KERNEL = "disc6"


def _require(entry: Dict, key: str, path: str):
    if key not in entry:
        raise ConfigError(f"Missing required key '{key}'", field=f"{path}.{key}")
    return entry[key]


def _number(entry: Dict, key: str, path: str, default=None) -> float:
    value = entry.get(key, default)
    if value is None:
        raise ConfigError(f"Missing required key '{key}'", field=f"{path}.{key}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"Expected a number, got {value!r}", field=f"{path}.{key}")
    return float(value)


def build_density(entry: Optional[Dict], path: str = "density") -> Tuple[Callable, Callable]:
    """Reference density rho on [0, 1] and its log-derivative beta."""
    entry = entry or {"type": "uniform"}
    kind = entry.get("type", "uniform")
    if kind == "uniform":
        return uniform_density, zero_log_derivative
    if kind == "exponential":
        rate = _number(entry, "rate", path, 1.0)
        scale = rate / -math.expm1(-rate) if rate != 0 else 1.0

        def exponential_density(x):
            return scale * np.exp(-rate * np.asarray(x, dtype=float))

        def exponential_beta(x):
            return np.full_like(np.asarray(x, dtype=float), -rate)

        return exponential_density, exponential_beta
    if kind == "gaussian":
        mean = _number(entry, "mean", path, 0.5)
        sd = _number(entry, "sd", path, 0.5)
        if sd <= 0:
            raise ConfigError("Standard deviation must be positive", field=f"{path}.sd")
        mass = norm.cdf(1.0, mean, sd) - norm.cdf(0.0, mean, sd)

        def gaussian_density(x):
            return norm.pdf(np.asarray(x, dtype=float), mean, sd) / mass

        def gaussian_beta(x):
            return -(np.asarray(x, dtype=float) - mean) / sd**2

        return gaussian_density, gaussian_beta
    raise ConfigError(f"Unknown density type '{kind}'", field=f"{path}.type")


def _kernel_functions(kind: str, parameters: Dict, path: str) -> Tuple[Callable, Callable]:
    if kind == "gaussian":
        length = _number(parameters, "length", path, 0.2)

        def gaussian(x, y):
            return np.exp(-((x - y) ** 2) / length**2)

        def gaussian_dx(x, y):
            return -2.0 * (x - y) / length**2 * gaussian(x, y)

        return gaussian, gaussian_dx
    if kind == "exponential":
        length = _number(parameters, "length", path, 0.2)

        def exponential(x, y):
            return np.exp(-np.abs(x - y) / length)

        def exponential_dx(x, y):
            return -np.sign(x - y) / length * exponential(x, y)

        return exponential, exponential_dx
    if kind == "finite_rank":
        weights = np.asarray(_require(parameters, "eigenvalues", path), dtype=float)
        if weights.ndim != 1 or np.any(weights < 0):
            raise ConfigError("Eigenvalues must be a list of nonnegative numbers", field=f"{path}.eigenvalues")
        ks = np.arange(1, weights.size + 1)

        def modes(x):
            x = np.asarray(x, dtype=float)[..., None]
            return math.sqrt(2.0) * np.sin(ks * math.pi * x)

        def mode_derivatives(x):
            x = np.asarray(x, dtype=float)[..., None]
            return math.sqrt(2.0) * ks * math.pi * np.cos(ks * math.pi * x)

        def finite_rank(x, y):
            return np.sum(weights * modes(x) * modes(y), axis=-1)

        def finite_rank_dx(x, y):
            return np.sum(weights * mode_derivatives(x) * modes(y), axis=-1)

        return finite_rank, finite_rank_dx
    raise ConfigError(f"Unknown kernel type '{kind}'", field=f"{path}.type")


def _scaled(fn: Callable, factor: float) -> Callable:
    def scaled(x, y):
        return factor * fn(x, y)

    return scaled


def build_space(entry: Dict, path: str, nodes: Optional[int] = None) -> GroundSpace:
    n = int(nodes if nodes is not None else _number(entry, "nodes", path))
    rule = entry.get("rule", "midpoint")
    if rule == "discrete":
        return GroundSpace.discrete(n)
    density, beta = build_density(entry.get("density"), f"{path}.density")
    try:
        return GroundSpace.uniform(n, rule, density, beta)
    except ValueError as e:
        raise ConfigError(str(e), field=f"{path}.rule") from e


def build_kernel_entry(entry: Dict, path: str = "kernel", nodes: Optional[int] = None) -> KernelMatrix:
    """
    Build a kernel from its configuration entry.

    A target_max_eigenvalue rescales the amplitude exactly, since the spectrum is linear
    in it; otherwise parameters.amplitude (default 1) is used as given.
    """
    if not isinstance(entry, dict):
        raise ConfigError("Kernel entry must be an object", field=path)
    kind = _require(entry, "type", path)
    if kind not in KERNEL_TYPES:
        raise ConfigError(f"Unknown kernel type '{kind}'", field=f"{path}.type")
    parameters = entry.get("parameters", {})
    target = entry.get("target_max_eigenvalue")

    if kind == "explicit_matrix":
        if "matrix" in entry:
            raw = np.asarray(entry["matrix"], dtype=float)
        else:
            raw = read_matrix_csv(_require(entry, "path", path))
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ConfigError(f"Explicit kernel must be square, got {raw.shape}", field=f"{path}.matrix")
        space = GroundSpace.discrete(raw.shape[0])
        if target is not None:
            raw = raw * float(target) / float(linalg.eigvalsh(raw).max())
        return kernel_from_raw(space, raw)

    space = build_space(entry, path, nodes)
    fn, dx = _kernel_functions(kind, parameters, f"{path}.parameters")
    amplitude = _number(parameters, "amplitude", f"{path}.parameters", 1.0)
    if target is not None:
        x = space.nodes
        root = np.sqrt(space.masses)
        values = np.broadcast_to(fn(x[:, None], x[None, :]), (space.size, space.size))
        highest = float(linalg.eigvalsh(root[:, None] * values * root[None, :]).max())
        if highest <= 0:
            raise ConfigError("Kernel has no positive eigenvalue to scale", field=f"{path}.target_max_eigenvalue")
        amplitude = float(target) / highest
    return build_kernel(space, _scaled(fn, amplitude), _scaled(dx, amplitude))


def build_field(entry: Dict, path: str = "field") -> VectorField:
    kind = _require(entry, "type", path)
    try:
        if kind == "bump":
            return bump_field(
                _number(entry, "center", path, 0.5),
                _number(entry, "radius", path, 0.35),
                _number(entry, "amplitude", path, 0.15),
            )
        if kind == "sine_window":
            return sine_window_field(
                _number(entry, "lo", path, 0.1),
                _number(entry, "hi", path, 0.9),
                _number(entry, "amplitude", path, 0.1),
            )
        if kind == "polynomial":
            return polynomial_field(
                _number(entry, "lo", path, 0.1),
                _number(entry, "hi", path, 0.9),
                _require(entry, "coefficients", path),
            )
        if kind == "zero":
            return zero_field()
    except ValueError as e:
        if isinstance(e, LabError):
            raise
        raise ConfigError(str(e), field=path) from e
    raise ConfigError(f"Unknown vector field type '{kind}'", field=f"{path}.type")


def build_functional(entry: Dict, path: str = "functional") -> CylindricalFunctional:
    outer = _require(entry, "outer", path)
    kind = _require(outer, "type", f"{path}.outer")
    if kind == "tanh":
        outer_fn = tanh_outer(_number(outer, "scale", f"{path}.outer", 1.0))
    elif kind == "gaussian_bump":
        outer_fn = gaussian_bump_outer(
            _number(outer, "center", f"{path}.outer", 0.0),
            _number(outer, "width", f"{path}.outer", 1.0),
        )
    elif kind == "polynomial":
        outer_fn = polynomial_outer(_require(outer, "coefficients", f"{path}.outer"))
    elif kind == "constant":
        outer_fn = constant_outer(_number(outer, "value", f"{path}.outer", 1.0))
    else:
        raise ConfigError(f"Unknown outer function '{kind}'", field=f"{path}.outer.type")

    probes = []
    for i, probe in enumerate(entry.get("probes", [])):
        probe_path = f"{path}.probes[{i}]"
        probe_kind = _require(probe, "type", probe_path)
        if probe_kind == "sine":
            probes.append(sine_probe(int(_number(probe, "k", probe_path, 1))))
        elif probe_kind == "bump":
            probes.append(
                bump_probe(
                    _number(probe, "center", probe_path, 0.5),
                    _number(probe, "radius", probe_path, 0.3),
                )
            )
        else:
            raise ConfigError(f"Unknown probe function '{probe_kind}'", field=f"{probe_path}.type")
    if not probes and kind != "constant":
        raise ConfigError("A non-constant functional needs at least one probe", field=f"{path}.probes")
    return CylindricalFunctional(outer_fn, tuple(probes))


def test_function_callable(entry: Dict, path: str = "test_function") -> Callable:
    """Nonnegative Laplace test function f as a vectorized callable on [0, 1]."""
    kind = _require(entry, "type", path)
    if kind == "constant":
        value = _number(entry, "value", path)
        if value < 0:
            raise ConfigError("Test functions must be nonnegative", field=f"{path}.value")

        def constant(x):
            return np.full_like(np.asarray(x, dtype=float), value)

        return constant
    if kind == "bump":
        center = _number(entry, "center", path, 0.5)
        radius = _number(entry, "radius", path, 0.25)
        height = _number(entry, "height", path, 1.0)
        profile = bump_probe(center, radius).h

        def bump(x):
            return height * profile(x)

        return bump
    if kind == "cosine":
        height = _number(entry, "height", path, 1.0)
        frequency = _number(entry, "frequency", path, 1.0)

        def cosine(x):
            return height * 0.5 * (1.0 + np.cos(2.0 * math.pi * frequency * np.asarray(x, dtype=float)))

        return cosine
    raise ConfigError(f"Unknown test function type '{kind}'", field=f"{path}.type")


def build_test_function(entry: Dict, space: GroundSpace, path: str = "test_function") -> StepFunction:
    """Nonnegative Laplace test function f sampled on the nodes."""
    return StepFunction(test_function_callable(entry, path)(space.nodes))


class SuiteConfig:
    """Validated verification suite loaded from JSON."""

    def __init__(self, data: Dict, source: str = "<memory>"):
        if not isinstance(data, dict):
            raise ConfigError(f"Suite {source} must be a JSON object")
        self.data = data
        self.source = source
        for section in ("kernels", "fields", "functionals", "test_functions"):
            if not isinstance(data.get(section, {}), dict):
                raise ConfigError(f"Section '{section}' must be an object", field=section)
        if not isinstance(data.get("checks", []), list):
            raise ConfigError("Section 'checks' must be a list", field="checks")
        self._kernels: Dict[Tuple[str, Optional[int]], KernelMatrix] = {}
        self._validate_checks()

    @classmethod
    def load(cls, path: str) -> "SuiteConfig":
        logging.info(f"Loading suite configuration from {path}")
        return cls(load_json(path), source=path)

    @property
    def digest(self) -> str:
        return digest(self.data)

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", DEFAULT_SEED))

    @property
    def samples(self) -> int:
        return int(self.data.get("samples", DEFAULT_SAMPLES))

    @property
    def base_dir(self) -> str:
        return os.path.dirname(os.path.abspath(self.source)) if self.source != "<memory>" else os.getcwd()

    def _validate_checks(self):
        for index, entry in enumerate(self.data.get("checks", [])):
            path = f"checks[{index}]"
            if not isinstance(entry, dict):
                raise ConfigError("Check entry must be an object", field=path)
            name = _require(entry, "name", path)
            if name not in CHECK_NAMES:
                raise ConfigError(f"Unknown check '{name}'", field=f"{path}.name")
            for key, section in (
                ("kernel", "kernels"),
                ("field", "fields"),
                ("F", "functionals"),
                ("G", "functionals"),
                ("test_function", "test_functions"),
            ):
                if key in entry and entry[key] not in self.data.get(section, {}):
                    raise ConfigError(
                        f"Unknown {section[:-1].replace('_', ' ')} '{entry[key]}'",
                        field=f"{path}.{key}",
                    )

    def checks(self, names: Optional[List[str]] = None) -> List[Tuple[int, Dict]]:
        """(index in the file, entry) for every check, optionally filtered by name or id."""
        selected = []
        for index, entry in enumerate(self.data.get("checks", [])):
            if names is None or entry["name"] in names or entry.get("id") in names:
                selected.append((index, entry))
        return selected

    def kernel(self, name: str, nodes: Optional[int] = None) -> KernelMatrix:
        key = (name, nodes)
        if key not in self._kernels:
            kernels = self.data.get("kernels", {})
            if name not in kernels:
                raise ConfigError(f"Unknown kernel '{name}'", field=f"kernels.{name}")
            entry = dict(kernels[name])
            if entry.get("type") == "explicit_matrix" and "path" in entry and not os.path.isabs(entry["path"]):
                entry["path"] = os.path.join(self.base_dir, entry["path"])
            self._kernels[key] = build_kernel_entry(entry, f"kernels.{name}", nodes)
        return self._kernels[key]

    def field(self, name: str) -> VectorField:
        return build_field(self._section_entry("fields", name), f"fields.{name}")

    def functional(self, name: str) -> CylindricalFunctional:
        return build_functional(self._section_entry("functionals", name), f"functionals.{name}")

    def test_function(self, name: str, space: GroundSpace) -> StepFunction:
        return build_test_function(
            self._section_entry("test_functions", name), space, f"test_functions.{name}"
        )

    def test_function_callable(self, name: str) -> Callable:
        return test_function_callable(
            self._section_entry("test_functions", name), f"test_functions.{name}"
        )

    def _section_entry(self, section: str, name: str) -> Dict:
        entries = self.data.get(section, {})
        if name not in entries:
            raise ConfigError(f"Unknown entry '{name}'", field=f"{section}.{name}")
        return entries[name]


def load_kernel_config(path: str, name: Optional[str] = None) -> Tuple[KernelMatrix, str]:
    """
    Load a kernel from a single kernel entry file or from a suite.

    Returns:
        tuple: (kernel, digest of the configuration data)
    """
    data = load_json(path)
    if isinstance(data, dict) and "kernels" in data:
        suite = SuiteConfig(data, source=path)
        return suite.kernel(name or DEFAULT_KERNEL), suite.digest
    if isinstance(data, dict) and "type" in data:
        return build_kernel_entry(data), digest(data)
    raise ConfigError(f"{path} holds neither a kernel entry nor a suite")

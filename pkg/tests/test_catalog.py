"""
Tests for suite configuration loading, kernel catalog entries and the file helpers.
"""

import csv
import json
import os
import tempfile

import numpy as np
import pytest
from scipy.integrate import trapezoid

from dppp_lab.config.config import DEFAULT_CONFIG_PATH, get_check_names
from dppp_lab.src import catalog
from dppp_lab.src.catalog import (
    DEFAULT_KERNEL,
    SuiteConfig,
    build_density,
    build_field,
    build_functional,
    build_kernel_entry,
    load_kernel_config,
)
from dppp_lab.src.errors import ConfigError, SpectrumViolation
from dppp_lab.src.law import Configuration
from dppp_lab.src.report_writer import ReportWriter
from dppp_lab.src.utils import (
    digest,
    load_json,
    parse_index_list,
    parse_value_list,
    read_matrix_csv,
    stream_family,
    write_samples_csv,
)


class TestUtils:
    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()

    def test_load_json_reports_location(self):
        path = os.path.join(self.temp_dir, "broken.json")
        with open(path, "w") as f:
            f.write('{\n  "seed": 1,\n  "samples": \n}')
        with pytest.raises(ConfigError) as excinfo:
            load_json(path)
        assert excinfo.value.line == 4
        assert "line 4" in str(excinfo.value)

    def test_load_json_missing_file(self):
        with pytest.raises(ConfigError):
            load_json(os.path.join(self.temp_dir, "absent.json"))

    def test_parse_lists(self):
        assert parse_index_list("0;3;3;5") == (0, 3, 3, 5)
        assert parse_index_list("") == ()
        assert parse_value_list("0.5; 1") == [0.5, 1.0]
        with pytest.raises(ConfigError):
            parse_index_list("1;x")

    def test_read_matrix_csv(self):
        path = os.path.join(self.temp_dir, "kernel.csv")
        with open(path, "w") as f:
            f.write("n,2\n0.3,0.1\n0.1,0.2\n")
        np.testing.assert_allclose(read_matrix_csv(path), [[0.3, 0.1], [0.1, 0.2]])

        with open(path, "w") as f:
            f.write("0.3,0.1\n0.1,0.2\n")
        with pytest.raises(ConfigError):
            read_matrix_csv(path)

        with open(path, "w") as f:
            f.write("n,3\n0.3,0.1\n0.1,0.2\n")
        with pytest.raises(ConfigError):
            read_matrix_csv(path)

    def test_write_samples_csv(self):
        path = os.path.join(self.temp_dir, "nested", "samples.csv")
        write_samples_csv(path, [(0, Configuration.from_indices([1, 4, 4])), (1, Configuration())])
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows == [
            ["replica", "node_indices", "multiplicities"],
            ["0", "1;4", "1;2"],
            ["1", "", ""],
        ]

    def test_digest_ignores_key_order(self):
        assert digest({"a": 1, "b": [1, 2]}) == digest({"b": [1, 2], "a": 1})
        assert stream_family("fredholm") == stream_family("fredholm")
        assert stream_family("fredholm") != stream_family("janossy")


class TestCatalogEntries:
    def test_target_max_eigenvalue(self):
        K = build_kernel_entry(
            {"type": "gaussian", "nodes": 16, "parameters": {"length": 0.3}, "target_max_eigenvalue": 0.6}
        )
        assert K.max_eigenvalue == pytest.approx(0.6, rel=1e-10)

    def test_finite_rank_kernel(self):
        K = build_kernel_entry({"type": "finite_rank", "nodes": 64, "parameters": {"eigenvalues": [0.5, 0.2]}})
        top = np.sort(K.eigenvalues)[::-1]
        np.testing.assert_allclose(top[:2], [0.5, 0.2], atol=1e-3)
        assert top[2] < 1e-10

    def test_explicit_matrix_inline_and_from_csv(self):
        inline = build_kernel_entry({"type": "explicit_matrix", "matrix": [[0.4, 0.1], [0.1, 0.3]]})
        assert inline.space.size == 2

        temp_dir = tempfile.mkdtemp()
        path = os.path.join(temp_dir, "k.csv")
        with open(path, "w") as f:
            f.write("n,2\n0.4,0.1\n0.1,0.3\n")
        from_csv = build_kernel_entry({"type": "explicit_matrix", "path": path})
        np.testing.assert_allclose(from_csv.raw, inline.raw)

    def test_invalid_kernels(self):
        with pytest.raises(ConfigError):
            build_kernel_entry({"type": "bessel", "nodes": 4})
        with pytest.raises(ConfigError):
            build_kernel_entry({"nodes": 4})
        with pytest.raises(ConfigError):
            build_kernel_entry({"type": "gaussian", "nodes": "many"})
        with pytest.raises(SpectrumViolation):
            build_kernel_entry({"type": "gaussian", "nodes": 8, "parameters": {"amplitude": 5.0}})

    def test_densities_are_normalized(self):
        x = np.linspace(0.0, 1.0, 2001)
        for entry in ({"type": "uniform"}, {"type": "exponential", "rate": 2.0}, {"type": "gaussian", "mean": 0.3, "sd": 0.2}):
            density, _ = build_density(entry)
            assert trapezoid(density(x), x) == pytest.approx(1.0, rel=1e-5)
        with pytest.raises(ConfigError):
            build_density({"type": "gaussian", "sd": 0.0})

    def test_fields_functionals_and_test_functions(self):
        assert build_field({"type": "bump", "radius": 0.2}).support == pytest.approx((0.3, 0.7))
        with pytest.raises(ConfigError):
            build_field({"type": "bump", "center": 0.1, "radius": 0.3})
        with pytest.raises(ConfigError):
            build_field({"type": "vortex"})

        F = build_functional({"outer": {"type": "tanh"}, "probes": [{"type": "sine", "k": 2}]})
        assert F(np.array([0.25, 0.5])) == pytest.approx(np.tanh(1.0), abs=1e-12)
        with pytest.raises(ConfigError):
            build_functional({"outer": {"type": "tanh"}, "probes": []})

        cosine = catalog.test_function_callable({"type": "cosine", "height": 2.0})
        np.testing.assert_allclose(cosine(np.array([0.0, 0.5])), [2.0, 0.0], atol=1e-12)
        with pytest.raises(ConfigError):
            catalog.test_function_callable({"type": "constant", "value": -1.0})


class TestSuiteConfig:
    def setup_method(self):
        self.data = {
            "seed": 7,
            "samples": 500,
            "kernels": {"k": {"type": "gaussian", "nodes": 5, "rule": "discrete", "target_max_eigenvalue": 0.5}},
            "fields": {"f": {"type": "bump"}},
            "checks": [{"id": "det", "name": "fredholm", "kernel": "k"}],
        }

    def test_accessors(self):
        suite = SuiteConfig(self.data)
        assert suite.seed == 7
        assert suite.samples == 500
        assert [entry["id"] for _, entry in suite.checks(["fredholm"])] == ["det"]
        assert suite.checks(["det"]) == suite.checks()
        assert suite.checks(["janossy"]) == []
        assert suite.kernel("k") is suite.kernel("k")
        assert suite.kernel("k").max_eigenvalue == pytest.approx(0.5)

    def test_unknown_check_name(self):
        self.data["checks"].append({"name": "teleport"})
        with pytest.raises(ConfigError) as excinfo:
            SuiteConfig(self.data)
        assert "checks[1].name" in str(excinfo.value)

    def test_unknown_references(self):
        self.data["checks"][0]["kernel"] = "missing"
        with pytest.raises(ConfigError):
            SuiteConfig(self.data)
        self.data["checks"][0]["kernel"] = "k"
        self.data["checks"][0]["field"] = "missing"
        with pytest.raises(ConfigError):
            SuiteConfig(self.data)

    def test_relative_csv_path_is_resolved_against_the_suite(self):
        temp_dir = tempfile.mkdtemp()
        with open(os.path.join(temp_dir, "k.csv"), "w") as f:
            f.write("n,2\n0.4,0.1\n0.1,0.3\n")
        suite_path = os.path.join(temp_dir, "suite.json")
        with open(suite_path, "w") as f:
            json.dump({"kernels": {"m": {"type": "explicit_matrix", "path": "k.csv"}}}, f)
        K, config_digest = load_kernel_config(suite_path, "m")
        assert K.space.size == 2
        assert len(config_digest) == 64

    def test_bundled_suite_is_valid(self):
        suite = SuiteConfig.load(DEFAULT_CONFIG_PATH)
        names = {entry["name"] for _, entry in suite.checks()}
        assert names == set(get_check_names())
        assert 0 < suite.kernel(DEFAULT_KERNEL).max_eigenvalue < 1

    def test_bundled_suite_monte_carlo_sample_counts(self):
        suite = SuiteConfig.load(DEFAULT_CONFIG_PATH)
        assert suite.samples >= 100000
        for _, entry in suite.checks():
            count = int(entry.get("samples", suite.samples))
            # error_scaling draws n and 10 n samples
            total = 11 * count if entry["name"] == "error_scaling" else count
            assert total >= 100000, entry["id"]

    def test_single_kernel_file(self):
        temp_dir = tempfile.mkdtemp()
        path = os.path.join(temp_dir, "kernel.json")
        with open(path, "w") as f:
            json.dump({"type": "explicit_matrix", "matrix": [[0.2]]}, f)
        K, _ = load_kernel_config(path)
        assert K.trace == pytest.approx(0.2)
        with open(path, "w") as f:
            json.dump([1, 2], f)
        with pytest.raises(ConfigError):
            load_kernel_config(path)


class TestReportWriter:
    def test_report_is_sorted_and_stable(self):
        temp_dir = tempfile.mkdtemp()
        writer = ReportWriter(temp_dir)
        reports = [{"check": "fredholm", "pass": True, "lhs": 1.0}]
        first = writer.save_report(reports, "abc", "first.json")
        second = writer.save_report(reports, "abc", "second.json")
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()
        with open(first) as f:
            document = json.load(f)
        assert document["config_digest"] == "abc"
        assert document["reports"] == reports

    def test_series(self):
        writer = ReportWriter(tempfile.mkdtemp())
        path = writer.save_series("scaling", ["n", "error"], [[32, 0.1], [64, 0.05]])
        with open(path, newline="") as f:
            assert list(csv.reader(f)) == [["n", "error"], ["32", "0.1"], ["64", "0.05"]]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

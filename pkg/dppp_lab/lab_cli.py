import argparse
import json
import logging
import sys
from typing import List

from .config.config import DEFAULT_CONFIG_PATH, DEFAULT_SEED, get_check_names
from .src.catalog import DEFAULT_KERNEL, load_kernel_config
from .src.errors import ConfigError, LabError
from .src.law import Configuration, janossy, laplace_functional, thinning_law
from .src.linalg_kernel import AlphaKind, AlphaParameter
from .src.sampler import RngStream, run_replicas, sample_alpha, sample_dpp, sample_poisson
from .src.utils import (
    digest,
    parse_index_list,
    parse_value_list,
    stream_family,
    write_samples_csv,
)
from .src.verify import run_suite

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
VALUE_OPTIONS = ("--alpha",)


def _alpha(text: str) -> AlphaParameter:
    try:
        return AlphaParameter.parse(text)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _attach_negative_values(argv: List[str]) -> List[str]:
    """Rewrite `--alpha -1/2` as `--alpha=-1/2` so argparse does not read the value as an option."""
    joined = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in VALUE_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            joined.append(f"{token}={argv[i + 1]}")
            i += 2
        else:
            joined.append(token)
            i += 1
    return joined


def _configure_logging(verbose: bool):
    # the src modules configure the root logger on import, replace it with the log file
    logging.basicConfig(filename="logs.log", level=logging.INFO, format=LOG_FORMAT, force=True)

    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        # Also log to console for verbose mode
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(logging.DEBUG)
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(console_handler)


def _add_kernel_arguments(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--kernel-config",
        type=str,
        default=DEFAULT_CONFIG_PATH,
        help="Kernel entry or suite JSON (default: bundled suite)",
    )
    parser.add_argument(
        "--kernel",
        type=str,
        default=DEFAULT_KERNEL,
        help=f"Kernel name when --kernel-config is a suite (default: {DEFAULT_KERNEL})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Numerical laboratory for alpha-determinantal and permanental point processes"
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Enable verbose logging for debugging purposes",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="Run the verification suite")
    verify.add_argument(
        "--config",
        type=str,
        default=DEFAULT_CONFIG_PATH,
        help="Suite configuration JSON (default: bundled suite)",
    )
    verify.add_argument(
        "--check",
        action="append",
        default=None,
        help=f"Check name or id to run, repeatable (names: {', '.join(get_check_names())})",
    )
    verify.add_argument("--seed", type=int, default=None, help="Override the suite seed")
    verify.add_argument("--samples", type=int, default=None, help="Override every Monte Carlo sample count")
    verify.add_argument("--parallel", action="store_true", help="Run checks and replicas concurrently")
    verify.add_argument("--out", type=str, default="report.json", help="Report path (default: report.json)")
    verify.add_argument("--emit-plots", type=str, default=None, help="Directory for per-check CSV series")

    sample = commands.add_parser("sample", help="Draw configurations of the alpha-process")
    _add_kernel_arguments(sample)
    sample.add_argument("--alpha", type=_alpha, default=AlphaParameter.parse("-1"), help="Rational alpha, e.g. --alpha -1/2")
    sample.add_argument("--count", type=int, default=10, help="Number of configurations (default: 10)")
    sample.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"Random seed (default: {DEFAULT_SEED})")
    sample.add_argument("--out", type=str, default="samples.csv", help="CSV output path (default: samples.csv)")

    laplace = commands.add_parser("laplace", help="Evaluate the Laplace functional")
    _add_kernel_arguments(laplace)
    laplace.add_argument("--alpha", type=_alpha, required=True, help="Rational alpha, e.g. --alpha -1/2")
    laplace.add_argument("--f", type=str, required=True, help="Node values of f, ';'-separated or one constant")

    janossy_cmd = commands.add_parser("janossy", help="Evaluate a Janossy density")
    _add_kernel_arguments(janossy_cmd)
    janossy_cmd.add_argument("--alpha", type=_alpha, required=True, help="Rational alpha, e.g. --alpha -1/2")
    janossy_cmd.add_argument("--points", type=str, required=True, help="Node indices, e.g. '0;3;3'")

    thinning = commands.add_parser("thinning-weights", help="Conditional law of one layer given the union")
    _add_kernel_arguments(thinning)
    thinning.add_argument("--s", type=int, required=True, help="Number of layers")
    thinning.add_argument("--omega", type=str, required=True, help="Union configuration, e.g. '1;3;3'")
    return parser


def _emit(result: dict):
    print(json.dumps(result, indent=2, sort_keys=True))


def _inputs_digest(kernel_digest: str, args: argparse.Namespace, **inputs) -> str:
    return digest({"kernel_config": kernel_digest, "kernel": args.kernel, **inputs})


def _run_sample(args: argparse.Namespace) -> int:
    K, _ = load_kernel_config(args.kernel_config, args.kernel)
    alpha = args.alpha

    def draw_one(stream: RngStream) -> Configuration:
        if alpha.kind == AlphaKind.POISSON:
            return sample_poisson(K, stream)
        if float(alpha) == -1.0:
            return sample_dpp(K, stream)
        return sample_alpha(K, alpha, stream).merged

    def draw(stream: RngStream, size: int) -> list:
        return [(stream.stream, draw_one(stream)) for _ in range(size)]

    configurations = run_replicas(draw, args.count, args.seed, stream_family("sample"))
    write_samples_csv(args.out, configurations)
    logging.info(f"Wrote {len(configurations)} configurations for alpha={alpha} to {args.out}")
    return 0


def _run_laplace(args: argparse.Namespace) -> int:
    K, kernel_digest = load_kernel_config(args.kernel_config, args.kernel)
    values = parse_value_list(args.f)
    if len(values) not in (1, K.size):
        raise ConfigError(f"--f needs 1 or {K.size} values, got {len(values)}", field="f")
    f = values * K.size if len(values) == 1 else values
    _emit(
        {
            "check": "laplace",
            "inputs_digest": _inputs_digest(kernel_digest, args, alpha=str(args.alpha), f=f),
            "value": laplace_functional(K, args.alpha, f),
        }
    )
    return 0


def _run_janossy(args: argparse.Namespace) -> int:
    K, kernel_digest = load_kernel_config(args.kernel_config, args.kernel)
    points = parse_index_list(args.points)
    if any(i >= K.size for i in points):
        raise ConfigError(f"Node index out of range for {K.size} nodes", field="points")
    _emit(
        {
            "check": "janossy",
            "inputs_digest": _inputs_digest(kernel_digest, args, alpha=str(args.alpha), points=list(points)),
            "value": janossy(K, args.alpha, Configuration.from_indices(points)),
        }
    )
    return 0


def _run_thinning(args: argparse.Namespace) -> int:
    K1, kernel_digest = load_kernel_config(args.kernel_config, args.kernel)
    omega = Configuration.from_indices(parse_index_list(args.omega))
    if any(i >= K1.size for i in omega.support):
        raise ConfigError(f"Node index out of range for {K1.size} nodes", field="omega")
    law = thinning_law(omega, args.s, K1)
    _emit(
        {
            "check": "thinning-weights",
            "inputs_digest": _inputs_digest(kernel_digest, args, s=args.s, omega=list(omega.indices)),
            "values": [{"eta": list(eta.indices), "weight": weight} for eta, weight in law.items()],
        }
    )
    return 0


def _run_verify(args: argparse.Namespace) -> int:
    reports, exit_code = run_suite(
        config_path=args.config,
        checks=args.check,
        seed=args.seed,
        samples=args.samples,
        parallel=args.parallel,
        out=args.out,
        emit_plots=args.emit_plots,
    )
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{status}  {report.check_id:<28} abs_error={report.abs_error:.3e}  tolerance={report.tolerance:.3e}")
    print(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed; report written to {args.out}")
    return exit_code


COMMANDS = {
    "verify": _run_verify,
    "sample": _run_sample,
    "laplace": _run_laplace,
    "janossy": _run_janossy,
    "thinning-weights": _run_thinning,
}


def main():
    parser = build_parser()
    args = parser.parse_args(_attach_negative_values(sys.argv[1:]))
    _configure_logging(args.verbose)

    try:
        exit_code = COMMANDS[args.command](args)
    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        sys.exit(2)
    except LabError as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        sys.exit(1)
    sys.exit(exit_code)


if __name__ == "__main__":
    main()

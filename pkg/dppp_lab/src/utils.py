"""
Helpers shared by the CLI and the suite runner: JSON loading with located errors,
digests, list parsing and CSV input/output.
"""

import csv
import hashlib
import json
import logging
import os
import zlib
from typing import Iterable, List, Tuple

import numpy as np

from .errors import ConfigError


def canonical_json(data) -> str:
    """Sorted-key, compact JSON used for digests."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def digest(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def load_json(path: str):
    """Load a JSON file; syntax errors become ConfigError with line and column."""
    if not os.path.exists(path):
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        logging.error(f"Invalid JSON in {path}: {e.msg}")
        raise ConfigError(f"Invalid JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e


def parse_index_list(text: str) -> Tuple[int, ...]:
    """Parse "0;3;3;5" into node indices (repeats allowed); "" is the empty list."""
    parts = [part.strip() for part in str(text).split(";") if part.strip()]
    try:
        return tuple(int(part) for part in parts)
    except ValueError as e:
        raise ConfigError(f"Cannot parse node indices '{text}'") from e


def parse_value_list(text: str) -> List[float]:
    parts = [part.strip() for part in str(text).split(";") if part.strip()]
    try:
        return [float(part) for part in parts]
    except ValueError as e:
        raise ConfigError(f"Cannot parse values '{text}'") from e


def read_matrix_csv(path: str) -> np.ndarray:
    """Read an explicit kernel: header row "n,<size>" then size rows of size reals."""
    if not os.path.exists(path):
        raise ConfigError(f"Kernel matrix file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if row]
    if not rows or rows[0][0].strip() != "n" or len(rows[0]) < 2:
        raise ConfigError(f"Kernel matrix {path} must start with a 'n,<size>' header", line=1)
    try:
        size = int(rows[0][1])
        matrix = np.array([[float(value) for value in row] for row in rows[1:]])
    except ValueError as e:
        raise ConfigError(f"Non-numeric entry in kernel matrix {path}: {e}") from e
    if matrix.shape != (size, size):
        raise ConfigError(f"Kernel matrix {path} has shape {matrix.shape}, header says {size}")
    return matrix


def write_samples_csv(path: str, rows: Iterable[Tuple[int, object]]) -> str:
    """Write (replica, Configuration) rows as `replica,node_indices,multiplicities`."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["replica", "node_indices", "multiplicities"])
        for replica, xi in rows:
            writer.writerow(
                [
                    replica,
                    ";".join(str(i) for i, _ in xi.atoms),
                    ";".join(str(m) for _, m in xi.atoms),
                ]
            )
    logging.info(f"Samples written to {path}")
    return path


def stream_family(check_id: str) -> int:
    """Stable random-stream family for a check identifier."""
    return zlib.crc32(check_id.encode("utf-8"))

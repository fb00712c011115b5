"""File formats used by the CLI: CSV matrices, partition JSON, reports."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from titan.errors import ParseError
from titan.solver import LinearSystem, Partition, partition_system


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in M:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError(f"non-numeric entry in {path}", lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(f"ragged row in {path}: {len(rows[-1])} != {len(rows[0])} columns", lineno)
    if not rows:
        raise ParseError(f"{path} holds no data")
    return np.array(rows, dtype=np.float64)


def read_vector_csv(path) -> np.ndarray:
    M = read_matrix_csv(path)
    if M.shape[1] != 1 and M.shape[0] != 1:
        raise ParseError(f"{path} is {M.shape[0]}x{M.shape[1]}, expected a vector")
    return M.reshape(-1)


def write_partition(path, row_counts) -> None:
    write_json(path, {"row_counts": [int(c) for c in row_counts]})


def load_system_dir(directory, check_rank: bool = True) -> tuple[LinearSystem, Partition]:
    """``A.csv``, ``b.csv`` and ``partition.json`` from one directory."""
    d = Path(directory)
    A = read_matrix_csv(d / "A.csv")
    b = read_vector_csv(d / "b.csv")
    doc = read_json(d / "partition.json")
    if "row_counts" not in doc:
        raise ParseError(f"{d / 'partition.json'} has no 'row_counts'")
    system = LinearSystem(A, b, check_rank=check_rank)
    return system, partition_system(system, doc["row_counts"])


def read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p

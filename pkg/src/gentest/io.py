"""Sample and vector file formats.

Samples are CSV with a ``f0,...,f{d-1}`` header, or raw little-endian float64
row-major ``.f64`` files with a JSON sidecar ``{"n": ..., "d": ...}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .linalg import as_sample


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_sample(path, x, fmt=None) -> Path:
    path = Path(path)
    x = np.asarray(x, dtype=np.float64)
    fmt = fmt or ("f64" if path.suffix == ".f64" else "csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        header = ",".join(f"f{i}" for i in range(x.shape[1]))
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for row in x:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt == "f64":
        path.write_bytes(x.astype("<f8").tobytes(order="C"))
        sidecar_path(path).write_text(json.dumps({"n": int(x.shape[0]), "d": int(x.shape[1])}))
    else:
        raise InvalidInputError(f"unknown sample format {fmt!r}")
    return path


def read_sample(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".f64":
        meta = json.loads(sidecar_path(path).read_text())
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        n, d = int(meta["n"]), int(meta["d"])
        if raw.size != n * d:
            raise InvalidInputError(f"{path}: expected {n * d} values, found {raw.size}")
        return as_sample(raw.reshape(n, d).astype(np.float64), str(path))
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not all(h.strip().startswith("f") for h in header):
        raise InvalidInputError(f"{path}: expected a f0,...,f(d-1) header row")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise InvalidInputError(f"{path}: header has {len(header)} columns, rows have {data.shape[1]}")
    return as_sample(data, str(path))


def write_vector(path, values, header: dict) -> Path:
    """Little-endian float64 vector plus a JSON header next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.asarray(values, dtype="<f8").tobytes())
    sidecar_path(path).write_text(json.dumps(header, sort_keys=True, indent=2))
    return path


def read_vector(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    header = json.loads(sidecar_path(path).read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64), header

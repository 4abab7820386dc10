"""Output helpers: round-trip float formatting, digests, run manifests."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

MANIFEST_SCHEMA_VERSION = 1
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


@numba.njit(cache=True)
def _fnv1a64_bytes(data):
    h = np.uint64(FNV64_OFFSET)
    prime = np.uint64(FNV64_PRIME)
    for byte in data:
        h = (h ^ np.uint64(byte)) * prime
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    return int(_fnv1a64_bytes(np.frombuffer(data, dtype=np.uint8)))


def file_digest(path) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


def fmt(x) -> str:
    """17 significant digits: round-trips every float64."""
    return format(float(x), ".17g")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return repr(x)
        return x
    if hasattr(obj, "__dataclass_fields__"):
        return to_jsonable({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    return obj


def write_json(path, obj) -> Path:
    """JSON with shortest round-trip float repr (exact for float64)."""
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_samples_csv(path, samples: np.ndarray) -> Path:
    path = Path(path)
    np.savetxt(path, samples, fmt="%.17g", delimiter=",")
    return path


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int | None = None
    grid_size: int | None = None
    n: int | None = None
    n_values: list[int] | None = None
    replicas: int | None = None
    tool_version: str = ""
    rng_algorithm: str = ""
    duration_seconds: float = 0.0
    argv: list[str] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def to_json(self) -> dict:
        d = to_jsonable(self)
        d["schema_version"] = MANIFEST_SCHEMA_VERSION
        return d


def worker_count() -> int:
    """Worker cap from CCHAIN_THREADS, defaulting to the CPU count."""
    raw = os.environ.get("CCHAIN_THREADS")
    if raw:
        try:
            val = int(raw)
        except ValueError:
            raise ValueError(f"CCHAIN_THREADS must be a positive integer, got {raw!r}") from None
        if val < 1:
            raise ValueError(f"CCHAIN_THREADS must be a positive integer, got {raw!r}")
        return val
    return os.cpu_count() or 1

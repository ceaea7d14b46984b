"""Sample-set file formats and bundled toy data.

Two interchangeable layouts: CSV with a `x0..x{D-1}` header (floats written
with 17 significant digits, so the round-trip is bit-exact) and raw float64
binary with a magic/N/D header. Loading sniffs the magic bytes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .potential import as_sample_matrix
from .rng import make_rng

SAMPLES_MAGIC = b"MXBSAMP1"


def save_samples_csv(path, X) -> None:
    X = as_sample_matrix(X, name="samples")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(f"x{i}" for i in range(X.shape[1])) + "\n")
        for row in X:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def save_samples_bin(path, X) -> None:
    X = as_sample_matrix(X, name="samples")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sQQ", SAMPLES_MAGIC, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X).tobytes())


def load_samples(path) -> np.ndarray:
    """Load an (N, D) float64 sample matrix from CSV or binary.

    Both layouts produce identical matrices for the same data. Malformed CSV
    rows are reported with their line number; non-finite values are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == SAMPLES_MAGIC:
        return _load_bin(path)
    return _load_csv(path)


def _load_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, n, d = struct.unpack("<8sQQ", fh.read(24))
        if magic != SAMPLES_MAGIC:
            raise ValueError(f"{path}: bad magic")
        data = np.frombuffer(fh.read(), dtype=np.float64)
    if data.size != n * d:
        raise ValueError(f"{path}: truncated payload ({data.size} values, expected {n * d})")
    X = data.reshape(n, d)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite entries")
    return X


def _load_csv(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    expected = [f"x{i}" for i in range(len(header))]
    if header != expected:
        raise ValueError(f"{path}: line 1: expected header {','.join(expected)}")
    d = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d:
            raise ValueError(f"{path}: line {lineno}: expected {d} columns, got {len(parts)}")
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: malformed float") from None
        if not all(np.isfinite(row)):
            raise ValueError(f"{path}: line {lineno}: non-finite value")
        rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def swiss_roll(n: int, rng=0, noise: float = 0.1) -> np.ndarray:
    """2D spiral fixture: two turns, radius growing from 1 to 3, plus
    isotropic Gaussian jitter."""
    rng = make_rng(rng)
    angle = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    base = np.stack([angle * np.cos(angle), angle * np.sin(angle)], axis=1) / (1.5 * np.pi)
    return base + noise * rng.standard_normal((n, 2))

"""Sample containers, reproducible random streams and on-disk formats.

Two serializations are supported:

* CSV: header ``x1,...,xd`` followed by one row per observation.
* Binary: a 16-byte header (magic ``DCV1``, little-endian u32 N, u32 d,
  u32 reserved = 0) followed by N*d little-endian float64 values, row-major.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidInputError

BIN_MAGIC = b"DCV1"
_HEADER = struct.Struct("<4sIII")


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *keys)``.

    Streams with different key tuples are independent; the same tuple always
    reproduces the same stream. Keys may be non-negative ints or strings.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("keys can only be combined with an integer seed")
        return seed
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """N observations in R^d (rows of ``data``) with provenance metadata."""

    data: np.ndarray
    seed: Any = None
    generator: str = "external"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.data, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InvalidInputError(f"samples must form an (N, d) array, got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "data", x)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def subset(self, idx, generator: str | None = None) -> "SampleSet":
        return SampleSet(self.data[idx], self.seed, generator or self.generator, dict(self.metadata))


def write_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(samples.dim)])
        for row in samples.data:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if header != [f"x{j + 1}" for j in range(len(header))]:
        raise InvalidInputError(f"{path}: header must be x1,...,xd")
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    return SampleSet(data, generator=f"csv:{Path(path).name}")


def to_bytes(samples: SampleSet) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(BIN_MAGIC, samples.n, samples.dim, 0))
    buf.write(np.ascontiguousarray(samples.data, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes, name: str = "bin") -> SampleSet:
    if len(raw) < _HEADER.size:
        raise InvalidInputError("binary sample file too short")
    magic, n, d, _ = _HEADER.unpack_from(raw)
    if magic != BIN_MAGIC:
        raise InvalidInputError(f"bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n * d:
        raise InvalidInputError(f"expected {8 * n * d} payload bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f8").reshape(n, d).astype(float)
    return SampleSet(data, generator=name)


def write_bin(samples: SampleSet, path) -> None:
    Path(path).write_bytes(to_bytes(samples))


def read_bin(path) -> SampleSet:
    return from_bytes(Path(path).read_bytes(), name=f"bin:{Path(path).name}")


def load_samples(path) -> SampleSet:
    """Read either format, sniffing the binary magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_bin(path) if head == BIN_MAGIC else read_csv(path)

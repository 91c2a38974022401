"""Scalar and vector robust-estimation primitives.

Trimmed means of squares, median-of-means over contiguous block plans and the
geometric median (Weiszfeld iteration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, InvalidParameterError

WEISZFELD_MAX_ITER = 200
WEISZFELD_STEP_TOL = 1e-9
WEISZFELD_EPS = 1e-12


def trim_count(n: int, theta: float) -> int:
    """Number of points removed by trimming a fraction theta of n, i.e. ceil(theta*n)."""
    # guard against 0.1*30 = 3.0000000000000004 style round-up
    return int(math.ceil(theta * n - 1e-9))


def n_blocks_for_delta(delta: float) -> int:
    """Block count max(1, ceil(log(1/delta)))."""
    if not 0.0 < delta < 1.0:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")
    return max(1, int(math.ceil(math.log(1.0 / delta) - 1e-9)))


@dataclass(frozen=True)
class BlockPlan:
    """Disjoint contiguous blocks ``[k*block_size, (k+1)*block_size)``; the remainder is dropped."""

    n_blocks: int
    block_size: int

    def __post_init__(self):
        if self.n_blocks < 1 or self.block_size < 1:
            raise InvalidParameterError("a block plan needs at least one block of one sample")

    @classmethod
    def for_size(cls, n_samples: int, n_blocks: int) -> "BlockPlan":
        if n_blocks < 1:
            raise InvalidParameterError(f"n_blocks must be positive, got {n_blocks}")
        if n_samples < n_blocks:
            raise InsufficientDataError(f"{n_samples} samples cannot fill {n_blocks} blocks")
        return cls(n_blocks=n_blocks, block_size=n_samples // n_blocks)

    @property
    def used(self) -> int:
        return self.n_blocks * self.block_size

    @property
    def assignment(self) -> list[range]:
        m = self.block_size
        return [range(k * m, (k + 1) * m) for k in range(self.n_blocks)]

    def check(self, n_samples: int) -> None:
        if self.used > n_samples:
            raise InsufficientDataError(
                f"plan needs {self.used} samples ({self.n_blocks} x {self.block_size}), got {n_samples}"
            )

    def block_means(self, values: np.ndarray) -> np.ndarray:
        """Per-block means along axis 0; trailing axes are kept."""
        values = np.asarray(values, dtype=float)
        self.check(values.shape[0])
        head = values[: self.used]
        return head.reshape((self.n_blocks, self.block_size) + values.shape[1:]).mean(axis=1)


def lower_median(xs, axis: int = 0) -> np.ndarray | float:
    """Order statistic of rank ceil(k/2) (1-based) along ``axis``."""
    xs = np.asarray(xs, dtype=float)
    k = xs.shape[axis]
    idx = (k - 1) // 2
    out = np.partition(xs, idx, axis=axis).take(idx, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def trimmed_mean_squares(xs, theta: float) -> float:
    """(1/((1-theta)N)) times the sum of squares, the ceil(theta*N) largest squares excluded."""
    xs = np.asarray(xs, dtype=float).ravel()
    n = xs.size
    if n == 0:
        raise InvalidInputError("empty input")
    if not 0.0 < theta < 1.0:
        raise InvalidParameterError(f"trim fraction must lie in (0, 1), got {theta}")
    k = trim_count(n, theta)
    if k >= n:
        raise InvalidParameterError(f"trimming {k} of {n} points leaves nothing")
    sq = xs * xs
    kept = np.partition(sq, n - k - 1)[: n - k] if k else sq
    return float(kept.sum() / ((1.0 - theta) * n))


def mom_mean(xs, plan: BlockPlan) -> float:
    """Lower median of the block means of ``xs`` under ``plan``."""
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size < plan.n_blocks:
        raise InsufficientDataError(f"{xs.size} samples cannot fill {plan.n_blocks} blocks")
    return lower_median(plan.block_means(xs))


def _gm_objective(z: np.ndarray, vs: np.ndarray) -> float:
    return float(np.sqrt(((vs - z) ** 2).sum(axis=1)).sum())


def geometric_median(
    vs,
    max_iter: int = WEISZFELD_MAX_ITER,
    tol: float = WEISZFELD_STEP_TOL,
    eps: float = WEISZFELD_EPS,
) -> np.ndarray:
    """Geometric median of the rows of ``vs`` by Weiszfeld's iteration.

    Starts from the coordinatewise mean. When one of the input points has an
    objective no larger than the final iterate, that input point is returned
    exactly, which also covers iterations stalled near a data point.
    """
    vs = np.asarray(vs, dtype=float)
    if vs.ndim == 1:
        vs = vs[:, None]
    if vs.shape[0] == 0:
        raise InvalidInputError("geometric median of an empty set")
    if vs.shape[0] == 1:
        return vs[0].copy()
    z = vs.mean(axis=0)
    for _ in range(max_iter):
        dist = np.sqrt(((vs - z) ** 2).sum(axis=1))
        w = 1.0 / np.maximum(dist, eps)
        z_new = (w[:, None] * vs).sum(axis=0) / w.sum()
        step = np.sqrt(((z_new - z) ** 2).sum())
        z = z_new
        if step < tol:
            break
    best = _gm_objective(z, vs)
    approx = _pairwise_objectives(vs)
    # Gram-based sums are only approximate; rescore the best few directly
    cand = np.argsort(approx, kind="stable")[:4]
    obj = np.array([_gm_objective(vs[i], vs) for i in cand])
    j = int(np.argmin(obj))
    if obj[j] <= best:
        return vs[cand[j]].copy()
    return z


def _pairwise_objectives(vs: np.ndarray, chunk: int = 1024) -> np.ndarray:
    # sum of distances from each input point to all others, via the Gram trick
    sq = (vs * vs).sum(axis=1)
    out = np.empty(vs.shape[0])
    for lo in range(0, vs.shape[0], chunk):
        blk = vs[lo : lo + chunk]
        d2 = sq[lo : lo + chunk, None] + sq[None, :] - 2.0 * (blk @ vs.T)
        out[lo : lo + chunk] = np.sqrt(np.maximum(d2, 0.0)).sum(axis=1)
    return out

"""Trimmed second-moment distance oracle on directions.

psi_hat(v) averages <X_i, v>^2 after discarding the ceil(theta*N) largest
squares, normalized by N(1 - theta). Its square root applied to differences
gives the empirical (quasi-)distance used to build partitions of the head ball.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, InvalidRegimeError
from .robust_core import trim_count
from .samples import SampleSet, make_rng
from .synthdata import SpectrumProfile

logger = logging.getLogger(__name__)

DEFAULT_KAPPA_HAT = 2.0


def default_theta(kappa_hat: float = DEFAULT_KAPPA_HAT) -> float:
    return min(0.1, kappa_hat ** -4 / 4.0)


@dataclass(frozen=True, eq=False)
class DistanceOracle:
    data_half: SampleSet
    theta: float = field(default_factory=default_theta)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise InvalidParameterError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.data_half.is_finite():
            raise InvalidInputError("oracle data must be finite")
        if self.trim_count >= self.data_half.n:
            raise InvalidParameterError(
                f"trimming {self.trim_count} of {self.data_half.n} samples leaves nothing"
            )

    @property
    def trim_count(self) -> int:
        return trim_count(self.data_half.n, self.theta)

    @property
    def n(self) -> int:
        return self.data_half.n

    @property
    def dim(self) -> int:
        return self.data_half.dim

    @property
    def _norm(self) -> float:
        return 1.0 / (self.n * (1.0 - self.theta))

    def psi_hat(self, v) -> float:
        return float(self.psi_hat_batch(np.asarray(v, dtype=float)[None, :])[0])

    def psi_hat_batch(self, vs) -> np.ndarray:
        """psi_hat for each row of ``vs``."""
        vs = np.atleast_2d(np.asarray(vs, dtype=float))
        if vs.shape[1] != self.dim:
            raise InvalidInputError(f"direction dimension {vs.shape[1]} != data dimension {self.dim}")
        if not np.all(np.isfinite(vs)):
            raise InvalidInputError("direction has non-finite entries")
        sq = vs @ self.data_half.data.T
        sq *= sq
        return self._norm * _trimmed_row_sums(sq, self.trim_count)

    def trimmed_sum_batch(self, vs, k: int) -> np.ndarray:
        """Unnormalized sums of squares with the k largest removed."""
        sq = np.atleast_2d(np.asarray(vs, dtype=float)) @ self.data_half.data.T
        sq *= sq
        return _trimmed_row_sums(sq, k)

    def trim_set(self, v) -> np.ndarray:
        """Indices J_+(v): largest squares first, ties broken by ascending index."""
        sq = (self.data_half.data @ np.asarray(v, dtype=float)) ** 2
        order = np.lexsort((np.arange(sq.size), -sq))
        return np.sort(order[: self.trim_count])

    def kept_moment(self, v) -> np.ndarray:
        """Second-moment matrix of the samples kept at v, normalized like psi_hat.

        ``v @ kept_moment(v) @ v == psi_hat(v)`` up to rounding.
        """
        keep = np.ones(self.n, dtype=bool)
        keep[self.trim_set(v)] = False
        x = self.data_half.data[keep]
        return self._norm * (x.T @ x)

    def gradient(self, v) -> np.ndarray:
        """Gradient of psi_hat at v (trim set held fixed)."""
        keep = np.ones(self.n, dtype=bool)
        keep[self.trim_set(v)] = False
        x = self.data_half.data[keep]
        return 2.0 * self._norm * (x.T @ (x @ np.asarray(v, dtype=float)))

    def untrimmed_bound_batch(self, vs) -> np.ndarray:
        """(1/(N(1-theta))) * sum of all squares; an upper bound on psi_hat."""
        sq = np.atleast_2d(np.asarray(vs, dtype=float)) @ self.data_half.data.T
        return self._norm * np.einsum("ij,ij->i", sq, sq)

    def empirical_distance(self, s, t) -> float:
        return empirical_distance(self, s, t)


def _trimmed_row_sums(sq: np.ndarray, k: int) -> np.ndarray:
    n = sq.shape[1]
    if k == 0:
        return sq.sum(axis=1)
    # the sum of the kept values does not depend on how boundary ties are split
    part = np.partition(sq, n - k - 1, axis=1)
    return part[:, : n - k].sum(axis=1)


def psi_hat(o: DistanceOracle, v) -> float:
    return o.psi_hat(v)


def empirical_distance(o: DistanceOracle, s, t) -> float:
    """sqrt(psi_hat(s - t)); symmetric since psi_hat is even."""
    diff = np.asarray(s, dtype=float) - np.asarray(t, dtype=float)
    return math.sqrt(o.psi_hat(diff))


@dataclass
class SandwichReport:
    upper_pass: int = 0
    upper_total: int = 0
    lower_pass: int = 0
    lower_total: int = 0
    upper_constant: float = 0.0
    lower_constant: float = math.inf
    upper_threshold: float = 0.0
    lower_threshold: float = 0.0
    sample_size_ok: bool = True

    @property
    def passed(self) -> bool:
        return self.upper_pass == self.upper_total and self.lower_pass == self.lower_total

    def to_dict(self) -> dict:
        return {
            "upper_pass": self.upper_pass,
            "upper_total": self.upper_total,
            "lower_pass": self.lower_pass,
            "lower_total": self.lower_total,
            "upper_constant": self.upper_constant,
            "lower_constant": None if math.isinf(self.lower_constant) else self.lower_constant,
            "upper_threshold": self.upper_threshold,
            "lower_threshold": self.lower_threshold,
            "sample_size_ok": self.sample_size_ok,
            "passed": self.passed,
        }


def _unit_rows(rng, m: int, k: int) -> np.ndarray:
    g = rng.standard_normal((m, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def oracle_sandwich_check(
    o: DistanceOracle,
    profile: SpectrumProfile,
    rho: float,
    kappa0: float,
    n: int,
    n_dirs: int = 64,
    seed=0,
    upper_const: float | None = None,
    lower_const: float = 0.5,
    kappa_tilde: float = 1.0,
) -> SandwichReport:
    """Evaluate both oracle inequalities on random directions of known variance.

    Upper regime: unit u with sigma^2(u) <= lambda_{rho n}, drawn from the span
    of eigenvectors with index >= rho*n; checks psi_hat(u) <= upper_const *
    lambda_{rho n} (default constant 16/theta^2). Lower regime: unit u in the
    span of the top kappa0*n eigenvectors, so sigma^2(u) >= lambda_{kappa0 n};
    checks psi_hat(u) >= lower_const * sigma^2(u). Empirical constants are the
    max (upper) and min (lower) ratios seen.
    """
    if not 0 < rho <= kappa0:
        raise InvalidRegimeError("need 0 < rho <= kappa0")
    d = profile.dim
    i_rho = max(1, math.ceil(rho * n - 1e-9))
    i_k0 = max(1, math.ceil(kappa0 * n - 1e-9))
    if i_rho >= d or i_k0 > d:
        raise InvalidRegimeError(f"regime indices ({i_rho}, {i_k0}) incompatible with d={d}")
    if upper_const is None:
        upper_const = 16.0 / o.theta ** 2
    report = SandwichReport(upper_threshold=upper_const, lower_threshold=lower_const)
    lam_rho = profile.lam(i_rho)
    lam_k0 = profile.lam(i_k0)
    if lam_k0 > 0:
        need = kappa_tilde * max(profile.tail_sum(i_k0) / lam_k0, n)
        if o.n < need:
            logger.warning("sample size %d below the oracle requirement %.1f", o.n, need)
            report.sample_size_ok = False
    if profile.eigenvalues[0] <= 0:
        return report
    rng = make_rng(seed, "sandwich")
    vecs = profile.basis.vectors
    low = _unit_rows(rng, n_dirs, d - i_rho + 1) @ vecs[i_rho - 1 :]
    high = _unit_rows(rng, n_dirs, i_k0) @ vecs[:i_k0]
    if lam_rho > 0:
        ratios = o.psi_hat_batch(low) / lam_rho
        report.upper_total = n_dirs
        report.upper_pass = int(np.sum(ratios <= upper_const))
        report.upper_constant = float(ratios.max())
    sig = np.array([profile.sigma2(u) for u in high])
    ok = sig > 0
    if np.any(ok):
        ratios = o.psi_hat_batch(high[ok]) / sig[ok]
        report.lower_total = int(ok.sum())
        report.lower_pass = int(np.sum(ratios >= lower_const))
        report.lower_constant = float(ratios.min())
    return report

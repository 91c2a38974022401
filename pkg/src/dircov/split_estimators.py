"""Estimators on the two sides of a head/tail split.

Tail: a norm-truncated sample covariance in tail coordinates. Head: the lower
median over blocks of block-mean squared projections, stored as per-block
second-moment matrices so it can be evaluated without the samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidDirectionError, InvalidInputError
from .numerics import OrthonormalBasis, SymMatrix, sym_eig
from .oracle import default_theta
from .robust_core import BlockPlan, lower_median, n_blocks_for_delta
from .samples import SampleSet
from .subspace import SubspaceSplit
from .synthdata import SpectrumProfile

logger = logging.getLogger(__name__)

KAPPA_E_DEFAULT = 0.1


def tail_envelope(profile: SpectrumProfile, r: int, n_samples: int) -> float:
    """sqrt(lambda_r * sum_{i >= r/2} lambda_i / N)."""
    return math.sqrt(profile.lam(r) * profile.tail_sum(r / 2.0) / n_samples)


@dataclass(frozen=True, eq=False)
class TailEstimate:
    matrix: SymMatrix
    truncation_level: float
    error_envelope: float | None
    basis: OrthonormalBasis

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def to_json(self) -> dict:
        return {
            "matrix": self.matrix.entries.tolist(),
            "truncation_level": self.truncation_level,
            "error_envelope": self.error_envelope,
            "basis": self.basis.vectors.tolist(),
            "ambient_dim": self.basis.ambient_dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TailEstimate":
        d = int(obj["ambient_dim"])
        basis = OrthonormalBasis(np.array(obj["basis"], dtype=float).reshape(-1, d), d)
        k = basis.dim
        return cls(
            SymMatrix(np.array(obj["matrix"], dtype=float).reshape(k, k)),
            float(obj["truncation_level"]),
            obj.get("error_envelope"),
            basis,
        )


def fit_tail(
    data_half: SampleSet,
    split: SubspaceSplit,
    delta: float,
    theta: float | None = None,
    reference: SpectrumProfile | None = None,
) -> TailEstimate:
    theta = default_theta() if theta is None else theta
    tail = split.tail
    if tail.dim == 0:
        return TailEstimate(SymMatrix(np.zeros((0, 0))), 0.0, 0.0, tail)
    if data_half.n < 2:
        raise InsufficientDataError("the tail estimator needs at least 2 samples")
    y = tail.coords(data_half.data)
    n_samples = y.shape[0]
    n = n_blocks_for_delta(delta)
    pilot = (y.T @ y) / n_samples
    lam1 = float(sym_eig(SymMatrix(pilot))[0][0])
    envelope = tail_envelope(reference, split.r, n_samples) if reference is not None else None
    if lam1 <= 0:
        return TailEstimate(SymMatrix(np.zeros_like(pilot)), 0.0, envelope, tail)
    r_eff = float(np.trace(pilot)) / lam1
    norms2 = np.einsum("ij,ij->i", y, y)
    rho = float(np.quantile(np.sqrt(norms2), 1.0 - theta))
    beta = rho * (1.0 + math.sqrt(n / r_eff))
    with np.errstate(divide="ignore"):
        w = np.where(norms2 > beta * beta, beta * beta / norms2, 1.0)
    mat = ((y * w[:, None]).T @ y) / n_samples
    return TailEstimate(SymMatrix(mat), beta, envelope, tail)


def tail_quadform(t: TailEstimate, v) -> float:
    """v^T Sigma_hat v clipped at 0; v is an ambient vector in the tail span."""
    v = np.asarray(v, dtype=float)
    if v.shape != (t.basis.ambient_dim,):
        raise InvalidInputError(f"expected a vector of dimension {t.basis.ambient_dim}")
    if t.dim == 0:
        return 0.0
    c = t.basis.coords(v)
    return max(0.0, float(c @ t.matrix.entries @ c))


@dataclass(frozen=True, eq=False)
class HeadEstimator:
    basis: OrthonormalBasis
    plan: BlockPlan
    block_moments: np.ndarray  # (n_blocks, r, r)

    @classmethod
    def from_samples(cls, data_half: SampleSet, split: SubspaceSplit, delta: float,
                     kappa_E: float = KAPPA_E_DEFAULT) -> "HeadEstimator":
        n = n_blocks_for_delta(delta)
        if split.r > max(1, math.ceil(kappa_E * n - 1e-9)):
            logger.warning("head dimension %d exceeds kappa_E * n = %.2f", split.r, kappa_E * n)
        plan = BlockPlan.for_size(data_half.n, n)
        z = split.head.coords(data_half.data)
        outer = z[: plan.used, :, None] * z[: plan.used, None, :]
        return cls(split.head, plan, plan.block_means(outer))

    def to_json(self) -> dict:
        return {
            "n_blocks": self.plan.n_blocks,
            "block_size": self.plan.block_size,
            "block_moments": self.block_moments.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict, basis: OrthonormalBasis) -> "HeadEstimator":
        r = basis.dim
        plan = BlockPlan(int(obj["n_blocks"]), int(obj["block_size"]))
        mom = np.array(obj["block_moments"], dtype=float).reshape(plan.n_blocks, r, r)
        return cls(basis, plan, mom)

    def block_values(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("bij,i,j->b", self.block_moments, c, c)


def head_quadform(h: HeadEstimator, u) -> float:
    """Lower median of block means of <P_E X_i, u/|u|>^2, times |P_E u|^2."""
    c = h.basis.coords(np.asarray(u, dtype=float))
    nrm = float(np.linalg.norm(c))
    if nrm == 0.0:
        raise InvalidDirectionError("head query needs a nonzero head component")
    c = c / nrm
    return max(0.0, lower_median(h.block_values(c))) * nrm * nrm

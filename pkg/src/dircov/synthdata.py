"""Seeded generators: gaussian and elliptical Student-t data with a prescribed
spectrum, the three-point lower-bound law, and the mixed head/tail adversary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, InvalidSpecError, UndefinedRankError
from .numerics import OrthonormalBasis, SymMatrix, orthonormal_complement, sym_eig
from .samples import SampleSet, make_rng

GAUSSIAN_KURTOSIS = 3.0


@dataclass(frozen=True, eq=False)
class SpectrumProfile:
    """Covariance sum_i eigenvalues[i] * v_i v_i^T with v_i = basis.vectors[i]."""

    eigenvalues: np.ndarray
    basis: OrthonormalBasis

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).ravel()
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise InvalidInputError("eigenvalues must be finite and nonnegative")
        if np.any(np.diff(lam) > 0):
            raise InvalidInputError("eigenvalues must be sorted in descending order")
        if self.basis.dim != lam.size or self.basis.ambient_dim != lam.size:
            raise InvalidInputError("basis must be a full orthonormal basis matching the eigenvalues")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def diagonal(cls, eigenvalues) -> "SpectrumProfile":
        lam = np.asarray(eigenvalues, dtype=float)
        order = np.argsort(-lam, kind="stable")
        return cls(lam[order], OrthonormalBasis(np.eye(lam.size)[order]))

    @classmethod
    def power_law(cls, d: int, exponent: float = 1.0, scale: float = 1.0) -> "SpectrumProfile":
        return cls.diagonal(scale * np.arange(1, d + 1, dtype=float) ** (-exponent))

    @classmethod
    def from_matrix(cls, cov) -> "SpectrumProfile":
        w, basis = sym_eig(SymMatrix(cov))
        return cls(np.clip(w, 0.0, None), basis)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def covariance(self) -> np.ndarray:
        v = self.basis.vectors
        return (v.T * self.eigenvalues) @ v

    def rotated(self, rotation) -> "SpectrumProfile":
        r = np.asarray(rotation, dtype=float)
        return SpectrumProfile(self.eigenvalues, OrthonormalBasis(self.basis.vectors @ r.T))

    def sigma2(self, u) -> float:
        c = self.basis.coords(u)
        return float(np.sum(self.eigenvalues * c * c))

    def lam(self, i: int) -> float:
        """The i-th largest eigenvalue, 1-based; indices past d give 0."""
        i = max(1, int(i))
        return float(self.eigenvalues[i - 1]) if i <= self.dim else 0.0

    def tail_sum(self, start: float) -> float:
        """sum of lambda_i over 1-based indices i >= start."""
        i0 = max(1, int(math.ceil(start)))
        return float(self.eigenvalues[i0 - 1 :].sum()) if i0 <= self.dim else 0.0


def effective_rank(profile: SpectrumProfile) -> float:
    """trace / largest eigenvalue."""
    lam1 = profile.eigenvalues[0] if profile.dim else 0.0
    if lam1 <= 0:
        raise UndefinedRankError("effective rank of the zero matrix is undefined")
    return float(profile.eigenvalues.sum() / lam1)


def _rng(seed, tag):
    return seed if isinstance(seed, np.random.Generator) else make_rng(seed, tag)


def _check_n(n: int) -> None:
    if int(n) < 1:
        raise InvalidParameterError(f"sample size must be positive, got {n}")


def gen_gaussian(profile: SpectrumProfile, n: int, seed) -> SampleSet:
    _check_n(n)
    rng = _rng(seed, "gaussian")
    z = rng.standard_normal((int(n), profile.dim))
    x = (z * np.sqrt(profile.eigenvalues)) @ profile.basis.vectors
    return SampleSet(x, seed=seed if not isinstance(seed, np.random.Generator) else None, generator="gaussian")


def kurtosis_from_dof(dof: float) -> float:
    """Marginal kurtosis E x^4 / (E x^2)^2 of the normalized elliptical t law."""
    if dof <= 4:
        raise InvalidParameterError(f"dof must exceed 4 for a finite fourth moment, got {dof}")
    return 3.0 + 6.0 / (dof - 4.0)


def kappa_from_dof(dof: float | None) -> float:
    """L4-L2 equivalence constant; ``None`` means gaussian."""
    kurt = GAUSSIAN_KURTOSIS if dof is None else kurtosis_from_dof(dof)
    return kurt ** 0.25


def gen_heavy_tailed(profile: SpectrumProfile, dof: float, n: int, seed) -> SampleSet:
    """Elliptical Student-t samples rescaled so the covariance equals the profile."""
    if not dof > 4:
        raise InvalidParameterError(f"dof must exceed 4 for a finite fourth moment, got {dof}")
    _check_n(n)
    rng = _rng(seed, "student")
    z = rng.standard_normal((int(n), profile.dim))
    chi2 = rng.chisquare(dof, size=int(n))
    scale = np.sqrt((dof - 2.0) / chi2)
    x = ((z * np.sqrt(profile.eigenvalues)) @ profile.basis.vectors) * scale[:, None]
    return SampleSet(x, seed=seed if not isinstance(seed, np.random.Generator) else None,
                     generator=f"student(dof={dof:g})")


def contaminate(samples: SampleSet, fraction: float, vector, seed) -> SampleSet:
    """Replace ceil(fraction*N) randomly chosen rows by ``vector``."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidParameterError(f"contamination fraction must lie in [0, 1), got {fraction}")
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (samples.dim,):
        raise InvalidInputError("contamination vector has the wrong dimension")
    rng = _rng(seed, "contaminate")
    k = int(math.ceil(fraction * samples.n - 1e-9))
    idx = rng.choice(samples.n, size=k, replace=False)
    x = samples.data.copy()
    x[idx] = vector
    meta = dict(samples.metadata, contaminated=k)
    return SampleSet(x, samples.seed, samples.generator + "+contaminated", meta)


@dataclass(frozen=True)
class ThreePointLaw:
    """x = -alpha, 0, alpha with probabilities p/2, 1-p, p/2."""

    alpha: float
    p: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParameterError("alpha must be positive")
        if not 0.0 < self.p < 1.0:
            raise InvalidParameterError(f"p must lie in (0, 1), got {self.p}")

    @classmethod
    def from_delta(cls, delta: float, n: int, alpha: float = 1.0) -> "ThreePointLaw":
        return cls(alpha=alpha, p=math.log(2.0 / delta) / (2.0 * n))

    @property
    def second_moment(self) -> float:
        return self.alpha ** 2 * self.p

    @property
    def fourth_moment(self) -> float:
        return self.alpha ** 4 * self.p

    def prob_all_zero(self, n: int) -> float:
        return (1.0 - self.p) ** n


def three_point_values(law: ThreePointLaw, shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    half = 0.5 * law.p
    return np.where(u < half, -law.alpha, np.where(u < law.p, law.alpha, 0.0))


def gen_three_point(law: ThreePointLaw, n: int, seed) -> SampleSet:
    _check_n(n)
    rng = _rng(seed, "three-point")
    x = three_point_values(law, int(n), rng)
    return SampleSet(x[:, None], seed=seed if not isinstance(seed, np.random.Generator) else None,
                     generator="three-point")


@dataclass(frozen=True, eq=False)
class MixedAdversarySpec:
    """Head marginal fixed at +-sigma_u along u, tail gaussian shifted by a hidden mean.

    ``head_basis.vectors[0]`` is the planted direction u; ``mu`` and
    ``tail_cov`` are expressed in coordinates of ``tail_basis``.
    ``tail_trace`` is tr of the reference tail covariance and ``n_ref`` the
    sample size defining the radius 3*sigma_u*sqrt(tail_trace/n_ref).
    """

    head_basis: OrthonormalBasis
    sigma_u: float
    head_aux_sigmas: np.ndarray
    mu: np.ndarray
    tail_cov: SymMatrix
    tail_trace: float
    n_ref: int
    tail_basis: OrthonormalBasis | None = None

    def __post_init__(self):
        if self.tail_basis is None:
            object.__setattr__(self, "tail_basis", orthonormal_complement(self.head_basis))
        aux = np.asarray(self.head_aux_sigmas, dtype=float).ravel()
        mu = np.asarray(self.mu, dtype=float).ravel()
        object.__setattr__(self, "head_aux_sigmas", aux)
        object.__setattr__(self, "mu", mu)
        k, t = self.head_basis.dim, self.tail_basis.dim
        if k < 1:
            raise InvalidSpecError("head must contain the planted direction")
        if not self.sigma_u > 0:
            raise InvalidSpecError("sigma_u must be positive")
        if aux.size != k - 1 or np.any(aux < 0):
            raise InvalidSpecError(f"need {k - 1} nonnegative auxiliary head sigmas")
        if mu.size != t or self.tail_cov.dim != t:
            raise InvalidSpecError("mu and tail_cov must live in tail coordinates")
        if np.max(np.abs(self.head_basis.vectors @ self.tail_basis.vectors.T), initial=0.0) > 1e-10:
            raise InvalidSpecError("head and tail bases are not orthogonal")
        r_prime = self.radius
        if np.linalg.norm(mu) > r_prime * (1 + 1e-12) + 1e-15:
            raise InvalidSpecError(f"|mu| = {np.linalg.norm(mu):.4g} exceeds the radius {r_prime:.4g}")
        target = self.tail_trace - r_prime ** 2 / self.sigma_u ** 2
        tr = float(np.trace(self.tail_cov.entries))
        if target < 0 or abs(tr - target) > 1e-9 * max(1.0, abs(self.tail_trace)):
            raise InvalidSpecError(f"tail_cov trace {tr:.6g} must equal {target:.6g}")
        if t and np.linalg.eigvalsh(self.tail_cov.entries).min() < -1e-10 * max(1.0, tr):
            raise InvalidSpecError("tail_cov is not positive semi-definite")

    @property
    def u(self) -> np.ndarray:
        return self.head_basis.vectors[0]

    @property
    def radius(self) -> float:
        return 3.0 * self.sigma_u * math.sqrt(self.tail_trace / self.n_ref)

    @classmethod
    def from_profile(cls, profile: SpectrumProfile, head_dim: int, n_ref: int,
                     mu_fraction: float = 1.0, mu_direction=None) -> "MixedAdversarySpec":
        """Head = top ``head_dim`` eigenvectors, u = the first; tail covariance shrunk to meet the trace identity."""
        if not 1 <= head_dim < profile.dim:
            raise InvalidSpecError("head_dim must lie in [1, d)")
        lam = profile.eigenvalues
        head = OrthonormalBasis(profile.basis.vectors[:head_dim])
        tail = OrthonormalBasis(profile.basis.vectors[head_dim:])
        sigma_u = math.sqrt(lam[0])
        tail_lam = lam[head_dim:]
        trace = float(tail_lam.sum())
        tail_cov = np.diag(tail_lam * (1.0 - 9.0 / n_ref))
        direction = np.zeros(tail.dim) if mu_direction is None else np.asarray(mu_direction, dtype=float)
        if mu_direction is None:
            direction[0] = 1.0
        direction = direction / np.linalg.norm(direction)
        r_prime = 3.0 * sigma_u * math.sqrt(trace / n_ref)
        return cls(head, sigma_u, np.sqrt(lam[1:head_dim]), mu_fraction * r_prime * direction,
                   SymMatrix(tail_cov), trace, n_ref, tail)

    def population_covariance(self) -> np.ndarray:
        h, t = self.head_basis.vectors, self.tail_basis.vectors
        head_var = np.concatenate([[self.sigma_u ** 2], self.head_aux_sigmas ** 2])
        head_block = (h.T * head_var) @ h
        tail_block = t.T @ (self.tail_cov.entries + np.outer(self.mu, self.mu) / self.sigma_u ** 2) @ t
        # E[eps*sigma_u u (eps mu/sigma_u)^T] = u mu^T
        cross = np.outer(self.u, self.mu @ t)
        return head_block + tail_block + cross + cross.T


def gen_mixed_adversary(spec: MixedAdversarySpec, n: int, seed) -> SampleSet:
    _check_n(n)
    rng = _rng(seed, "mixed-adversary")
    n = int(n)
    k = spec.head_basis.dim
    eps = rng.choice(np.array([-1.0, 1.0]), size=n)
    eps_aux = rng.choice(np.array([-1.0, 1.0]), size=(n, k - 1))
    head_coords = np.empty((n, k))
    head_coords[:, 0] = eps * spec.sigma_u
    head_coords[:, 1:] = eps_aux * spec.head_aux_sigmas
    w, vecs = sym_eig(spec.tail_cov)
    root = vecs.vectors.T * np.sqrt(np.clip(w, 0.0, None))
    g = rng.standard_normal((n, spec.tail_basis.dim)) @ root.T
    tail_coords = g + np.outer(eps / spec.sigma_u, spec.mu)
    x = head_coords @ spec.head_basis.vectors + tail_coords @ spec.tail_basis.vectors
    return SampleSet(x, seed=seed if not isinstance(seed, np.random.Generator) else None,
                     generator="mixed-adversary")

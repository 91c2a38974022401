"""Dense linear-algebra support: symmetric eigendecomposition, bases, projections.

The eigensolver is a cyclic Jacobi method using the round-robin (tournament)
pair ordering, so that every rotation of one round acts on disjoint index
pairs and can be applied to whole rows/columns at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBasisError, InvalidInputError

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """A real symmetric matrix; symmetrized as (A + A^T)/2 on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("matrix has non-finite entries")
        a = np.ascontiguousarray(0.5 * (a + a.T))
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def quadform(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.entries @ v)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """Orthonormal vectors stored as the rows of a (k, d) array."""

    vectors: np.ndarray
    ambient_dim: int | None = None

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float, order="C")
        if v.ndim == 1:
            v = v.reshape(0 if v.size == 0 else 1, -1)
        d = self.ambient_dim if self.ambient_dim is not None else v.shape[1]
        if v.size == 0:
            v = np.zeros((0, d))
        if v.ndim != 2 or v.shape[1] != d:
            raise InvalidInputError(f"basis vectors must have dimension {d}")
        if v.shape[0] > d:
            raise DegenerateBasisError(f"{v.shape[0]} vectors cannot be independent in R^{d}")
        gram = v @ v.T
        err = np.max(np.abs(gram - np.eye(v.shape[0]))) if v.shape[0] else 0.0
        if err > ORTHO_TOL:
            raise DegenerateBasisError(f"vectors are not orthonormal (max Gram error {err:.2e})")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "ambient_dim", int(d))

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def coords(self, v) -> np.ndarray:
        """Coordinates of v (or of the rows of a 2-d array) in this basis."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.ambient_dim:
            raise InvalidInputError(
                f"vector dimension {v.shape[-1]} does not match ambient dimension {self.ambient_dim}"
            )
        return v @ self.vectors.T

    def embed(self, c) -> np.ndarray:
        """Map coordinates back into the ambient space."""
        c = np.asarray(c, dtype=float)
        if c.shape[-1] != self.dim:
            raise InvalidInputError(f"expected {self.dim} coordinates, got {c.shape[-1]}")
        return c @ self.vectors


def canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so that its first non-negligible coordinate is positive."""
    out = np.array(vectors, dtype=float, copy=True)
    for row in out:
        scale = np.max(np.abs(row)) if row.size else 0.0
        if scale == 0.0:
            continue
        idx = np.flatnonzero(np.abs(row) > 1e-12 * scale)[0]
        if row[idx] < 0:
            row *= -1.0
    return out


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # n even; circle method with player 0 fixed
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        top = players[: n // 2]
        bot = players[n // 2 :][::-1]
        p = np.array([min(a, b) for a, b in zip(top, bot)])
        q = np.array([max(a, b) for a, b in zip(top, bot)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray, int]:
    n = a.shape[0]
    odd = n % 2 == 1
    if odd:
        # the padding index is decoupled: every rotation touching it is the identity
        a = np.pad(a, ((0, 1), (0, 1)))
    m = a.shape[0]
    v = np.eye(m)
    fro = np.linalg.norm(a)
    sweeps = 0
    if fro > 0 and m > 1:
        rounds = _round_robin(m)
        for sweeps in range(1, max_sweeps + 1):
            for p, q in rounds:
                apq = a[p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                app = a[p, p]
                aqq = a[q, q]
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    tau = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                    big = np.abs(tau) > 1e150
                    t = np.where(
                        big,
                        0.5 / np.where(big, tau, 1.0),
                        np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + np.where(big, 0.0, tau) ** 2)),
                    )
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cc = c[:, None]
                ss = s[:, None]
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = cc * rp - ss * rq
                a[q, :] = ss * rp + cc * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = cp * c - cq * s
                a[:, q] = cp * s + cq * c
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp * c - vq * s
                v[:, q] = vp * s + vq * c
            off = np.linalg.norm(a - np.diag(np.diag(a)))
            if off <= tol * fro:
                break
        else:
            logger.warning("Jacobi iteration did not converge in %d sweeps", max_sweeps)
    w = np.diag(a).copy()
    if odd:
        w = w[:n]
        v = v[:n, :n]
    return w, v, sweeps


def sym_eig(m: SymMatrix | np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, basis)`` with eigenvalues sorted in descending
    order and ``basis.vectors[i]`` the unit eigenvector of ``eigenvalues[i]``.
    Each eigenvector is signed so its first nonzero coordinate is positive;
    exactly tied eigenvalues are ordered by descending lexicographic order of
    their eigenvectors.
    """
    if not isinstance(m, SymMatrix):
        m = SymMatrix(m)
    a = np.array(m.entries, dtype=float)
    w, v, _ = _jacobi(a, tol, max_sweeps)
    vecs = canonical_sign(v.T)
    order = np.lexsort(tuple(-vecs[:, j] for j in range(vecs.shape[1] - 1, -1, -1)) + (-w,))
    w = w[order]
    vecs = vecs[order]
    # re-orthonormalize away accumulated rounding (a few ulps)
    q, r = np.linalg.qr(vecs.T)
    q = q * np.sign(np.diag(r))
    return w, OrthonormalBasis(q.T)


def orthonormalize(vectors, tol: float = ORTHO_TOL) -> OrthonormalBasis:
    """Orthonormal basis of span(vectors) via QR; rows of ``vectors`` must be independent."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vectors have non-finite entries")
    if v.shape[0] == 0:
        return OrthonormalBasis(np.zeros((0, v.shape[1])))
    q, r = np.linalg.qr(v.T)
    diag = np.abs(np.diag(r))
    if v.shape[0] > v.shape[1] or diag.min() <= tol * max(diag.max(), 1.0):
        raise DegenerateBasisError("input vectors are linearly dependent")
    q = q * np.sign(np.diag(r))
    return OrthonormalBasis(q.T)


def orthonormal_complement(b: OrthonormalBasis) -> OrthonormalBasis:
    """Orthonormal basis of the orthogonal complement of span(b)."""
    d = b.ambient_dim
    k = b.dim
    if k == d:
        return OrthonormalBasis(np.zeros((0, d)))
    if k == 0:
        return OrthonormalBasis(np.eye(d))
    q, r = np.linalg.qr(b.vectors.T, mode="complete")
    if np.min(np.abs(np.diag(r)[:k])) <= ORTHO_TOL:
        raise DegenerateBasisError("basis is rank deficient")
    comp = q[:, k:].T
    # remove the residual component along b picked up by rounding
    comp = comp - (comp @ b.vectors.T) @ b.vectors
    qq, rr = np.linalg.qr(comp.T)
    comp = (qq * np.sign(np.diag(rr))).T
    return OrthonormalBasis(canonical_sign(comp))


def project(v, b: OrthonormalBasis) -> np.ndarray:
    """Orthogonal projection of v onto span(b)."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != b.ambient_dim:
        raise InvalidInputError(f"vector of dimension {v.shape[-1]} projected onto a subspace of R^{b.ambient_dim}")
    return (v @ b.vectors.T) @ b.vectors


def principal_angles(a: OrthonormalBasis, b: OrthonormalBasis) -> np.ndarray:
    """Principal angles (radians, ascending) between span(a) and span(b)."""
    if a.dim == 0 or b.dim == 0:
        return np.zeros(0)
    if a.dim > b.dim:
        a, b = b, a
    cos = np.clip(np.linalg.svd(a.vectors @ b.vectors.T, compute_uv=False), 0.0, 1.0)
    # arccos loses half the digits near 0; take small angles from the residual sines
    resid = a.vectors - (a.vectors @ b.vectors.T) @ b.vectors
    sin = np.clip(np.sort(np.linalg.svd(resid, compute_uv=False)), 0.0, 1.0)
    ang = np.where(cos * cos >= 0.5, np.arcsin(sin), np.arccos(cos))
    return np.sort(ang)


def quantile(xs, q: float) -> float:
    return float(np.quantile(np.asarray(xs, dtype=float), q))

"""Head/tail split of R^d driven by the distance oracle.

Stage 1 takes the top-r eigenvectors of a norm-trimmed second moment. Stage 2
probes the tail with random directions and, if some probe looks larger than
the weakest head direction, runs greedy deflation: an ascent on psi_hat
restricted to the tail finds a strong direction which then replaces the head
direction of smallest psi_hat.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .numerics import OrthonormalBasis, SymMatrix, orthonormal_complement, sym_eig
from .oracle import DistanceOracle
from .robust_core import trim_count
from .samples import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    n_probe: int = 256
    ascent_steps: int = 50
    restarts: int = 8
    max_rounds: int | None = None  # default 2r
    repair: bool = True
    seed: int = 0


@dataclass(frozen=True, eq=False)
class SubspaceSplit:
    head: OrthonormalBasis
    tail: OrthonormalBasis
    r: int
    certificate: float
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    repairs: int = 0

    @property
    def dim(self) -> int:
        return self.head.ambient_dim

    def to_json(self) -> dict:
        return {
            "r": self.r,
            "dim": self.dim,
            "head": self.head.vectors.tolist(),
            "tail": self.tail.vectors.tolist(),
            "certificate": self.certificate,
            "spectrum": np.asarray(self.spectrum).tolist(),
            "repairs": self.repairs,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SubspaceSplit":
        d = int(obj["dim"])
        return cls(
            head=OrthonormalBasis(np.array(obj["head"], dtype=float).reshape(-1, d), d),
            tail=OrthonormalBasis(np.array(obj["tail"], dtype=float).reshape(-1, d), d),
            r=int(obj["r"]),
            certificate=float(obj["certificate"]),
            spectrum=np.array(obj.get("spectrum", []), dtype=float),
            repairs=int(obj.get("repairs", 0)),
        )


def trimmed_moment(x: np.ndarray, theta: float) -> np.ndarray:
    """(1/((1-theta)N)) sum of X_i X_i^T over samples outside the ceil(theta*N) largest norms."""
    n = x.shape[0]
    k = trim_count(n, theta)
    norms = np.einsum("ij,ij->i", x, x)
    order = np.lexsort((np.arange(n), -norms))
    keep = np.ones(n, dtype=bool)
    keep[order[:k]] = False
    xk = x[keep]
    return (xk.T @ xk) / ((1.0 - theta) * n)


def _tail_ascent(o: DistanceOracle, tail: OrthonormalBasis, cfg: SearchConfig, rng) -> tuple[np.ndarray, float]:
    """Best tail direction from shifted power-type ascent with random restarts."""
    t = tail.vectors
    best_v, best_val = None, -1.0
    for _ in range(cfg.restarts):
        c = rng.standard_normal(tail.dim)
        v = tail.embed(c / np.linalg.norm(c))
        val = o.psi_hat(v)
        for _ in range(cfg.ascent_steps):
            m = o.kept_moment(v)
            step = m @ v / val if val > 0 else np.zeros_like(v)
            w = (v + step) @ t.T @ t
            nrm = np.linalg.norm(w)
            if nrm == 0:
                break
            w /= nrm
            new = o.psi_hat(w)
            if new <= val * (1 + 1e-12):
                if new > val:
                    v, val = w, new
                break
            v, val = w, new
        if val > best_val:
            best_v, best_val = v, val
    return best_v, best_val


def certify_tail(split: SubspaceSplit, o: DistanceOracle, n_probe: int = 256, seed=0) -> float:
    """max psi_hat over n_probe random unit directions of the tail."""
    if split.tail.dim == 0 or n_probe <= 0:
        return 0.0
    rng = make_rng(seed, "certify")
    g = rng.standard_normal((n_probe, split.tail.dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return float(o.psi_hat_batch(split.tail.embed(g)).max())


def build_split(o: DistanceOracle, r: int, cfg: SearchConfig | None = None) -> SubspaceSplit:
    cfg = cfg or SearchConfig()
    d = o.dim
    if not 1 <= r <= d:
        raise InvalidParameterError(f"head dimension r={r} must lie in [1, {d}]")
    moment = trimmed_moment(o.data_half.data, o.theta)
    w, eig = sym_eig(SymMatrix(moment))
    head_vecs = eig.vectors[:r]
    head = OrthonormalBasis(head_vecs)
    if r == d:
        return SubspaceSplit(head, OrthonormalBasis(np.zeros((0, d))), r, 0.0, w)
    tail = OrthonormalBasis(eig.vectors[r:])
    repairs = 0
    if cfg.repair:
        rng = make_rng(cfg.seed, "repair")
        probe = certify_tail(SubspaceSplit(head, tail, r, 0.0), o, cfg.n_probe, cfg.seed)
        head_psi = o.psi_hat_batch(head.vectors)
        if probe > head_psi.min():
            rounds = cfg.max_rounds if cfg.max_rounds is not None else 2 * r
            hv = head.vectors.copy()
            for _ in range(rounds):
                v, val = _tail_ascent(o, tail, cfg, rng)
                weakest = int(np.argmin(head_psi))
                if v is None or val <= head_psi[weakest]:
                    break
                hv[weakest] = v
                head_psi[weakest] = val
                # re-orthonormalize to keep rounding within tolerance
                q, rr = np.linalg.qr(hv.T)
                hv = (q * np.sign(np.diag(rr))).T
                head = OrthonormalBasis(hv)
                tail = orthonormal_complement(head)
                repairs += 1
            if repairs:
                logger.info("subspace repair swapped %d directions", repairs)
    split = SubspaceSplit(head, tail, r, 0.0, w, repairs)
    cert = certify_tail(split, o, cfg.n_probe, cfg.seed)
    return SubspaceSplit(head, tail, r, cert, w, repairs)

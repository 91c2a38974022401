"""End-to-end directional covariance estimator.

The samples are shuffled and split in two. The first half fits the distance
oracle, the head/tail split and the admissible sequence; the second half fits
the head block moments, the tail covariance and the cross-term block tensors.
A query for u adds head, tail and twice the cross part for u/|u| and scales
by |u|^2.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cross_chaining import AdmissibleSequence, ChainConfig, CrossEstimator, build_admissible
from .errors import ConfigError, InsufficientDataError, InvalidDirectionError, InvalidInputError
from .numerics import SymMatrix, sym_eig
from .oracle import DEFAULT_KAPPA_HAT, DistanceOracle, default_theta
from .robust_core import mom_mean, BlockPlan, n_blocks_for_delta
from .samples import SampleSet, make_rng
from .split_estimators import HeadEstimator, TailEstimate, fit_tail, head_quadform, tail_quadform
from .subspace import SearchConfig, SubspaceSplit, build_split
from .synthdata import SpectrumProfile

logger = logging.getLogger(__name__)

BUNDLE_VERSION = 1
SNAP = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    delta: float = math.exp(-8)
    theta: float | None = None
    kappa_E: float = 0.1
    kappa_hat: float = DEFAULT_KAPPA_HAT
    kappa_tilde_0: int = 2
    split_ratio: float = 0.5
    n_probe: int = 256
    seed: int = 0
    repair: bool = True
    net_size: int = 4096
    budget_cap: int = 4096
    envelope_const: float = 1.0
    center: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.theta is not None and not 0.0 < self.theta < 1.0:
            raise ConfigError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.kappa_E <= 0 or self.kappa_hat <= 0:
            raise ConfigError("kappa_E and kappa_hat must be positive")

    @property
    def n(self) -> int:
        return n_blocks_for_delta(self.delta)

    @property
    def trim(self) -> float:
        return default_theta(self.kappa_hat) if self.theta is None else self.theta

    def head_dim(self, d: int) -> int:
        return min(d, max(1, math.ceil(self.kappa_E * self.n - 1e-9)))

    def min_samples(self) -> int:
        # each half must hold at least 2n samples
        return int(math.ceil(2 * self.n / min(self.split_ratio, 1 - self.split_ratio)))

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimatorConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown estimator options: {sorted(extra)}")
        return cls(**obj)


@dataclass(frozen=True)
class DirectionalEstimate:
    value: float
    raw_value: float
    head_part: float
    tail_part: float
    cross_part: float
    envelope: float
    clipped: bool

    def to_json(self) -> dict:
        return asdict(self)


def _snap(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(x) if np.linalg.norm(x) <= SNAP else x


@dataclass(eq=False)
class FittedEstimator:
    config: EstimatorConfig
    dim: int
    n_total: int
    split: SubspaceSplit
    head: HeadEstimator
    tail: TailEstimate
    cross: CrossEstimator | None
    spectrum: np.ndarray  # eigenvalues used by the envelope
    location: np.ndarray | None = None
    reference_spectrum: bool = False
    meta: dict = field(default_factory=dict)

    # -- queries -------------------------------------------------------------
    def parts(self, u) -> tuple[float, float, float]:
        """(head, tail, cross) for the unit direction u."""
        pe = _snap(self.split.head.embed(self.split.head.coords(u)))
        pt = _snap(self.split.tail.embed(self.split.tail.coords(u))) if self.split.tail.dim else np.zeros(self.dim)
        head = head_quadform(self.head, pe) if np.any(pe) else 0.0
        tail = tail_quadform(self.tail, pt) if np.any(pt) else 0.0
        if self.cross is None or not np.any(pe) or not np.any(pt):
            cross = 0.0
        else:
            cross = self.cross.estimate(pe + pt)[0]
        return head, tail, cross

    def envelope(self, sigma2: float) -> float:
        lam = self.spectrum
        n, big_n, r = self.config.n, self.n_total, self.split.r
        lam_r = float(lam[r - 1]) if r <= lam.size else 0.0
        start = max(1, math.ceil(r / 2.0))
        tail_sum = float(lam[start - 1 :].sum()) if start <= lam.size else 0.0
        sigma = math.sqrt(max(sigma2, 0.0))
        return self.config.envelope_const * (
            sigma2 * math.sqrt(n / big_n) + max(sigma, math.sqrt(max(lam_r, 0.0))) * math.sqrt(tail_sum / big_n)
        )

    def query(self, u, true_sigma2: float | None = None) -> DirectionalEstimate:
        return query(self, u, true_sigma2)

    def materialize(self, psd_project: bool = False) -> SymMatrix:
        return materialize(self, psd_project)

    # -- persistence ---------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION,
            "config": asdict(self.config),
            "dim": self.dim,
            "n_total": self.n_total,
            "split": self.split.to_json(),
            "head": self.head.to_json(),
            "tail": self.tail.to_json(),
            "sequence": None if self.cross is None else self.cross.seq.to_json(),
            "cross": None if self.cross is None else self.cross.to_json(),
            "spectrum": self.spectrum.tolist(),
            "reference_spectrum": self.reference_spectrum,
            "location": None if self.location is None else self.location.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FittedEstimator":
        if obj.get("bundle_version") != BUNDLE_VERSION:
            raise InvalidInputError(f"unsupported bundle version {obj.get('bundle_version')!r}")
        cfg = EstimatorConfig.from_dict(obj["config"])
        split = SubspaceSplit.from_json(obj["split"])
        cross = None
        if obj.get("sequence") is not None:
            seq = AdmissibleSequence.from_json(obj["sequence"])
            cross = CrossEstimator.from_json(obj["cross"], seq)
        loc = obj.get("location")
        return cls(
            config=cfg,
            dim=int(obj["dim"]),
            n_total=int(obj["n_total"]),
            split=split,
            head=HeadEstimator.from_json(obj["head"], split.head),
            tail=TailEstimate.from_json(obj["tail"]),
            cross=cross,
            spectrum=np.array(obj["spectrum"], dtype=float),
            location=None if loc is None else np.array(loc, dtype=float),
            reference_spectrum=bool(obj.get("reference_spectrum", False)),
            meta=dict(obj.get("meta", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "FittedEstimator":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"{path}: malformed model bundle ({exc})") from None


def mom_location(x: np.ndarray, n: int) -> np.ndarray:
    plan = BlockPlan.for_size(x.shape[0], n)
    return np.array([mom_mean(x[:, j], plan) for j in range(x.shape[1])])


def fit(data: SampleSet, cfg: EstimatorConfig | None = None, reference: SpectrumProfile | None = None,
        split_override: SubspaceSplit | None = None) -> FittedEstimator:
    """Fit every component; ``reference`` only feeds the error envelope.

    ``split_override`` replaces the data-driven head/tail split (used to study
    the cross term on a prescribed split).
    """
    cfg = cfg or EstimatorConfig()
    if not data.is_finite():
        raise InvalidInputError("data contains non-finite values")
    big_n, d = data.n, data.dim
    if d < 1:
        raise InvalidInputError("data must have at least one coordinate")
    need = cfg.min_samples()
    if big_n < need:
        raise InsufficientDataError(f"need at least {need} samples for delta={cfg.delta:g}, got {big_n}")
    n = cfg.n
    x = data.data
    location = None
    if cfg.center:
        location = mom_location(x, n)
        x = x - location
    perm = make_rng(cfg.seed, "split").permutation(big_n)
    n1 = int(round(cfg.split_ratio * big_n))
    half1 = SampleSet(x[perm[:n1]], generator="half1")
    half2 = SampleSet(x[perm[n1:]], generator="half2")

    oracle = DistanceOracle(half1, cfg.trim)
    r = cfg.head_dim(d)
    if split_override is not None:
        split = split_override
    else:
        split = build_split(oracle, r, SearchConfig(n_probe=cfg.n_probe, repair=cfg.repair, seed=cfg.seed))
    head = HeadEstimator.from_samples(half2, split, cfg.delta, cfg.kappa_E)
    tail = fit_tail(half2, split, cfg.delta, cfg.trim, reference)
    cross = None
    if split.tail.dim > 0:
        seq = build_admissible(oracle, split.head, n, half2.n,
                               ChainConfig(cfg.net_size, cfg.budget_cap, cfg.kappa_tilde_0, cfg.seed))
        cross = CrossEstimator.from_samples(half2, split, seq, n)
    if reference is not None:
        spectrum = np.asarray(reference.eigenvalues, dtype=float)
    else:
        spectrum = np.asarray(split.spectrum, dtype=float)
        if spectrum.size != d:
            from .subspace import trimmed_moment

            spectrum = sym_eig(SymMatrix(trimmed_moment(half1.data, cfg.trim)))[0]
    return FittedEstimator(cfg, d, big_n, split, head, tail, cross, np.clip(spectrum, 0.0, None),
                           location, reference is not None, {"centered": bool(cfg.center)})


def query(f: FittedEstimator, u, true_sigma2: float | None = None) -> DirectionalEstimate:
    u = np.asarray(u, dtype=float)
    if u.shape != (f.dim,):
        raise InvalidDirectionError(f"direction must have dimension {f.dim}")
    if not np.all(np.isfinite(u)):
        raise InvalidDirectionError("direction has non-finite entries")
    nrm = float(np.linalg.norm(u))
    if nrm == 0.0:
        raise InvalidDirectionError("query direction must be nonzero")
    h, t, c = f.parts(u / nrm)
    s = nrm * nrm
    head, tail, cross = h * s, t * s, c * s
    raw = head + tail + 2.0 * cross
    sigma2 = raw / s if true_sigma2 is None else true_sigma2 / s
    env = f.envelope(max(sigma2, 0.0)) * s
    return DirectionalEstimate(max(raw, 0.0), raw, head, tail, cross, env, raw < 0.0)


def materialize(f: FittedEstimator, psd_project: bool = False) -> SymMatrix:
    """Polarization: M_ii = q(e_i), M_ij = (q(e_i + e_j) - q(e_i - e_j)) / 4 with raw values."""
    d = f.dim
    eye = np.eye(d)
    m = np.zeros((d, d))
    for i in range(d):
        m[i, i] = query(f, eye[i]).raw_value
        for j in range(i + 1, d):
            plus = query(f, eye[i] + eye[j]).raw_value
            minus = query(f, eye[i] - eye[j]).raw_value
            m[i, j] = m[j, i] = (plus - minus) / 4.0
    if psd_project:
        w, basis = sym_eig(SymMatrix(m))
        v = basis.vectors
        m = (v.T * np.clip(w, 0.0, None)) @ v
    return SymMatrix(m)

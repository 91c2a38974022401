"""Chaining on the head sphere and the head/tail cross-term estimator.

The head unit sphere is replaced by a finite antipodally symmetric net. Nested
partitions of the net under the empirical distance sqrt(psi_hat(s - t)) are
built level by level with greedy farthest-point clustering, every level
refining the previous one. A head direction is then written as an anchor
(the centre of its coarsest cell), a sequence of links between successive
cell centres, and a residual to the direction itself.

For a head vector z the cross vector w(z) = E <X, z> P_tail X is estimated by
the geometric median of block means; the cross term of u is the sum of
<w(link), tail part of u> over the anchor and links. The residual's
contribution is not estimated, only bounded.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

from .errors import DegenerateSequenceError, InsufficientDataError, InvalidParameterError
from .numerics import OrthonormalBasis
from .oracle import DistanceOracle
from .robust_core import BlockPlan, geometric_median
from .samples import SampleSet
from .subspace import SubspaceSplit

NET_SIZE = 4096
BUDGET_CAP = 4096
TELESCOPE_TOL = 1e-10
_EXACT_PAIRS = 512
_CHUNK = 1024


@dataclass(frozen=True)
class ChainConfig:
    net_size: int = NET_SIZE
    budget_cap: int = BUDGET_CAP
    kappa_tilde_0: int = 2
    seed: int = 0
    s0: int | None = None  # overrides of the level schedule
    s1: int | None = None


def level_schedule(n: int, n_samples: int, kappa_tilde_0: int = 2) -> tuple[int, int]:
    """s1 = ceil(log2 N), s0 = min(ceil(log2 n) + kappa_tilde_0, s1)."""
    s1 = int(math.ceil(math.log2(max(n_samples, 1)) - 1e-12))
    s0 = int(math.ceil(math.log2(max(n, 1)) - 1e-12)) + int(kappa_tilde_0)
    return min(s0, s1), s1


def level_budget(s: int, cap: int = BUDGET_CAP) -> int:
    """min(2^(2^s), cap), with a single cell at level 0."""
    if s <= 0:
        return 1
    if s >= 6:  # 2^64 exceeds any cap
        return cap
    return min(2 ** (2 ** s), cap)


def anchor_budget(s0: int, n: int, cap: int = BUDGET_CAP) -> int:
    """Level budget at s0, further limited to floor(e^(n/2)) and at least one cell."""
    limit = math.floor(math.exp(n / 2.0)) if n < 2 * math.log(cap) + 2 else cap
    return max(1, min(level_budget(s0, cap), limit))


def make_net(r: int, size: int = NET_SIZE, seed: int = 0) -> np.ndarray:
    """Quasi-uniform antipodally symmetric points on the unit sphere of R^r."""
    if r < 1:
        raise InvalidParameterError("net dimension must be positive")
    if r == 1:
        return np.array([[1.0], [-1.0]])
    half = max(1, size // 2)
    if r == 2:
        ang = np.pi * np.arange(half) / half
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        sob = qmc.Sobol(d=r, scramble=True, seed=np.random.default_rng(seed))
        m = int(math.ceil(math.log2(half)))
        u = sob.random_base2(m)[:half]
        g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.concatenate([pts, -pts], axis=0)


@dataclass(frozen=True, eq=False)
class Level:
    s: int
    centers: np.ndarray  # net index of each cell's centre
    assign: np.ndarray  # cell index of each net point
    parent: np.ndarray  # parent cell index (previous level) of each cell
    diameters: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.centers.size

    def members(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.assign == cell)


@dataclass(frozen=True, eq=False)
class AdmissibleSequence:
    s0: int
    s1: int
    net: np.ndarray  # (K, r) head coordinates
    head: OrthonormalBasis
    levels: list
    gamma: float
    n_blocks: int

    def level(self, s: int) -> Level:
        return self.levels[s - self.s0]

    def cells(self, s: int):
        lv = self.level(s)
        for c in range(lv.n_cells):
            yield self.net[lv.centers[c]], lv.members(c)

    def singleton_from(self) -> int:
        """First level at which every cell is a single net point."""
        for lv in self.levels:
            if lv.n_cells == self.net.shape[0]:
                return lv.s
        return self.s1

    def center_path(self, p: int) -> np.ndarray:
        """Net index of pi_s for the net point p, s = s0..s1."""
        return np.array([lv.centers[lv.assign[p]] for lv in self.levels])

    def summary(self) -> dict:
        return {
            "s0": self.s0,
            "s1": self.s1,
            "net_size": int(self.net.shape[0]),
            "cells": [int(lv.n_cells) for lv in self.levels],
            "max_diameter": [float(lv.diameters.max(initial=0.0)) for lv in self.levels],
            "gamma": self.gamma,
        }

    def to_json(self) -> dict:
        out = self.summary()
        out.update(
            net=self.net.tolist(),
            head=self.head.vectors.tolist(),
            ambient_dim=self.head.ambient_dim,
            n_blocks=self.n_blocks,
            levels=[
                {
                    "s": lv.s,
                    "centers": lv.centers.tolist(),
                    "assign": lv.assign.tolist(),
                    "parent": lv.parent.tolist(),
                    "diameters": lv.diameters.tolist(),
                }
                for lv in self.levels
            ],
        )
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AdmissibleSequence":
        d = int(obj["ambient_dim"])
        levels = [
            Level(int(x["s"]), np.array(x["centers"], dtype=int), np.array(x["assign"], dtype=int),
                  np.array(x["parent"], dtype=int), np.array(x["diameters"], dtype=float))
            for x in obj["levels"]
        ]
        return cls(int(obj["s0"]), int(obj["s1"]), np.array(obj["net"], dtype=float),
                   OrthonormalBasis(np.array(obj["head"], dtype=float).reshape(-1, d), d),
                   levels, float(obj["gamma"]), int(obj["n_blocks"]))

    def check(self) -> None:
        """Hard structural assertions: caps, nestedness, one cell per point."""
        k = self.net.shape[0]
        prev = None
        for lv in self.levels:
            cap = level_budget(lv.s, BUDGET_CAP)
            assert lv.n_cells <= max(cap, 1) or lv.s <= 0
            assert lv.assign.shape == (k,)
            assert np.array_equal(np.unique(lv.assign), np.arange(lv.n_cells))
            assert np.all(lv.assign[lv.centers] == np.arange(lv.n_cells))
            if prev is not None:
                assert np.array_equal(lv.parent[lv.assign], prev.assign)
            prev = lv


class _HeadMetric:
    """psi_hat restricted to head coordinates: psi_hat(embed(c))."""

    def __init__(self, o: DistanceOracle, head: OrthonormalBasis):
        self.oracle = DistanceOracle(SampleSet(head.coords(o.data_half.data)), o.theta)
        z = self.oracle.data_half.data
        self.bound = self.oracle._norm * (z.T @ z)
        # sum of the k largest squared norms bounds the trimmed-away mass
        norms2 = np.sort(np.einsum("ij,ij->i", z, z))
        k = self.oracle.trim_count
        self.top_mass = self.oracle._norm * float(norms2[norms2.size - k :].sum()) if k else 0.0

    def psi(self, diffs: np.ndarray) -> np.ndarray:
        out = np.empty(diffs.shape[0])
        for lo in range(0, diffs.shape[0], _CHUNK):
            out[lo : lo + _CHUNK] = self.oracle.psi_hat_batch(diffs[lo : lo + _CHUNK])
        return out

    def upper(self, diffs: np.ndarray) -> np.ndarray:
        return np.einsum("ij,jk,ik->i", diffs, self.bound, diffs)

    def lower(self, diffs: np.ndarray) -> np.ndarray:
        return self.upper(diffs) - self.top_mass * np.einsum("ij,ij->i", diffs, diffs)


def _farthest_point(metric: _HeadMetric, net: np.ndarray, members: np.ndarray, first: int, k: int):
    """Greedy k-centre clustering of ``members``; returns (centres, labels)."""
    pts = net[members]
    centers = [first]
    dmin = metric.psi(pts - net[first])
    labels = np.zeros(members.size, dtype=int)
    for j in range(1, k):
        far = int(np.argmax(dmin))
        if dmin[far] <= 0.0:
            break
        c = int(members[far])
        centers.append(c)
        diffs = pts - net[c]
        # only points whose lower bound beats the current distance can move
        cand = np.flatnonzero(metric.lower(diffs) < dmin * (1.0 + 1e-9))
        dist = metric.psi(diffs[cand])
        closer = dist < dmin[cand]
        labels[cand[closer]] = j
        dmin[cand[closer]] = dist[closer]
    return np.array(centers, dtype=int), labels


def _diameter(metric: _HeadMetric, pts: np.ndarray) -> float:
    m = pts.shape[0]
    if m < 2:
        return 0.0
    ii, jj = np.triu_indices(m, k=1)
    if ii.size <= _EXACT_PAIRS:
        return math.sqrt(max(0.0, float(metric.psi(pts[ii] - pts[jj]).max())))
    # psi_hat <= untrimmed bound: scan pairs by decreasing bound and stop early
    ub = np.empty(ii.size)
    for lo in range(0, ii.size, 1 << 16):
        sl = slice(lo, lo + (1 << 16))
        ub[sl] = metric.upper(pts[ii[sl]] - pts[jj[sl]])
    order = np.argsort(-ub, kind="stable")
    best = 0.0
    for lo in range(0, order.size, 512):
        if ub[order[lo]] <= best:
            break
        sel = order[lo : lo + 512]
        best = max(best, float(metric.psi(pts[ii[sel]] - pts[jj[sel]]).max()))
    return math.sqrt(max(0.0, best))


def _allocate(sizes: np.ndarray, budget: int) -> np.ndarray:
    """Children per parent: at least one each, the rest to the most crowded cells."""
    alloc = np.ones(sizes.size, dtype=int)
    spare = budget - sizes.size
    heap = [(-sizes[i] / 1.0, i) for i in range(sizes.size) if sizes[i] > 1]
    heapq.heapify(heap)
    while spare > 0 and heap:
        _, i = heapq.heappop(heap)
        alloc[i] += 1
        spare -= 1
        if alloc[i] < sizes[i]:
            heapq.heappush(heap, (-sizes[i] / alloc[i], i))
    return alloc


def build_admissible(
    o: DistanceOracle,
    head: OrthonormalBasis,
    n: int,
    n_samples: int,
    cfg: ChainConfig | None = None,
    net: np.ndarray | None = None,
) -> AdmissibleSequence:
    cfg = cfg or ChainConfig()
    if head.dim < 1:
        raise InvalidParameterError("chaining needs a head of dimension at least 1")
    s0, s1 = level_schedule(n, n_samples, cfg.kappa_tilde_0)
    if cfg.s1 is not None:
        s1 = cfg.s1
    if cfg.s0 is not None:
        s0 = cfg.s0
    if s0 > s1:
        raise DegenerateSequenceError(f"s0={s0} exceeds s1={s1}")
    net = make_net(head.dim, cfg.net_size, cfg.seed) if net is None else np.asarray(net, dtype=float)
    k = net.shape[0]
    metric = _HeadMetric(o, head)

    levels = []
    b0 = anchor_budget(s0, n, cfg.budget_cap)
    centers, labels = _farthest_point(metric, net, np.arange(k), 0, min(b0, k))
    levels.append(_finish_level(metric, net, s0, centers, labels, np.zeros(centers.size, dtype=int)))
    for s in range(s0 + 1, s1 + 1):
        prev = levels[-1]
        budget = max(level_budget(s, cfg.budget_cap), prev.n_cells)
        if prev.n_cells == k:
            levels.append(Level(s, prev.centers, prev.assign, np.arange(k), prev.diameters))
            continue
        sizes = np.bincount(prev.assign, minlength=prev.n_cells)
        alloc = _allocate(sizes, budget)
        all_centers, assign, parent = [], np.empty(k, dtype=int), []
        for c in range(prev.n_cells):
            mem = prev.members(c)
            if alloc[c] >= mem.size:
                cs, lab = mem.copy(), np.arange(mem.size)
            else:
                cs, lab = _farthest_point(metric, net, mem, int(prev.centers[c]), int(alloc[c]))
            assign[mem] = lab + len(all_centers)
            all_centers.extend(cs.tolist())
            parent.extend([c] * cs.size)
        levels.append(_finish_level(metric, net, s, np.array(all_centers, dtype=int), assign,
                                    np.array(parent, dtype=int)))

    weights = np.array([2.0 ** (lv.s / 2.0) for lv in levels])
    per_point = sum(w * lv.diameters[lv.assign] for w, lv in zip(weights, levels))
    seq = AdmissibleSequence(s0, s1, net, head, levels, float(np.max(per_point)), n)
    seq.check()
    return seq


def _finish_level(metric, net, s, centers, labels, parent) -> Level:
    diam = np.zeros(centers.size)
    for c in range(centers.size):
        mem = np.flatnonzero(labels == c)
        diam[c] = _diameter(metric, net[mem])
    return Level(s, centers, labels, parent, diam)


@dataclass(frozen=True, eq=False)
class ChainDecomposition:
    anchor: np.ndarray
    links: list  # Delta_s for s0 < s <= s1, ambient vectors
    residual: np.ndarray
    scale: float
    point: int | None
    path: np.ndarray  # net indices pi_{s0}, ..., pi_{s1}

    def total(self) -> np.ndarray:
        out = self.anchor.copy()
        for v in self.links:
            out = out + v
        return out + self.residual


def decompose(seq: AdmissibleSequence, u) -> ChainDecomposition:
    """P_E u = anchor + sum of links + residual along the chain of its nearest net point."""
    u = np.asarray(u, dtype=float)
    head = seq.head
    c = head.coords(u)
    pe = head.embed(c)
    a = float(np.linalg.norm(c))
    n_links = seq.s1 - seq.s0
    if a == 0.0:
        zero = np.zeros(head.ambient_dim)
        return ChainDecomposition(zero, [zero.copy() for _ in range(n_links)], pe, 0.0, None,
                                  np.zeros(0, dtype=int))
    p = int(np.argmax(seq.net @ (c / a)))
    path = seq.center_path(p)
    pts = head.embed(seq.net[path]) * a
    anchor = pts[0]
    links = [pts[i] - pts[i - 1] for i in range(1, path.size)]
    return ChainDecomposition(anchor, links, pe - pts[-1], a, p, path)


def link_cross_mom(data_half: SampleSet, z, tail_basis: OrthonormalBasis, plan: BlockPlan) -> np.ndarray:
    """Geometric median of block means of <X_i, z> P_tail X_i, in tail coordinates."""
    z = np.asarray(z, dtype=float)
    if data_half.n < plan.n_blocks:
        raise InsufficientDataError(f"{data_half.n} samples cannot fill {plan.n_blocks} blocks")
    if not np.any(z):
        return np.zeros(tail_basis.dim)
    x = data_half.data
    prod = (x @ z)[:, None] * tail_basis.coords(x)
    return geometric_median(plan.block_means(prod))


def level_blocks(s: int, n: int, n_samples: int) -> int:
    """min(max(n, 2^(s+2)), N // 4), at least one."""
    return max(1, min(max(n, 2 ** (s + 2)), n_samples // 4))


@dataclass(eq=False)
class CrossEstimator:
    seq: AdmissibleSequence
    tail: OrthonormalBasis
    tensors: dict  # level s -> (B_s, r, d - r) block means of z (x) y
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_samples(cls, data_half: SampleSet, split: SubspaceSplit, seq: AdmissibleSequence,
                     n: int) -> "CrossEstimator":
        z = split.head.coords(data_half.data)
        y = split.tail.coords(data_half.data)
        outer = z[:, :, None] * y[:, None, :]
        last = seq.singleton_from()
        tensors = {}
        for s in range(seq.s0, min(last, seq.s1) + 1):
            plan = BlockPlan.for_size(data_half.n, level_blocks(s, n, data_half.n))
            tensors[s] = plan.block_means(outer)
        return cls(seq, split.tail, tensors)

    def w_hat(self, s: int, zc: np.ndarray) -> np.ndarray:
        """Cross vector estimate at level s for head coordinates zc (tail coordinates)."""
        if not np.any(zc):
            return np.zeros(self.tail.dim)
        blocks = np.einsum("bij,i->bj", self.tensors[s], zc)
        return geometric_median(blocks)

    def _cached(self, s: int, key, zc: np.ndarray) -> np.ndarray:
        hit = self._cache.get((s, key))
        if hit is None:
            hit = self.w_hat(s, zc)
            self._cache[(s, key)] = hit
        return hit

    def estimate(self, u) -> tuple[float, ChainDecomposition | None]:
        u = np.asarray(u, dtype=float)
        tau = self.tail.coords(u)
        dec = decompose(self.seq, u)
        if dec.scale == 0.0 or not np.any(tau) or self.tail.dim == 0:
            return 0.0, dec
        net, seq = self.seq.net, self.seq
        path = dec.path
        total = float(self._cached(seq.s0, ("anchor", int(path[0])), net[path[0]]) @ tau)
        for i in range(1, path.size):
            s = seq.s0 + i
            if path[i] == path[i - 1] or s not in self.tensors:
                continue  # zero link
            zc = net[path[i]] - net[path[i - 1]]
            total += float(self._cached(s, (int(path[i]), int(path[i - 1])), zc) @ tau)
        return dec.scale * total, dec

    def to_json(self) -> dict:
        return {
            "tail": self.tail.vectors.tolist(),
            "ambient_dim": self.tail.ambient_dim,
            "tensors": {str(s): t.tolist() for s, t in self.tensors.items()},
        }

    @classmethod
    def from_json(cls, obj: dict, seq: AdmissibleSequence) -> "CrossEstimator":
        d = int(obj["ambient_dim"])
        tail = OrthonormalBasis(np.array(obj["tail"], dtype=float).reshape(-1, d), d)
        r = seq.head.dim
        tensors = {int(s): np.array(t, dtype=float).reshape(-1, r, tail.dim) for s, t in obj["tensors"].items()}
        return cls(seq, tail, tensors)


def cross_estimate(data_half: SampleSet, split: SubspaceSplit, seq: AdmissibleSequence, u, delta: float) -> float:
    from .robust_core import n_blocks_for_delta

    est = CrossEstimator.from_samples(data_half, split, seq, n_blocks_for_delta(delta))
    return est.estimate(u)[0]

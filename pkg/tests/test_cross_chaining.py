import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dircov.cross_chaining import (
    AdmissibleSequence,
    ChainConfig,
    CrossEstimator,
    anchor_budget,
    build_admissible,
    cross_estimate,
    decompose,
    level_blocks,
    level_budget,
    level_schedule,
    link_cross_mom,
    make_net,
)
from dircov.errors import DegenerateSequenceError, InsufficientDataError
from dircov.numerics import OrthonormalBasis
from dircov.oracle import DistanceOracle, default_theta
from dircov.robust_core import BlockPlan
from dircov.samples import SampleSet
from dircov.subspace import SearchConfig, SubspaceSplit, build_split
from dircov.synthdata import SpectrumProfile, gen_gaussian


def coordinate_split(d, r):
    e = np.eye(d)
    return SubspaceSplit(OrthonormalBasis(e[:r]), OrthonormalBasis(e[r:]), r, 0.0)


def small_setup(seed=0, d=6, r=2, n_samples=1024, net_size=128):
    x = gen_gaussian(SpectrumProfile.power_law(d), n_samples, seed)
    o = DistanceOracle(x, default_theta())
    split = coordinate_split(d, r)
    seq = build_admissible(o, split.head, 8, n_samples, ChainConfig(net_size=net_size, seed=seed))
    return x, o, split, seq


# -- schedule -----------------------------------------------------------------

def test_level_schedule():
    assert level_schedule(8, 4096, 2) == (5, 12)
    assert level_schedule(8, 16, 2) == (4, 4)
    assert level_schedule(1, 2, 0) == (0, 1)


@given(st.integers(1, 200), st.integers(2, 10**6), st.integers(0, 4))
def test_level_schedule_formula(n, big_n, k0):
    s0, s1 = level_schedule(n, big_n, k0)
    assert s1 == math.ceil(math.log2(big_n))
    assert s0 == min(math.ceil(math.log2(n)) + k0, s1)


def test_level_budgets():
    assert [level_budget(s) for s in range(0, 5)] == [1, 4, 16, 256, 4096]
    assert level_budget(9) == 4096
    assert anchor_budget(5, 8) == min(4096, math.floor(math.exp(4)))
    assert anchor_budget(2, 100) == 16


def test_level_blocks():
    assert level_blocks(1, 8, 1000) == 8
    assert level_blocks(5, 8, 1000) == 128
    assert level_blocks(9, 8, 1000) == 250


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_make_net_unit_antipodal(r):
    net = make_net(r, 64, seed=1)
    assert np.allclose(np.linalg.norm(net, axis=1), 1.0)
    half = net.shape[0] // 2
    assert np.array_equal(net[half:], -net[:half])


# -- admissible sequences -----------------------------------------------------

def test_single_point_net_gamma_zero():
    o = DistanceOracle(gen_gaussian(SpectrumProfile.power_law(3), 64, 0), default_theta())
    head = OrthonormalBasis(np.eye(3)[:2])
    seq = build_admissible(o, head, 8, 64, net=np.array([[1.0, 0.0]]))
    assert all(lv.n_cells == 1 for lv in seq.levels)
    assert seq.gamma == 0.0


def test_two_point_net_hand_enumeration():
    # psi_hat(v) = v^2 exactly: all squares equal 1 and one of 64 is trimmed
    x = np.where(np.arange(64) % 2 == 0, 1.0, -1.0)[:, None]
    o = DistanceOracle(SampleSet(x), 1 / 64)
    head = OrthonormalBasis(np.eye(1))
    net = np.array([[0.5], [-0.5]])
    assert math.sqrt(o.psi_hat(np.array([1.0]))) == pytest.approx(1.0, rel=1e-14)
    seq = build_admissible(o, head, 8, 64, ChainConfig(s0=0, s1=1), net=net)
    assert seq.level(0).n_cells == 1 and seq.level(0).diameters[0] == pytest.approx(1.0)
    assert seq.level(1).n_cells == 2 and np.all(seq.level(1).diameters == 0.0)
    # 2^0 * 1 + 2^(1/2) * 0
    assert seq.gamma == pytest.approx(1.0)


def test_degenerate_schedule():
    o = DistanceOracle(gen_gaussian(SpectrumProfile.power_law(2), 64, 0), default_theta())
    with pytest.raises(DegenerateSequenceError):
        build_admissible(o, OrthonormalBasis(np.eye(2)[:1]), 8, 64, ChainConfig(s0=5, s1=3))


@given(st.integers(0, 10_000), st.integers(1, 3))
@settings(max_examples=15)
def test_sequence_structure(seed, r):
    x = gen_gaussian(SpectrumProfile.power_law(5), 512, seed)
    o = DistanceOracle(x, default_theta())
    head = OrthonormalBasis(np.eye(5)[:r])
    seq = build_admissible(o, head, 4, 512, ChainConfig(net_size=96, seed=seed))
    seq.check()
    k = seq.net.shape[0]
    assert seq.level(seq.s0).n_cells <= anchor_budget(seq.s0, 4)
    prev = None
    for lv in seq.levels:
        assert lv.n_cells <= level_budget(lv.s)
        assert lv.assign.shape == (k,)
        if prev is not None:
            # nested: members of a child lie inside the parent cell
            assert np.array_equal(lv.parent[lv.assign], prev.assign)
        prev = lv
    for p in range(0, k, 7):
        diam = [lv.diameters[lv.assign[p]] for lv in seq.levels]
        assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(diam, diam[1:]))
    assert math.isfinite(seq.gamma)


def test_diameters_match_direct_evaluation():
    _, o, split, seq = small_setup(net_size=64)
    lv = seq.level(seq.s0)
    for c in range(lv.n_cells):
        pts = split.head.embed(seq.net[lv.members(c)])
        best = 0.0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                best = max(best, math.sqrt(o.psi_hat(pts[i] - pts[j])))
        assert lv.diameters[c] == pytest.approx(best, rel=1e-9, abs=1e-12)


def test_gamma_power_law_shape():
    prof = SpectrumProfile.power_law(16)
    ratios = []
    for seed in range(20):
        x = gen_gaussian(prof, 2048, seed).data
        o = DistanceOracle(SampleSet(x[:1024]), default_theta())
        split = build_split(o, 4, SearchConfig(seed=seed))
        seq = build_admissible(o, split.head, 8, 1024)
        ratios.append(seq.gamma / math.sqrt(prof.lam(4) * 8))
    assert sum(k <= 100 for k in ratios) >= 18


def test_sequence_json_round_trip():
    _, _, _, seq = small_setup(net_size=64)
    back = AdmissibleSequence.from_json(seq.to_json())
    assert back.gamma == seq.gamma and back.s0 == seq.s0 and back.s1 == seq.s1
    for a, b in zip(seq.levels, back.levels):
        assert np.array_equal(a.assign, b.assign) and np.array_equal(a.centers, b.centers)


# -- decomposition ------------------------------------------------------------

def test_decompose_net_point_has_no_residual():
    _, _, split, seq = small_setup(net_size=64)
    p = 5
    u = split.head.embed(seq.net[p])
    dec = decompose(seq, u)
    assert dec.point == p
    assert np.allclose(dec.residual, 0.0, atol=1e-15)
    last = seq.singleton_from()
    for s, link in zip(range(seq.s0 + 1, seq.s1 + 1), dec.links):
        if s > last:
            assert np.all(link == 0.0)


def test_telescoping_random_directions():
    _, _, _, seq = small_setup(net_size=64)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        u = rng.standard_normal(6) * rng.uniform(0.01, 100)
        dec = decompose(seq, u)
        pe = seq.head.embed(seq.head.coords(u))
        assert np.max(np.abs(dec.total() - pe)) <= 1e-10 * max(1.0, np.abs(u).max())


def test_decompose_zero_head_component():
    _, _, _, seq = small_setup(net_size=64)
    u = np.zeros(6)
    u[4] = 1.0
    dec = decompose(seq, u)
    assert dec.scale == 0.0 and np.all(dec.total() == 0.0)


def test_link_norms_bounded_by_gamma():
    _, o, _, seq = small_setup(net_size=128)
    rng = np.random.default_rng(1)
    for _ in range(100):
        c = rng.standard_normal(2)
        u = seq.head.embed(c / np.linalg.norm(c))
        dec = decompose(seq, u)
        total = sum(2.0 ** ((s - 1) / 2) * math.sqrt(o.psi_hat(link))
                    for s, link in zip(range(seq.s0 + 1, seq.s1 + 1), dec.links))
        assert total <= seq.gamma * (1 + 1e-9)


# -- cross term ---------------------------------------------------------------

def test_link_cross_mom_zero_and_insufficient():
    x = gen_gaussian(SpectrumProfile.power_law(4), 64, 0)
    tail = OrthonormalBasis(np.eye(4)[2:])
    assert np.array_equal(link_cross_mom(x, np.zeros(4), tail, BlockPlan(8, 8)), np.zeros(2))
    with pytest.raises(InsufficientDataError):
        link_cross_mom(SampleSet(x.data[:4]), np.ones(4), tail, BlockPlan(8, 1))


def test_link_cross_mom_product_distribution():
    n = 100_000
    x = gen_gaussian(SpectrumProfile.diagonal([1.0, 1.0, 1.0]), n, 3)
    tail = OrthonormalBasis(np.eye(3)[1:])
    w = link_cross_mom(x, np.array([1.0, 0.0, 0.0]), tail, BlockPlan.for_size(n, 8))
    se = math.sqrt(math.pi / 2) / math.sqrt(n)
    assert np.all(np.abs(w) <= 3 * se)


def test_link_cross_mom_planted_covariance():
    n, c = 100_000, 0.3
    prof = SpectrumProfile.from_matrix(np.array([[1.0, c], [c, 1.0]]))
    x = gen_gaussian(prof, n, 4)
    w = link_cross_mom(x, np.array([1.0, 0.0]), OrthonormalBasis(np.eye(2)[1:]), BlockPlan.for_size(n, 8))
    se = math.sqrt(math.pi / 2) * math.sqrt((1 + c * c) / n)
    assert abs(w[0] - c) <= 3 * se


def test_cross_estimate_vanishes_on_pure_directions():
    x, _, split, seq = small_setup(net_size=64)
    delta = math.exp(-8)
    uh = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0]) / math.sqrt(2)
    ut = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 0.0]) / math.sqrt(2)
    assert cross_estimate(x, split, seq, uh, delta) == 0.0
    assert cross_estimate(x, split, seq, ut, delta) == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_cross_estimate_odd_under_tail_negation(seed):
    x, _, split, seq = small_setup(net_size=64)
    est = CrossEstimator.from_samples(x, split, seq, 8)
    rng = np.random.default_rng(seed)
    h = split.head.embed(rng.standard_normal(2))
    t = split.tail.embed(rng.standard_normal(4))
    assert est.estimate(h - t)[0] == -est.estimate(h + t)[0]


def test_cross_estimate_planted_accuracy():
    # shapes as in the acceptance experiment, over fewer seeds
    d, r, big_n = 16, 4, 8192
    lam = 1.0 / np.arange(1, d + 1)
    cov = np.diag(lam)
    for i in range(r):
        cov[i, r + i] = cov[r + i, i] = 0.4 * math.sqrt(lam[i] * lam[r + i])
    prof = SpectrumProfile.from_matrix(cov)
    ev = prof.eigenvalues
    split = coordinate_split(d, r)
    ratios = []
    for seed in range(10):
        data = gen_gaussian(prof, big_n, seed).data
        o = DistanceOracle(SampleSet(data[: big_n // 2]), default_theta())
        seq = build_admissible(o, split.head, 8, big_n // 2)
        half2 = SampleSet(data[big_n // 2:])
        u = np.random.default_rng(seed).standard_normal(d)
        u /= np.linalg.norm(u)
        ue = np.concatenate([u[:r], np.zeros(d - r)])
        truth = float(ue @ cov @ (u - ue))
        est = cross_estimate(half2, split, seq, u, math.exp(-8))
        env = max(math.sqrt(u @ cov @ u), math.sqrt(ev[r - 1])) * math.sqrt(ev[r // 2 - 1:].sum() / (big_n // 2))
        ratios.append(abs(est - truth) / env)
    assert sum(k <= 50 for k in ratios) >= 9


def test_cross_estimator_json_round_trip():
    x, _, split, seq = small_setup(net_size=64)
    est = CrossEstimator.from_samples(x, split, seq, 8)
    back = CrossEstimator.from_json(est.to_json(), seq)
    u = np.random.default_rng(0).standard_normal(6)
    assert back.estimate(u)[0] == est.estimate(u)[0]

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dircov.errors import InvalidParameterError, InvalidSpecError, UndefinedRankError
from dircov.numerics import OrthonormalBasis, SymMatrix, orthonormalize
from dircov.samples import make_rng
from dircov.synthdata import (
    MixedAdversarySpec,
    SpectrumProfile,
    ThreePointLaw,
    contaminate,
    effective_rank,
    gen_gaussian,
    gen_heavy_tailed,
    gen_mixed_adversary,
    gen_three_point,
    kurtosis_from_dof,
    three_point_values,
)


def kurtosis(x):
    x = np.asarray(x).ravel()
    return float(np.mean(x ** 4) / np.mean(x ** 2) ** 2)


# -- gaussian -----------------------------------------------------------------

def test_gaussian_zero_profile():
    s = gen_gaussian(SpectrumProfile.diagonal([0.0, 0.0, 0.0]), 50, 1)
    assert np.array_equal(s.data, np.zeros((50, 3)))


def test_gaussian_unit_variance_seed7():
    x = gen_gaussian(SpectrumProfile.diagonal([1.0]), 100_000, 7).data
    assert abs(np.mean(x ** 2) - 1.0) <= 0.03


def test_gaussian_rotation_leaves_gram_spectrum():
    prof = SpectrumProfile.power_law(6)
    rot = orthonormalize(np.random.default_rng(0).standard_normal((6, 6))).vectors
    a = gen_gaussian(prof, 300, 3).data
    b = gen_gaussian(prof.rotated(rot), 300, 3).data
    ea = np.linalg.eigvalsh(a.T @ a)
    eb = np.linalg.eigvalsh(b.T @ b)
    assert np.allclose(ea, eb, rtol=1e-10, atol=1e-9)


def test_generators_deterministic_and_seed_dependent():
    prof = SpectrumProfile.power_law(4)
    assert np.array_equal(gen_gaussian(prof, 20, 5).data, gen_gaussian(prof, 20, 5).data)
    assert not np.array_equal(gen_gaussian(prof, 20, 5).data, gen_gaussian(prof, 20, 6).data)
    assert np.array_equal(gen_heavy_tailed(prof, 6, 20, 5).data, gen_heavy_tailed(prof, 6, 20, 5).data)


def test_gaussian_covariance_converges():
    prof = SpectrumProfile.diagonal([4.0, 1.0, 0.25])
    x = gen_gaussian(prof, 200_000, 2).data
    assert np.allclose(x.T @ x / len(x), prof.covariance(), atol=0.04)


# -- heavy tails --------------------------------------------------------------

def test_heavy_tailed_rejects_small_dof():
    with pytest.raises(InvalidParameterError):
        gen_heavy_tailed(SpectrumProfile.diagonal([1.0]), 4.0, 10, 0)
    with pytest.raises(InvalidParameterError):
        kurtosis_from_dof(3.5)


def test_heavy_tailed_zero_profile():
    s = gen_heavy_tailed(SpectrumProfile.diagonal([0.0, 0.0]), 7, 30, 0)
    assert np.array_equal(s.data, np.zeros((30, 2)))


def test_heavy_tailed_large_dof_is_gaussian_like():
    x = gen_heavy_tailed(SpectrumProfile.diagonal([1.0]), 1e6, 100_000, 0).data
    assert abs(kurtosis(x) - 3.0) <= 0.05 * 3.0


def test_heavy_tailed_kurtosis_dof5():
    target = 3.0 + 6.0 / (5 - 4)
    assert kurtosis_from_dof(5) == target == 9.0
    prof = SpectrumProfile.diagonal([1.0])
    # the sample kurtosis has infinite variance at dof=5, so a single draw is
    # erratic; the median across seeds is the stable Monte-Carlo summary
    ks = [kurtosis(gen_heavy_tailed(prof, 5, 1_000_000, s).data) for s in range(9)]
    assert abs(np.median(ks) - target) <= 0.10 * target


def test_heavy_tailed_kurtosis_conditional_seed3():
    # rebuild the mixing scales of seed 3 and use E[x^4 | s] = 3 s^4
    n, dof = 1_000_000, 5
    x = gen_heavy_tailed(SpectrumProfile.diagonal([1.0]), dof, n, 3).data[:, 0]
    rng = make_rng(3, "student")
    z = rng.standard_normal((n, 1))[:, 0]
    s = np.sqrt((dof - 2.0) / rng.chisquare(dof, size=n))
    assert np.allclose(x, z * s)
    rb = 3.0 * np.mean(s ** 4) / np.mean(s ** 2) ** 2
    assert abs(rb - 9.0) <= 0.9


def test_heavy_tailed_covariance_matches_profile():
    prof = SpectrumProfile.diagonal([2.0, 0.5])
    x = gen_heavy_tailed(prof, 12, 400_000, 1).data
    assert np.allclose(x.T @ x / len(x), prof.covariance(), atol=0.05)


# -- three point law ----------------------------------------------------------

def test_three_point_p_from_delta():
    law = ThreePointLaw.from_delta(2 * math.exp(-2), 100)
    assert law.p == pytest.approx(0.01, rel=1e-12)


def test_three_point_support():
    x = gen_three_point(ThreePointLaw(2.0, 0.3), 5000, 0).data
    assert set(np.unique(x)) <= {-2.0, 0.0, 2.0}
    assert len(np.unique(x)) == 3


def test_three_point_all_zero_frequency():
    delta = 2 * math.exp(-2)
    law = ThreePointLaw.from_delta(delta, 100)
    expected = law.prob_all_zero(100)
    vals = three_point_values(law, (100_000, 100), make_rng(0, "tp"))
    freq = float(np.mean(np.all(vals == 0, axis=1)))
    assert abs(freq - expected) <= 0.3 * expected


@pytest.mark.parametrize("delta", [1e-1, 1e-2, 1e-4, 1e-8])
def test_three_point_all_zero_probability_exceeds_two_delta(delta):
    # (1 - p)^N is about sqrt(delta / 2), which dominates 2 delta once delta <= 1/8
    for n in (100, 1000, 10_000):
        law = ThreePointLaw.from_delta(delta, n)
        assert law.prob_all_zero(n) >= 2 * delta


def test_three_point_moments():
    law = ThreePointLaw(3.0, 0.2)
    assert law.second_moment == pytest.approx(9 * 0.2)
    x = gen_three_point(law, 400_000, 1).data
    assert abs(np.mean(x ** 2) - law.second_moment) <= 0.03


def test_three_point_invalid():
    with pytest.raises(InvalidParameterError):
        ThreePointLaw(1.0, 0.0)


# -- mixed adversary ----------------------------------------------------------

def _spec(mu_fraction=1.0, d=6, head=2, n_ref=1000):
    return MixedAdversarySpec.from_profile(SpectrumProfile.power_law(d), head, n_ref, mu_fraction)


def test_mixed_adversary_degenerate_is_two_point():
    e = np.eye(3)
    spec = MixedAdversarySpec(OrthonormalBasis(e[:1]), 2.0, np.zeros(0), np.zeros(2),
                              SymMatrix(np.zeros((2, 2))), 0.0, 100)
    x = gen_mixed_adversary(spec, 200, 0).data
    assert set(map(tuple, x)) <= {(2.0, 0.0, 0.0), (-2.0, 0.0, 0.0)}


@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_mixed_adversary_marginal_exact(seed, frac):
    spec = _spec(frac)
    x = gen_mixed_adversary(spec, 64, seed).data
    proj = x @ spec.u
    assert np.all(proj ** 2 == pytest.approx(spec.sigma_u ** 2, rel=1e-12))
    assert spec.u @ spec.population_covariance() @ spec.u == pytest.approx(spec.sigma_u ** 2, rel=1e-12)


def test_mixed_adversary_cross_mean_is_mu():
    spec = _spec(1.0)
    n = 1_000_000
    x = gen_mixed_adversary(spec, n, 4).data
    t = spec.tail_basis.coords(x)
    prod = (x @ spec.u)[:, None] * t
    band = 3 * spec.sigma_u * np.sqrt(np.diag(spec.tail_cov.entries) / n)
    assert np.all(np.abs(prod.mean(axis=0) - spec.mu) <= band + 1e-12)


def test_mixed_adversary_tail_trace_within_bands():
    spec = _spec(1.0, n_ref=200)
    n = 20_000
    x = gen_mixed_adversary(spec, n, 2).data
    t = spec.tail_basis.coords(x)
    emp = float(np.trace(t.T @ t) / n)
    # trace of tail_cov plus |mu|^2/sigma_u^2 equals the reference trace
    assert spec.tail_trace == pytest.approx(
        np.trace(spec.tail_cov.entries) + spec.mu @ spec.mu / spec.sigma_u ** 2, rel=1e-12)
    sd = math.sqrt(2 * np.sum(np.diag(spec.tail_cov.entries) ** 2) / n)
    assert emp <= spec.tail_trace + 5 * sd


def test_mixed_adversary_rejects_bad_trace():
    spec = _spec()
    with pytest.raises(InvalidSpecError):
        MixedAdversarySpec(spec.head_basis, spec.sigma_u, spec.head_aux_sigmas, spec.mu,
                           SymMatrix(spec.tail_cov.entries * 2), spec.tail_trace, spec.n_ref, spec.tail_basis)
    with pytest.raises(InvalidSpecError):
        MixedAdversarySpec(spec.head_basis, spec.sigma_u, spec.head_aux_sigmas, spec.mu * 1.5,
                           spec.tail_cov, spec.tail_trace, spec.n_ref, spec.tail_basis)


# -- effective rank and helpers -----------------------------------------------

def test_effective_rank_examples():
    assert effective_rank(SpectrumProfile.diagonal(np.ones(7))) == 7
    assert effective_rank(SpectrumProfile.diagonal([1.0, 0.0, 0.0])) == 1
    assert effective_rank(SpectrumProfile.diagonal([4.0, 2.0, 2.0])) == pytest.approx((4 + 2 + 2) / 4)
    with pytest.raises(UndefinedRankError):
        effective_rank(SpectrumProfile.diagonal([0.0, 0.0]))


@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=12))
def test_effective_rank_range(lams):
    if max(lams) <= 0:
        return
    r = effective_rank(SpectrumProfile.diagonal(lams))
    assert 1 - 1e-12 <= r <= len(lams) + 1e-12


def test_profile_helpers():
    prof = SpectrumProfile.diagonal([3.0, 2.0, 1.0])
    assert prof.lam(1) == 3.0 and prof.lam(4) == 0.0
    assert prof.tail_sum(1.5) == 3.0
    assert prof.sigma2(np.array([0.0, 1.0, 0.0])) == 2.0


def test_contaminate_replaces_fraction():
    s = gen_gaussian(SpectrumProfile.diagonal([1.0, 1.0]), 100, 0)
    c = contaminate(s, 0.05, [50.0, 50.0], 1)
    assert int(np.sum(np.all(c.data == 50.0, axis=1))) == 5
    with pytest.raises(InvalidParameterError):
        contaminate(s, 1.0, [0.0, 0.0], 1)

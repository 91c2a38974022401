"""Monte-Carlo experiments behind the acceptance criteria.

Each ``ac*`` function runs one criterion at its pinned parameters and returns
an ``ExperimentResult`` with a pass flag and the measured metrics. Trial
counts and sizes are arguments so smaller versions can be run quickly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assembler import EstimatorConfig, fit
from .cross_chaining import build_admissible, decompose
from .numerics import OrthonormalBasis, principal_angles, project
from .oracle import DistanceOracle, default_theta, oracle_sandwich_check
from .robust_core import lower_median, trim_count
from .samples import SampleSet, make_rng
from .split_estimators import HeadEstimator, fit_tail, head_quadform
from .subspace import SearchConfig, SubspaceSplit, build_split
from .synthdata import (
    MixedAdversarySpec,
    SpectrumProfile,
    ThreePointLaw,
    gen_gaussian,
    gen_heavy_tailed,
    gen_mixed_adversary,
    kappa_from_dof,
    three_point_values,
)


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    budget_s: float | None = None

    @property
    def within_budget(self) -> bool:
        return self.budget_s is None or self.runtime_s < self.budget_s

    def line(self) -> str:
        flag = "PASS" if self.passed and self.within_budget else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        budget = f"/{self.budget_s:.0f}s" if self.budget_s else ""
        return f"[{flag}] {self.name}: {shown} ({self.runtime_s:.1f}s{budget})"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    return str(v)


def _timed(name: str, budget: float | None):
    def deco(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, metrics = fn(*args, **kwargs)
            return ExperimentResult(name, bool(passed), metrics, time.perf_counter() - t0, budget)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return deco


def _generator(dist: str):
    if dist == "gaussian":
        return gen_gaussian
    if dist.startswith("student"):
        dof = float(dist[len("student"):] or 5)
        return lambda prof, n, seed: gen_heavy_tailed(prof, dof, n, seed)
    raise ValueError(f"unknown distribution {dist!r}")


def _kappa2(dist: str) -> float:
    if dist == "gaussian":
        return kappa_from_dof(None) ** 2
    return kappa_from_dof(float(dist[len("student"):] or 5)) ** 2


def _unit(rng, m: int, k: int) -> np.ndarray:
    g = rng.standard_normal((m, k))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# -- 1: exact identities ----------------------------------------------------------

@_timed("AC1 exact identities", 30.0)
def ac1_identities(seed: int = 0, n_dirs: int = 1000):
    rng = make_rng(seed, "ac1")
    prof = SpectrumProfile.power_law(16)
    x = gen_gaussian(prof, 2048, make_rng(seed, "ac1-data"))
    o = DistanceOracle(x)
    checks = {}
    v = rng.standard_normal((200, 16))
    base = o.psi_hat_batch(v)
    checks["psi_homogeneity"] = bool(
        np.array_equal(o.psi_hat_batch(2.0 * v), 4.0 * base)
        and np.allclose(o.psi_hat_batch(3.0 * v), 9.0 * base, rtol=1e-12, atol=0)
    )
    b = OrthonormalBasis(np.linalg.qr(rng.standard_normal((16, 5)))[0].T)
    w = rng.standard_normal((200, 16))
    lhs = np.einsum("ij,ij->i", project(v, b), w)
    rhs = np.einsum("ij,ij->i", v, project(w, b))
    checks["projection_self_adjoint"] = bool(np.max(np.abs(lhs - rhs)) <= 1e-10)

    cfg = EstimatorConfig(delta=math.exp(-8), kappa_E=0.5, seed=seed)
    f = fit(x, cfg)
    seq = f.cross.seq
    try:
        seq.check()
        caps = True
    except AssertionError:
        caps = False
    checks["admissible_structure"] = caps
    worst_tel = 0.0
    worst_book = 0.0
    for u in rng.standard_normal((n_dirs, 16)):
        dec = decompose(seq, u)
        pe = project(u, f.split.head)
        worst_tel = max(worst_tel, float(np.max(np.abs(dec.total() - pe))))
    for u in rng.standard_normal((min(n_dirs, 200), 16)):
        q = f.query(u)
        worst_book = max(worst_book, abs(q.raw_value - (q.head_part + q.tail_part + 2 * q.cross_part)))
    checks["telescoping"] = worst_tel <= 1e-10
    checks["bookkeeping"] = worst_book <= 1e-10
    metrics = {k: v for k, v in checks.items()}
    metrics["telescoping_err"] = worst_tel
    return all(checks.values()), metrics


# -- 2: scalar rate ---------------------------------------------------------------

SCALAR_NS = (256, 512, 1024, 2048, 4096, 8192, 16384)
SCALAR_LOG_INV_DELTAS = (3, 5, 8)


def scalar_cell_errors(x: np.ndarray, n_blocks: int) -> dict:
    """Errors of MoM (n blocks) and trimmed mean of squares (theta = n/N) against E x^2 = 1, per row."""
    rows, big_n = x.shape
    sq = x * x
    m = big_n // n_blocks
    bm = sq[:, : n_blocks * m].reshape(rows, n_blocks, m).mean(axis=2)
    mom = lower_median(bm, axis=1)
    theta = n_blocks / big_n
    k = trim_count(big_n, theta)
    tm = np.partition(sq, big_n - k - 1, axis=1)[:, : big_n - k].sum(axis=1) / ((1 - theta) * big_n)
    return {"mom": np.abs(mom - 1.0), "trimmed": np.abs(tm - 1.0)}


@_timed("AC2 scalar rate", 300.0)
def ac2_scalar_rate(trials: int = 2000, ns=SCALAR_NS, log_inv_deltas=SCALAR_LOG_INV_DELTAS, seed: int = 0):
    metrics = {}
    ok = True
    for dist in ("gaussian", "student5"):
        bound = 10.0 * _kappa2(dist)
        worst = {"mom": 0.0, "trimmed": 0.0}
        for big_n in ns:
            rng = make_rng(seed, "ac2", dist, big_n)
            x = rng.standard_normal((trials, big_n))
            if dist != "gaussian":
                x *= np.sqrt(3.0 / rng.chisquare(5.0, (trials, big_n)))
            for ld in log_inv_deltas:
                errs = scalar_cell_errors(x, int(ld))
                for name, e in errs.items():
                    q = float(np.quantile(e, 1.0 - math.exp(-ld)))
                    worst[name] = max(worst[name], q / math.sqrt(ld / big_n))
        for name, c in worst.items():
            metrics[f"{dist}_{name}_C"] = c
            ok &= c <= bound
        metrics[f"{dist}_bound"] = bound
    return ok, metrics


# -- 3: three-point law -----------------------------------------------------------

def three_point_zero_frequency(p: float, big_n: int, trials: int, seed, batch: int = 10000) -> float:
    law = ThreePointLaw(1.0, p)
    rng = make_rng(seed, "three-point-freq", big_n)
    hits = 0
    for lo in range(0, trials, batch):
        m = min(batch, trials - lo)
        vals = three_point_values(law, (m, big_n), rng)
        hits += int(np.sum(~np.any(vals != 0.0, axis=1)))
    return hits / trials


@_timed("AC3 three-point zero frequency", 60.0)
def ac3_three_point(trials: int = 100_000, cells=((0.01, 100), (0.002, 500)), seed: int = 0):
    metrics = {}
    ok = True
    for p, big_n in cells:
        freq = three_point_zero_frequency(p, big_n, trials, seed)
        target = (1.0 - p) ** big_n
        rel = abs(freq - target) / target
        metrics[f"freq_p{p:g}_N{big_n}"] = freq
        metrics[f"relerr_p{p:g}_N{big_n}"] = rel
        ok &= rel <= 0.30
    return ok, metrics


# -- 4: oracle sandwich ----------------------------------------------------------

@_timed("AC4 oracle sandwich", 120.0)
def ac4_oracle_sandwich(trials: int = 100, d: int = 32, big_n: int = 4096, n: int = 8, rho: float = 0.5,
                        kappa0: float = 1.0, lower_const: float = 0.5, n_dirs: int = 64, seed: int = 0):
    prof = SpectrumProfile.power_law(d)
    up_ok = low_ok = 0
    up_c, low_c = 0.0, math.inf
    for t in range(trials):
        x = gen_gaussian(prof, big_n, make_rng(seed, "ac4", t))
        rep = oracle_sandwich_check(DistanceOracle(x), prof, rho, kappa0, n, n_dirs, 1000 * seed + t,
                                    lower_const=lower_const)
        up_ok += rep.upper_pass == rep.upper_total
        low_ok += rep.lower_pass == rep.lower_total
        up_c = max(up_c, rep.upper_constant)
        low_c = min(low_c, rep.lower_constant)
    need = math.ceil(0.95 * trials)
    return up_ok >= need and low_ok >= need, {
        "upper_pass_trials": up_ok,
        "lower_pass_trials": low_ok,
        "upper_const_seen": up_c,
        "upper_const_allowed": 16.0 / default_theta() ** 2,
        "lower_const_seen": low_c,
        "lower_const_required": lower_const,
    }


# -- 5: subspace certificate ------------------------------------------------------

@_timed("AC5 subspace certificate", 180.0)
def ac5_subspace(trials: int = 100, seed: int = 0):
    prof = SpectrumProfile.power_law(32)
    cert_ok = 0
    worst = 0.0
    r = 4
    for t in range(trials):
        o = DistanceOracle(gen_gaussian(prof, 4096, make_rng(seed, "ac5", t)))
        sp = build_split(o, r, SearchConfig(n_probe=256, seed=t))
        bound = 16.0 / o.theta ** 2 * prof.lam(r)
        cert_ok += sp.certificate <= bound
        worst = max(worst, sp.certificate / prof.lam(r))
    lam = np.ones(16)
    lam[:2] = (100.0, 50.0)
    spiked = SpectrumProfile.diagonal(lam)
    target = OrthonormalBasis(np.eye(16)[:2])
    ang_ok = 0
    max_ang = 0.0
    for t in range(trials):
        o = DistanceOracle(gen_gaussian(spiked, 4096, make_rng(seed, "ac5-spiked", t)))
        sp = build_split(o, 2, SearchConfig(seed=t))
        a = float(principal_angles(sp.head, target).max())
        ang_ok += a <= 0.2
        max_ang = max(max_ang, a)
    return cert_ok >= math.ceil(0.95 * trials) and ang_ok >= math.ceil(0.9 * trials), {
        "certificate_pass_trials": cert_ok,
        "certificate_over_lambda_r_max": worst,
        "angle_pass_trials": ang_ok,
        "max_angle": max_ang,
    }


# -- 6: tail estimator rate -------------------------------------------------------

TAIL_NS = (1024, 2048, 4096, 8192)


def tail_error_trial(prof: SpectrumProfile, dist: str, big_n: int, seed, r: int = 1,
                     delta: float = math.exp(-8)) -> tuple[float, float]:
    """(operator-norm error on the tail, envelope) for one trial; the split uses an independent half."""
    x = _generator(dist)(prof, 2 * big_n, seed).data
    o = DistanceOracle(SampleSet(x[:big_n]))
    sp = build_split(o, r, SearchConfig(seed=0))
    te = fit_tail(SampleSet(x[big_n:]), sp, delta, reference=prof)
    t = sp.tail.vectors
    truth = t @ prof.covariance() @ t.T
    return float(np.linalg.norm(te.matrix.entries - truth, 2)), float(te.error_envelope)


@_timed("AC6 tail estimator rate", 300.0)
def ac6_tail_rate(trials: int = 100, ns=TAIL_NS, d: int = 32, ratio_const: float = 10.0, seed: int = 0):
    prof = SpectrumProfile.power_law(d)
    metrics = {}
    ok = True
    worst = 0.0
    for dist in ("gaussian", "student5"):
        meds = []
        for big_n in ns:
            errs, ratios = [], []
            for t in range(trials):
                e, env = tail_error_trial(prof, dist, big_n, make_rng(seed, "ac6", dist, big_n, t))
                errs.append(e)
                ratios.append(e / env)
            meds.append(float(np.median(errs)))
            c90 = float(np.quantile(ratios, 0.9))
            worst = max(worst, c90)
        slope = float(np.polyfit(np.log(ns), np.log(meds), 1)[0])
        metrics[f"{dist}_slope"] = slope
        ok &= -0.65 <= slope <= -0.35
    metrics["ratio_C90"] = worst
    metrics["ratio_const"] = ratio_const
    return ok and worst <= ratio_const, metrics


# -- 7: head MoM ------------------------------------------------------------------

@_timed("AC7 head median-of-means", 180.0)
def ac7_head_mom(trials: int = 100, n_dirs: int = 50, d: int = 32, big_n: int = 4096, n: int = 20,
                 seed: int = 0):
    """Relative head errors; corruption replaces one block out of n = 20 (5%)."""
    prof = SpectrumProfile.power_law(d)
    delta = math.exp(-n)
    r = max(1, math.ceil(0.1 * n))
    metrics = {}
    ok = True
    for dist in ("gaussian", "student5"):
        clean, dirty = [], []
        for t in range(trials):
            x = _generator(dist)(prof, 2 * big_n, make_rng(seed, "ac7", dist, t)).data
            sp = build_split(DistanceOracle(SampleSet(x[:big_n])), r, SearchConfig(seed=t))
            h2 = x[big_n:]
            he = HeadEstimator.from_samples(SampleSet(h2), sp, delta)
            bad = h2.copy()
            bad[: he.plan.block_size] = 1e3 * sp.head.vectors[0]
            hc = HeadEstimator.from_samples(SampleSet(bad), sp, delta)
            us = _unit(make_rng(seed, "ac7-dirs", t), n_dirs, r) @ sp.head.vectors
            for u in us:
                s2 = prof.sigma2(u)
                scale = s2 * math.sqrt(n / big_n)
                clean.append(abs(head_quadform(he, u) - s2) / scale)
                dirty.append(abs(head_quadform(hc, u) - s2) / scale)
        k6 = float(np.max(clean))
        infl = float(np.quantile(dirty, 0.9) / np.quantile(clean, 0.9))
        bound = 20.0 * _kappa2(dist)
        metrics[f"{dist}_kappa6"] = k6
        metrics[f"{dist}_bound"] = bound
        metrics[f"{dist}_inflation"] = infl
        ok &= k6 <= bound and infl <= 2.0
    return ok, metrics


# -- 8: chaining functional -------------------------------------------------------

@_timed("AC8 chaining functional", 180.0)
def ac8_gamma(trials: int = 100, d: int = 16, big_n: int = 2048, n: int = 8, r: int = 4, seed: int = 0):
    prof = SpectrumProfile.power_law(d)
    ratios = []
    for t in range(trials):
        x = gen_gaussian(prof, big_n, make_rng(seed, "ac8", t)).data
        o = DistanceOracle(SampleSet(x[: big_n // 2]))
        sp = build_split(o, r, SearchConfig(seed=t))
        seq = build_admissible(o, sp.head, n, big_n // 2)
        ratios.append(seq.gamma / math.sqrt(prof.lam(r) * n))
    passed = int(np.sum(np.array(ratios) <= 100.0))
    return passed >= math.ceil(0.9 * trials), {
        "pass_trials": passed,
        "kappa8_median": float(np.median(ratios)),
        "kappa8_max": float(np.max(ratios)),
    }


# -- 9: cross term ----------------------------------------------------------------

def planted_cross_covariance(d: int = 16, r: int = 4, strength: float = 0.4) -> np.ndarray:
    """diag(1/i) plus cross entries strength*sqrt(l_i l_{r+i}) between head i and tail r+i."""
    lam = 1.0 / np.arange(1, d + 1)
    s = np.diag(lam)
    for i in range(min(r, d - r)):
        j = r + i
        s[i, j] = s[j, i] = strength * math.sqrt(lam[i] * lam[j])
    return s


@_timed("AC9 cross-term accuracy", 300.0)
def ac9_cross(trials: int = 100, d: int = 16, r: int = 4, big_n: int = 8192, seed: int = 0):
    cov = planted_cross_covariance(d, r)
    prof = SpectrumProfile.from_matrix(cov)
    ev = prof.eigenvalues
    split = SubspaceSplit(OrthonormalBasis(np.eye(d)[:r]), OrthonormalBasis(np.eye(d)[r:]), r, 0.0)
    cfg = EstimatorConfig(delta=math.exp(-8), kappa_E=0.5, seed=seed)
    ratios = []
    for t in range(trials):
        f = fit(gen_gaussian(prof, big_n, make_rng(seed, "ac9", t)), cfg, split_override=split)
        u = _unit(make_rng(seed, "ac9-dir", t), 1, d)[0]
        ue = np.concatenate([u[:r], np.zeros(d - r)])
        truth = float(ue @ cov @ (u - ue))
        est = f.parts(u)[2]
        env = max(math.sqrt(u @ cov @ u), math.sqrt(ev[r - 1])) * math.sqrt(tail_sum(ev, r / 2) / big_n)
        ratios.append(abs(est - truth) / env)
    passed = int(np.sum(np.array(ratios) <= 50.0))
    return passed >= math.ceil(0.9 * trials), {
        "pass_trials": passed,
        "kappa7_q90": float(np.quantile(ratios, 0.9)),
        "kappa7_max": float(np.max(ratios)),
    }


def tail_sum(eigs: np.ndarray, start: float) -> float:
    i0 = max(1, math.ceil(start))
    return float(np.sum(eigs[i0 - 1 :]))


# -- 10: directional gain ---------------------------------------------------------

def spiked_profile(d: int = 32, spike: float = 100.0) -> SpectrumProfile:
    lam = np.ones(d)
    lam[0] = spike
    return SpectrumProfile.diagonal(lam)


def directional_gain_trial(prof: SpectrumProfile, big_n: int, u: np.ndarray, seed, delta: float) -> dict:
    x = gen_gaussian(prof, big_n, seed)
    f = fit(x, EstimatorConfig(delta=delta, seed=0))
    cov = prof.covariance()
    sample = x.data.T @ x.data / big_n
    s2 = float(u @ cov @ u)
    return {
        "dir_error": abs(f.query(u).value - s2),
        "opcov_error": float(np.linalg.norm(sample - cov, 2)),
        "sample_dir_error": abs(float(u @ sample @ u) - s2),
    }


@_timed("AC10 directional gain", 300.0)
def ac10_directional_gain(trials: int = 100, d: int = 32, big_n: int = 8192, seed: int = 0):
    prof = spiked_profile(d)
    u = np.eye(d)[-1]
    rows = [directional_gain_trial(prof, big_n, u, make_rng(seed, "ac10", t), math.exp(-8)) for t in range(trials)]
    de = float(np.median([r["dir_error"] for r in rows]))
    op = float(np.median([r["opcov_error"] for r in rows]))
    return de <= 0.1 * op, {"median_dir_error": de, "median_opcov_error": op, "gain_ratio": de / op}


# -- 11: X_mu invariants ----------------------------------------------------------

@_timed("AC11 mixed adversary invariants", 120.0)
def ac11_xmu(big_n: int = 1_000_000, d: int = 16, head_dim: int = 4, n_ref: int = 1000, seed: int = 0):
    spec = MixedAdversarySpec.from_profile(SpectrumProfile.power_law(d), head_dim, n_ref)
    x = gen_mixed_adversary(spec, big_n, make_rng(seed, "ac11")).data
    proj = x @ spec.u
    exact = bool(np.all(proj * proj == spec.sigma_u ** 2))
    y = spec.tail_basis.coords(x)
    nrm2 = np.einsum("ij,ij->i", y, y)
    emp_tr = float(nrm2.mean())
    se_tr = float(nrm2.std(ddof=1) / math.sqrt(big_n))
    trace_ok = emp_tr <= spec.tail_trace + 5.0 * se_tr
    prod = proj[:, None] * y
    mean = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(big_n)
    z = np.abs(mean - spec.mu) / se
    mu_ok = bool(np.all(z <= 3.0))
    return exact and trace_ok and mu_ok, {
        "marginal_exact": exact,
        "tail_trace_emp": emp_tr,
        "tail_trace": spec.tail_trace,
        "trace_z": (emp_tr - spec.tail_trace) / se_tr,
        "mu_max_z": float(z.max()),
    }


ALL = (
    ac1_identities,
    ac2_scalar_rate,
    ac3_three_point,
    ac4_oracle_sandwich,
    ac5_subspace,
    ac6_tail_rate,
    ac7_head_mom,
    ac8_gamma,
    ac9_cross,
    ac10_directional_gain,
    ac11_xmu,
)

"""Acceptance criteria A1-A12.

Each test prints one ``A<k> PASS|FAIL`` line (also collected into the terminal
summary by conftest) and then asserts the criterion at its stated tolerance.
Experiments that several checks share run once per module.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lrmr import analysis, bench, matcore, measops
from lrmr import rng
from lrmr.measops import make_ensemble
from lrmr.solvers import default_regularization, solve_dantzig, solve_lasso

SOLVERS = ("dantzig", "lasso")


def report(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


# -- A1 identity closed form --------------------------------------------------------

def test_a1_identity_closed_form():
    t0 = time.perf_counter()
    n, sigma = 20, 0.5
    lam = default_regularization(n, n, sigma, "dantzig")
    m_true = matcore.random_low_rank(n, n, 2, [40.0, 30.0], seed=101)
    z = sigma * rng.normals(rng.stream(102), n * n)
    op = make_ensemble("identity", n, n, n * n)
    y = op.apply(m_true) + z
    target = matcore.svt(matcore.unvec(y, n, n), lam)
    scale = max(1.0, np.linalg.norm(target))
    err_ds = np.linalg.norm(solve_dantzig(op, y, lam).estimate - target) / scale
    err_l = np.linalg.norm(solve_lasso(op, y, lam).estimate - target) / scale
    wall = time.perf_counter() - t0
    ok = err_ds <= 1e-4 and err_l <= 1e-4 and wall < 5
    report("A1", ok, f"rel err dantzig={err_ds:.2e} lasso={err_l:.2e} (<=1e-4), "
                     f"{wall:.1f}s (<5s)")
    assert ok


# -- A2 noiseless exact recovery ------------------------------------------------------

def test_a2_noiseless_recovery():
    t0 = time.perf_counter()
    spec = bench.ExperimentSpec(name="a2", n1=30, n2=30, m_values=[300], rank_values=[2],
                                sigma_values=[0.0], solver="both", trials_per_cell=10,
                                master_seed=2002)
    rep = bench.run_sweep(spec)
    wall = time.perf_counter() - t0
    good = {s: sum(np.sqrt(r["err_fro_sq"] / r["fro_sq_true"]) <= 1e-3
                   for r in rep.records if r["solver"] == s) for s in SOLVERS}
    ok = all(v >= 9 for v in good.values()) and wall < 120
    report("A2", ok, f"runs within 1e-3: dantzig {good['dantzig']}/10, lasso {good['lasso']}/10 "
                     f"(>=9), {wall:.0f}s (<120s)")
    assert ok


# -- A3 minimax-order error --------------------------------------------------------

A3_SIGMAS = [1e-3, 1e-2, 1e-1]


@pytest.fixture(scope="module")
def a3_sweep():
    t0 = time.perf_counter()
    # flat spectrum at 100 keeps sigma/sigma_r <= 1e-3 on the whole sweep
    spec = bench.ExperimentSpec(name="a3", n1=30, n2=30, m_values=[6 * 30 * 2], rank_values=[2],
                                sigma_values=A3_SIGMAS, spectrum_rule="flat",
                                spectrum_scale=100.0, solver="both", trials_per_cell=20,
                                master_seed=3003)
    rep = bench.run_sweep(spec)
    return rep, time.perf_counter() - t0


def test_a3_minimax_order(a3_sweep):
    rep, wall = a3_sweep
    parts, ok = [], wall < 600
    for s in SOLVERS:
        recs = [r for r in rep.records if r["solver"] == s]
        worst = max(r["ratio_minimax"] for r in recs)
        med_ratio = [np.median([r["ratio_minimax"] for r in recs if r["sigma"] == sg])
                     for sg in A3_SIGMAS]
        med_err = [np.median([r["err_fro_sq"] for r in recs if r["sigma"] == sg])
                   for sg in A3_SIGMAS]
        spread = max(med_ratio) / min(med_ratio)
        slope = np.polyfit(np.log10(A3_SIGMAS), np.log10(med_err), 1)[0]
        ok &= worst <= 50 and spread <= 4 and abs(slope - 2.0) <= 0.2
        parts.append(f"{s}: max ratio={worst:.1f} (<=50), median spread={spread:.2f} (<=4), "
                     f"slope={slope:.3f} (2+-0.2)")
    report("A3", ok, "; ".join(parts) + f"; {wall:.0f}s (<600s)")
    assert ok


# -- A4 oracle adaptivity ---------------------------------------------------------

A4_SIGMAS = [1e-4, 1e-3, 1e-2, 1e-1]


def test_a4_oracle_adaptivity():
    t0 = time.perf_counter()
    n, r = 30, 15
    spec = bench.ExperimentSpec(name="a4", n1=n, n2=n, m_values=[3600], rank_values=[r],
                                sigma_values=A4_SIGMAS, spectrum_rule="geometric:0.5",
                                solver="both", trials_per_cell=3, master_seed=4004)
    rep = bench.run_sweep(spec)
    wall = time.perf_counter() - t0
    noisy = max(A4_SIGMAS)
    flat_ref = n * r * noisy ** 2
    ideal_noisy = rep.records[[x["sigma"] for x in rep.records].index(noisy)]["ideal_risk"]
    gain = flat_ref / ideal_noisy
    ok, parts = wall < 600 and gain >= 5, []
    for s in SOLVERS:
        recs = [x for x in rep.records if x["solver"] == s]
        worst = max(x["ratio_ideal"] for x in recs)
        at_noisy = max(x["ratio_ideal"] for x in recs if x["sigma"] == noisy)
        flat_ratio = max(x["err_fro_sq"] / flat_ref for x in recs if x["sigma"] == noisy)
        ok &= worst <= 100
        parts.append(f"{s}: max err/ideal={worst:.1f} (<=100), at sigma={noisy:g} "
                     f"err/ideal={at_noisy:.2f} vs err/flat={flat_ratio:.3f}")
    report("A4", ok, "; ".join(parts) + f"; flat-rank/ideal reference ratio={gain:.2f} (>=5); "
                     f"{wall:.0f}s (<600s)")
    assert ok


# -- A5 full-rank bound -------------------------------------------------------------

def test_a5_full_rank_bound():
    t0 = time.perf_counter()
    n, sigma, rbar = 30, 1e-2, 10
    spec = bench.ExperimentSpec(name="a5", n1=n, n2=n, m_values=[900], rank_values=[n],
                                sigma_values=[sigma], spectrum_rule="geometric:0.7",
                                solver="both", trials_per_cell=10, master_seed=5005)
    rep = bench.run_sweep(spec)
    wall = time.perf_counter() - t0
    s = bench.spectrum_values("geometric:0.7", n)
    bound = 100 * (np.sum(np.minimum(s[:rbar] ** 2, n * sigma ** 2)) + np.sum(s[rbar:] ** 2))
    ok, parts = wall < 300, []
    for sol in SOLVERS:
        worst = max(x["err_fro_sq"] for x in rep.records if x["solver"] == sol)
        ok &= worst <= bound
        parts.append(f"{sol}: max err={worst:.4f}")
    report("A5", ok, "; ".join(parts) + f" (bound {bound:.4f}); {wall:.0f}s (<300s)")
    assert ok


# -- A6 concentration --------------------------------------------------------------

def test_a6_concentration():
    t0 = time.perf_counter()
    m, t = 500, 0.5
    x = matcore.random_low_rank(8, 8, 2, [0.8, 0.6], seed=6)
    tail = analysis.concentration_check("gaussian", 8, 8, m, x, t, 2000, seed=6006)
    bound = analysis.concentration_bound(m, t)
    wall = time.perf_counter() - t0
    ok = tail <= 2 * bound and wall < 60
    report("A6", ok, f"empirical tail={tail:.4g} <= 2*bound={2 * bound:.3g}, {wall:.1f}s (<60s)")
    assert ok


# -- A7 isometry estimates ---------------------------------------------------------

def test_a7_isometry_estimates():
    ident = make_ensemble("identity", 20, 20, 400)
    d_ident = analysis.empirical_delta(ident, 1, 50, 10, seed=7).delta_hat
    op = make_ensemble("gaussian", 20, 20, 2400, seed=7007)
    d1 = analysis.empirical_delta(op, 1, 500, 50, seed=7008).delta_hat
    theta = analysis.parallelogram_check(op, 1, 1, 500, seed=7009)
    ok = d_ident <= 1e-10 and d1 <= 0.5 and theta <= d1 + 0.1
    report("A7", ok, f"identity delta={d_ident:.1e} (<=1e-10), gaussian delta_1={d1:.3f} "
                     f"(<=0.5), parallelogram max={theta:.3f} (<= delta+0.1)")
    assert ok


# -- A8 adjoint and duality ----------------------------------------------------------

def test_a8_adjoint_and_duality():
    g = np.random.default_rng(8)
    ops = [make_ensemble("gaussian", 6, 5, 17, seed=1), make_ensemble("bernoulli", 6, 5, 17, seed=2),
           make_ensemble("entry_mask", 6, 5, 17, seed=3), make_ensemble("identity", 6, 5, 30),
           measops.dense_rows(g.standard_normal((17, 6, 5)))]
    worst_adj, worst_dual = 0.0, -np.inf
    for op in ops:
        for _ in range(200):
            x = g.standard_normal((6, 5))
            q = g.standard_normal(op.m)
            lhs = op.apply(x) @ q
            gap = abs(lhs - matcore.inner(x, op.adjoint(q))) / max(1.0, abs(lhs))
            worst_adj = max(worst_adj, gap)
            y = g.standard_normal((6, 5))
            worst_dual = max(worst_dual, matcore.inner(x, y) - matcore.norm(x, "nuclear")
                             * matcore.norm(y, "operator"))
    ok = worst_adj <= 1e-10 and worst_dual <= 1e-8
    report("A8", ok, f"max adjoint gap={worst_adj:.1e} (<=1e-10), "
                     f"max <X,Y> - ||X||_*||Y|| = {worst_dual:.2f} (<=1e-8)")
    assert ok


# -- A9 fixed-design minimax ----------------------------------------------------------

def test_a9_fixed_design_minimax():
    sigma = 0.3
    ident = analysis.fixed_design_minimax(np.eye(7), sigma)
    d = np.array([0.5, 1.0, 2.0, 4.0])
    diag = analysis.fixed_design_minimax(np.diag(d), sigma)
    wide = analysis.fixed_design_minimax(np.ones((3, 5)), sigma)
    ok = ident == 7 * sigma ** 2 and abs(diag - sigma ** 2 * np.sum(d ** -2.0)) <= 1e-10 \
        and wide == np.inf
    report("A9", ok, f"identity={ident!r} (=n sigma^2={7 * sigma ** 2!r}), diagonal gap="
                     f"{abs(diag - sigma ** 2 * np.sum(d ** -2.0)):.1e}, m<n -> {wide}")
    assert ok


# -- A10 noise dual norm ---------------------------------------------------------------

def test_a10_noise_dual_norm():
    n, m = 50, 400
    ratios = [analysis.noise_dual_norm_ratio(make_ensemble("gaussian", n, n, m, seed=10_000 + t),
                                             1.0, 1, seed=t)
              for t in range(100)]
    hits = sum(r <= 8 for r in ratios)
    ok = hits == 100
    report("A10", ok, f"{hits}/100 trials with ||A*(z)||/(sqrt(n) sigma) <= 8 "
                      f"(max {max(ratios):.2f})")
    assert ok


# -- A11 NNQ scaling -----------------------------------------------------------------

def test_a11_nnq_scaling():
    t0 = time.perf_counter()
    n = 16
    small = analysis.nnq_alpha(make_ensemble("gaussian", n, n, 64, seed=11_064), 20, seed=111)
    large = analysis.nnq_alpha(make_ensemble("gaussian", n, n, 256, seed=11_256), 20, seed=112)
    wall = time.perf_counter() - t0
    positive = len(small.values) == 20 and min(small.values) > 0
    ratio = small.alpha_hat / large.alpha_hat
    ok = positive and 1.3 <= ratio <= 3 and wall < 600
    report("A11", ok, f"alpha(16,64)={small.alpha_hat:.4g} positive on "
                      f"{sum(v > 0 for v in small.values)}/20 probes, alpha(16,256)="
                      f"{large.alpha_hat:.4g} ({len(large.excluded)} excluded), ratio={ratio:.2f} "
                      f"(in [1.3, 3]), {wall:.0f}s (<600s)")
    assert ok


# -- A12 covering lemma ----------------------------------------------------------------

def test_a12_covering_net():
    eps = 0.9
    net = analysis.low_rank_net(2, 1, eps)
    flat = net.reshape(len(net), -1)
    g = np.random.default_rng(12)
    worst = 0.0
    for _ in range(1000):
        p = np.outer(g.standard_normal(2), g.standard_normal(2))
        p /= np.linalg.norm(p)
        worst = max(worst, np.min(np.linalg.norm(flat - p.ravel(), axis=1)))
    bound = analysis.low_rank_net_bound(2, 2, 1, eps)
    ok = worst <= eps and len(net) <= bound
    report("A12", ok, f"worst probe distance={worst:.3f} (<={eps}), net size={len(net)} "
                      f"(<= {bound:.0f})")
    assert ok

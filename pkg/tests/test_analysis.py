import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrmr import analysis, matcore, measops
from lrmr.errors import NumericalError, ResourceLimitError
from lrmr.measops import make_ensemble
from oracles import brute_min_rank_penalty


# -- isometry constants ----------------------------------------------------------

def test_delta_identity_and_zero():
    ident = make_ensemble("identity", 5, 4, 20)
    assert analysis.empirical_delta(ident, 2, 30, 10, seed=1).delta_hat <= 1e-10
    zero = measops.dense_rows(np.zeros((6, 5, 4)))
    assert analysis.empirical_delta(zero, 1, 5, 5, seed=1).delta_hat == pytest.approx(1.0)


def test_delta_nested_seeds_monotone():
    op = make_ensemble("gaussian", 6, 6, 40, seed=2)
    small = analysis.empirical_delta(op, 1, 10, 5, seed=3)
    large = analysis.empirical_delta(op, 1, 25, 5, seed=3)
    assert large.per_trial[:10] == small.per_trial
    assert large.delta_hat >= small.delta_hat


def test_ascent_does_not_lower_the_estimate():
    op = make_ensemble("gaussian", 6, 6, 40, seed=2)
    raw = analysis.empirical_delta(op, 2, 20, 0, seed=4)
    refined = analysis.empirical_delta(op, 2, 20, 20, seed=4)
    assert all(b >= a - 1e-15 for a, b in zip(raw.per_trial, refined.per_trial))


def test_concentration_examples():
    x = np.zeros((3, 3))
    x[0, 0] = 1.0
    assert analysis.concentration_check("identity", 3, 3, 9, x, 0.1, 5, seed=0) == 0.0
    assert analysis.concentration_check("gaussian", 3, 3, 2000, x, 0.95, 100, seed=0) == 0.0
    assert analysis.concentration_bound(500, 0.5) == pytest.approx(
        2 * np.exp(-250 * (0.125 - 0.125 / 3)))
    with pytest.raises(ValueError):
        analysis.concentration_check("gaussian", 3, 3, 10, 2 * x, 0.5, 5)


def test_parallelogram_identity_and_gaussian():
    ident = make_ensemble("identity", 6, 6, 36)
    assert analysis.parallelogram_check(ident, 1, 2, 50, seed=0) <= 1e-10
    op = make_ensemble("gaussian", 8, 8, 6 * 8 * 2, seed=5)
    theta = analysis.parallelogram_check(op, 1, 1, 100, seed=1)
    delta = analysis.empirical_delta(op, 2, 100, 20, seed=2).delta_hat
    assert theta <= delta + 0.1
    with pytest.raises(ValueError):
        analysis.parallelogram_check(op, 5, 4, 1)


# -- covering nets ------------------------------------------------------------------

def test_low_rank_net_covers_probes():
    net = analysis.low_rank_net(2, 1, 0.9)
    assert len(net) <= analysis.low_rank_net_bound(2, 2, 1, 0.9) == pytest.approx(1e5)
    assert np.allclose(np.linalg.norm(net, axis=(1, 2)), 1.0, atol=1e-10)
    assert all(np.linalg.matrix_rank(x) == 1 for x in net)
    g = np.random.default_rng(0)
    flat = net.reshape(len(net), -1)
    for _ in range(1000):
        u, v = g.standard_normal(2), g.standard_normal(2)
        p = np.outer(u, v)
        p /= np.linalg.norm(p)
        assert np.min(np.linalg.norm(flat - p.ravel(), axis=1)) <= 0.9


def test_low_rank_net_guard():
    with pytest.raises(ResourceLimitError):
        analysis.low_rank_net(4, 1, 0.9)
    with pytest.raises(ResourceLimitError):
        analysis.low_rank_net(2, 1, 0.5)


# -- oracle estimator and risk ------------------------------------------------------

def test_oracle_estimator_projection():
    op = make_ensemble("identity", 2, 2, 4)
    m_true = np.diag([2.0, 1.0])
    est = analysis.oracle_estimator(op, op.apply(m_true), np.array([[1.0], [0.0]]))
    assert np.allclose(est, np.diag([2.0, 0.0]))
    assert np.linalg.norm(est - m_true) ** 2 == pytest.approx(1.0)
    full = analysis.oracle_estimator(op, op.apply(m_true), np.eye(2))
    assert np.allclose(full, m_true)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_oracle_bias_is_orthogonal_to_column_space(seed):
    g = np.random.default_rng(seed)
    m_true = g.standard_normal((5, 4))
    u = np.linalg.qr(g.standard_normal((5, 2)))[0]
    op = make_ensemble("identity", 5, 4, 20)
    bias = m_true - analysis.oracle_estimator(op, op.apply(m_true), u)
    assert np.abs(u.T @ bias).max() <= 1e-10


def test_oracle_variance_within_isometry_band():
    n, r, sigma = 12, 2, 0.1
    op = make_ensemble("gaussian", n, n, 400, seed=3)
    u = np.linalg.qr(np.random.default_rng(1).standard_normal((n, r)))[0]
    var = analysis.oracle_variance(op, u, sigma)
    design = analysis._oracle_design(op, u)
    ev = np.linalg.eigvalsh(design.T @ design)
    delta = max(1 - ev.min(), ev.max() - 1)
    assert n * r * sigma ** 2 / (1 + delta) <= var <= n * r * sigma ** 2 / (1 - delta)


def test_oracle_estimator_singular_design():
    op = make_ensemble("gaussian", 4, 4, 3, seed=0)
    with pytest.raises(NumericalError):
        analysis.oracle_estimator(op, np.ones(3), np.eye(4)[:, :1])


def test_ideal_oracle_risk():
    assert analysis.ideal_oracle_risk(np.diag([3.0, 1.0]), 0.0) == 0.0
    assert analysis.ideal_oracle_risk(np.diag([3.0, 1.0]), np.sqrt(2.0), n=2) == pytest.approx(5.0)
    small = np.diag([0.1, 0.05])
    assert analysis.ideal_oracle_risk(small, 1.0) == pytest.approx(np.sum(small ** 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_ideal_risk_upper_bounds(seed, sigma):
    m_true = np.random.default_rng(seed).standard_normal((4, 6))
    risk = analysis.ideal_oracle_risk(m_true, sigma)
    assert risk <= min(np.sum(m_true ** 2), 6 * 4 * sigma ** 2) + 1e-12


def test_oracle_report_ratio():
    m_true = np.diag([3.0, 1.0, 0.0])
    rep = analysis.oracle_report(m_true, np.diag([2.5, 0.0, 0.0]), 0.5)
    assert rep.ratio == pytest.approx(rep.achieved_err / rep.ideal_risk)
    # sqrt(n) sigma = 0.87: both nonzero directions are kept, so no bias
    assert rep.bias_sq == 0.0
    assert rep.variance == pytest.approx(3 * 2 * 0.25)
    noisy = analysis.oracle_report(m_true, np.zeros((3, 3)), 1.0)
    assert noisy.bias_sq == pytest.approx(1.0)
    assert noisy.variance == pytest.approx(3 * 1 * 1.0)


# -- K-functional and hard thresholding ----------------------------------------------

def test_k_functional_examples():
    op = make_ensemble("gaussian", 5, 5, 40, seed=1)
    m_true = matcore.random_low_rank(5, 5, 2, [2.0, 1.0], seed=2)
    assert analysis.k_functional(m_true, m_true, op, 0.3) == pytest.approx(0.6)
    am = op.apply(m_true)
    assert analysis.k_functional(np.zeros((5, 5)), m_true, op, 0.3) == pytest.approx(am @ am)


def test_hard_threshold_examples():
    m_true = np.diag([3.0, 1.0])
    assert np.allclose(analysis.hard_threshold(m_true, 0.0), m_true)
    assert np.allclose(analysis.hard_threshold(m_true, 3.0), 0.0)
    assert np.allclose(analysis.hard_threshold(m_true, 2.0), np.diag([3.0, 0.0]))
    assert np.allclose(analysis.hard_threshold(m_true, 1.0), np.diag([3.0, 0.0]))


def test_hard_threshold_bound_on_k():
    n, lam = 10, 0.5
    op = make_ensemble("gaussian", n, n, 500, seed=4)
    m_true = matcore.random_low_rank(n, n, 5, [2.0, 1.0, 0.6, 0.3, 0.1], seed=5)
    delta = analysis.empirical_delta(op, 5, 100, 20, seed=6).delta_hat
    m0 = analysis.hard_threshold(m_true, lam)
    k = analysis.k_functional(m0, m_true, op, analysis.default_gamma(lam))
    s = matcore.singular_values(m_true)
    assert k <= (1 + delta) * np.sum(np.minimum(lam ** 2, s ** 2))


def test_hard_threshold_family_minimizer_identity():
    # on an exact isometry K(HT_t) = gamma * #{s > t} + sum_{s <= t} s^2, so
    # within the hard-threshold family the minimizer cuts at sqrt(gamma)
    n, lam = 6, 0.7
    op = make_ensemble("identity", n, n, n * n)
    m_true = matcore.random_low_rank(n, n, 5, [2.0, 0.9, 0.5, 0.3, 0.1], seed=8)
    s = matcore.singular_values(m_true)
    family = sorted(set([0.0] + s.tolist()))
    for gamma in (lam ** 2, analysis.default_gamma(lam)):
        brute = brute_min_rank_penalty(m_true, measops.to_dense(op), gamma, family)
        best = analysis.k_functional(analysis.hard_threshold(m_true, np.sqrt(gamma)),
                                     m_true, op, gamma)
        assert best == pytest.approx(min(brute), abs=1e-12)


def test_hard_threshold_family_minimum_below_comparison_point():
    n, lam = 8, 0.7
    op = make_ensemble("gaussian", n, n, 300, seed=7)
    m_true = matcore.random_low_rank(n, n, 4, [2.0, 0.9, 0.5, 0.2], seed=8)
    gamma = analysis.default_gamma(lam)
    s = matcore.singular_values(m_true)
    family = sorted(set([0.0] + s.tolist()))
    brute = brute_min_rank_penalty(m_true, measops.to_dense(op), gamma, family)
    k0 = analysis.k_functional(analysis.hard_threshold(m_true, lam), m_true, op, gamma)
    assert min(brute) <= k0 + 1e-12
    assert k0 == pytest.approx(brute[family.index(s[2])], rel=1e-12)


# -- minimax formulas ------------------------------------------------------------------

def test_minimax_lower_bound():
    assert analysis.minimax_lower_bound(30, 2, 0.1, 0.0) == pytest.approx(0.6)
    assert analysis.minimax_lower_bound(30, 2, 0.1, 0.2) == pytest.approx(0.5)
    vals = [analysis.minimax_lower_bound(10, 3, 1.0, d) for d in np.linspace(0, 0.9, 10)]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        analysis.minimax_lower_bound(10, 3, 1.0, 1.0)


def test_fixed_design_minimax():
    sigma = 0.7
    assert analysis.fixed_design_minimax(np.eye(6), sigma) == 6 * sigma ** 2
    d = np.array([0.5, 2.0, 3.0])
    assert analysis.fixed_design_minimax(np.diag(d), sigma) == pytest.approx(
        sigma ** 2 * np.sum(d ** -2.0), abs=1e-10)
    assert analysis.fixed_design_minimax(np.ones((2, 3)), sigma) == float("inf")
    assert analysis.fixed_design_minimax(np.diag([1.0, 0.0]), sigma) == float("inf")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_fixed_design_rotation_invariance(seed):
    g = np.random.default_rng(seed)
    a = g.standard_normal((5, 4))
    u = np.linalg.qr(g.standard_normal((9, 5)))[0]
    assert analysis.fixed_design_minimax(u @ a, 1.3) == pytest.approx(
        analysis.fixed_design_minimax(a, 1.3), rel=1e-9)


# -- NNQ and noise level ---------------------------------------------------------------

def test_nnq_identity_bounds():
    n = 4
    op = make_ensemble("identity", n, n, n * n)
    est = analysis.nnq_alpha(op, 10, seed=0)
    assert not est.excluded
    assert 1 / np.sqrt(n) - 1e-12 <= est.alpha_hat <= 1.0


def test_nnq_gaussian_positive():
    op = make_ensemble("gaussian", 6, 6, 20, seed=1)
    est = analysis.nnq_alpha(op, 5, seed=2)
    assert est.alpha_hat > 0 and len(est.values) + len(est.excluded) == 5


def test_noise_ratio():
    op = make_ensemble("gaussian", 10, 10, 80, seed=1)
    a = analysis.noise_dual_norm_ratio(op, 0.1, 20, seed=3)
    b = analysis.noise_dual_norm_ratio(op, 10.0, 20, seed=3)
    assert a == pytest.approx(b, rel=1e-12)
    zero = measops.dense_rows(np.zeros((5, 3, 3)))
    assert analysis.noise_dual_norm_ratio(zero, 1.0, 5) == 0.0

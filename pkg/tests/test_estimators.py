import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from kdre import condlab
from kdre.estimators import (
    KULLBACK_LEIBLER,
    SQUARED,
    DomainError,
    RatioModel,
    empirical_l2_error,
    fit_kulsif,
    kl_feasible_start,
    kmm_inductive_objective,
    kulsif_fit_direct,
    kulsif_objective,
    mest_objective,
    psi_custom,
    rkulsif_objective,
)
from kdre.kernelcore import GramBlocks, InputError, KernelSpec, cond
from kdre.optimizer import OptimizerConfig, bfgs_minimize, grad_check

from helpers import random_blocks

ONE = GramBlocks(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))


def test_direct_fit_single_pair():
    alpha, beta = kulsif_fit_direct(ONE, 1.0)
    assert alpha[0] == pytest.approx(-0.5, abs=1e-15) and beta.tolist() == [1.0]
    # independent route: scalar minimization of the R-KuLSIF value
    obj = rkulsif_objective(ONE, 1.0)
    res = minimize_scalar(lambda a: obj.value_at(np.array([a])), bracket=(-2, 0), tol=1e-12)
    assert res.x == pytest.approx(-0.5, abs=1e-7)


def test_direct_fit_zero_cross_block():
    _, _, g = random_blocks(0, 6, 4)
    g0 = GramBlocks(g.k11, np.zeros_like(g.k12), g.k22)
    alpha, _ = kulsif_fit_direct(g0, 0.5)
    assert np.array_equal(alpha, np.zeros(6))


def test_direct_fit_matches_bfgs():
    _, _, g = random_blocks(1, 30, 30)
    alpha, _ = kulsif_fit_direct(g, 0.3)
    tr = bfgs_minimize(rkulsif_objective(g, 0.3), np.zeros(30), OptimizerConfig(grad_tol=1e-10))
    assert np.max(np.abs(tr.final_point - alpha)) <= 1e-6


def test_direct_fit_zeroes_rkulsif_gradient():
    _, _, g = random_blocks(2, 25, 18)
    lam = 0.05
    alpha, _ = kulsif_fit_direct(g, lam)
    rhs = g.k12.sum(axis=1) / (g.n * g.m * lam)
    assert np.linalg.norm(rkulsif_objective(g, lam).grad_at(alpha)) <= 1e-8 * np.linalg.norm(rhs)


@pytest.mark.parametrize("lam", [0.0, -1.0, math.nan, math.inf])
def test_bad_lambda(lam):
    with pytest.raises(InputError):
        kulsif_fit_direct(ONE, lam)
    with pytest.raises(InputError):
        rkulsif_objective(ONE, lam)


@given(st.integers(1, 15), st.integers(1, 15), st.floats(1e-3, 10.0), st.integers(0, 1000))
def test_beta_is_exact(n, m, lam, seed):
    x, y, g = random_blocks(seed, n, m)
    model = fit_kulsif(x, y, KernelSpec(1.5), lam)
    assert np.array_equal(model.beta, np.full(m, 1.0 / (m * lam)))


def test_objectives_vanish_at_zero():
    _, _, g = random_blocks(3, 8, 6)
    assert rkulsif_objective(g, 0.2).value_at(np.zeros(8)) == 0.0
    assert kulsif_objective(g, 0.2).value_at(np.zeros(8)) == 0.0


@pytest.mark.parametrize("builder", [rkulsif_objective, kulsif_objective, kmm_inductive_objective])
def test_gradients_match_finite_differences(builder):
    _, _, g = random_blocks(4, 10, 10)
    rng = np.random.default_rng(0)
    obj = builder(g, 0.1)
    assert grad_check(obj, [rng.standard_normal(10) for _ in range(10)]).max_rel_error <= 1e-6


@given(st.integers(2, 30), st.integers(2, 30), st.sampled_from([1e-2, 1e-1, 1.0]), st.integers(0, 10**6))
def test_kulsif_gradient_is_k11_times_rkulsif(n, m, lam, seed):
    _, _, g = random_blocks(seed, n, m)
    alpha = np.random.default_rng(seed).standard_normal(n)
    gk = kulsif_objective(g, lam).grad_at(alpha)
    gr = g.k11 @ rkulsif_objective(g, lam).grad_at(alpha)
    assert np.max(np.abs(gk - gr)) <= 1e-10 * max(np.max(np.abs(gk)), 1e-300)


def test_shared_minimizer_of_three_formulations():
    _, _, g = random_blocks(5, 20, 20, sigma=1.0)
    lam = 0.1
    assert np.linalg.eigvalsh(g.k11)[0] > 1e-8
    alpha, _ = kulsif_fit_direct(g, lam)
    for builder, tol in ((rkulsif_objective, 1e-9), (kulsif_objective, 1e-9), (kmm_inductive_objective, 1e-12)):
        tr = bfgs_minimize(builder(g, lam), np.zeros(20), OptimizerConfig(grad_tol=tol))
        assert np.max(np.abs(tr.final_point - alpha)) <= 1e-5, builder.__name__


def test_kmm_value_vanishes_at_direct_fit():
    _, _, g = random_blocks(6, 15, 12)
    alpha, _ = kulsif_fit_direct(g, 0.2)
    assert abs(kmm_inductive_objective(g, 0.2).value_at(alpha)) <= 1e-10


def test_kmm_kappa_identity():
    _, _, g = random_blocks(7, 20, 20, sigma=0.8)
    lam = 0.05
    h = kmm_inductive_objective(g, lam).hessian
    expected = cond(g.k11) * cond(g.k11 / 20 + lam * np.eye(20)) ** 2
    assert cond(h) == pytest.approx(expected, rel=1e-8)


def test_mest_squared_differs_from_kulsif_by_constant():
    _, _, g = random_blocks(8, 12, 9)
    rng = np.random.default_rng(1)
    mest = mest_objective(g, 0.3, SQUARED)
    kul = kulsif_objective(g, 0.3)
    diffs = [mest.value_at(a) - kul.value_at(a) for a in (rng.standard_normal(12) for _ in range(5))]
    assert max(diffs) - min(diffs) <= 1e-10


@given(st.integers(2, 25), st.integers(2, 25), st.integers(0, 10**6))
def test_mest_squared_gradient_equals_kulsif(n, m, seed):
    _, _, g = random_blocks(seed, n, m)
    alpha = np.random.default_rng(seed).standard_normal(n)
    a = mest_objective(g, 0.2, SQUARED).grad_at(alpha)
    b = kulsif_objective(g, 0.2).grad_at(alpha)
    assert np.max(np.abs(a - b)) <= 1e-10 * max(np.max(np.abs(b)), 1e-300)


def test_mest_kl_gradient_fd():
    _, _, g = random_blocks(9, 15, 15)
    lam = 0.1
    pts = condlab.kl_random_alphas(g, lam, 5, np.random.default_rng(2))
    obj = mest_objective(g, lam, KULLBACK_LEIBLER)
    assert grad_check(obj, pts).max_rel_error <= 1e-5


def test_mest_kl_domain_error_names_index():
    _, _, g = random_blocks(10, 6, 6)
    lam = 0.1
    obj = mest_objective(g, lam, KULLBACK_LEIBLER)
    # fitted values at X: positive at index 3, negative elsewhere
    target = -np.ones(6)
    target[3] = 0.5
    alpha = condlab.alpha_for_values(g, lam, target)
    with pytest.raises(DomainError) as info:
        obj.value_at(alpha)
    assert info.value.index == 3
    with pytest.raises(DomainError):
        obj.grad_at(alpha)


def test_kl_feasible_start():
    _, _, g = random_blocks(11, 20, 20)
    lam = 0.1
    alpha = kl_feasible_start(g, lam)
    w = condlab.fitted_values_at_x(g, lam, alpha)
    assert np.all(w < 0)
    assert math.isfinite(mest_objective(g, lam, KULLBACK_LEIBLER).value_at(alpha))


@given(st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3))
def test_psi_convexity_and_derivatives(z):
    assert SQUARED.psi_double_prime(np.array([z]))[0] == 1.0
    assert SQUARED.psi(np.array([z]))[0] == pytest.approx(z * z / 2)
    if z < 0:
        assert KULLBACK_LEIBLER.in_domain(z)
        assert KULLBACK_LEIBLER.psi(np.array([z]))[0] == pytest.approx(-1 - math.log(-z))
        assert KULLBACK_LEIBLER.psi_prime(np.array([z]))[0] == pytest.approx(-1 / z)
        assert KULLBACK_LEIBLER.psi_double_prime(np.array([z]))[0] == pytest.approx(1 / z**2)
    else:
        assert not KULLBACK_LEIBLER.in_domain(z)


def test_psi_convex_on_samples():
    z = -np.exp(np.random.default_rng(0).uniform(-5, 5, 1000))
    assert np.all(KULLBACK_LEIBLER.psi_double_prime(z) >= 0)
    assert np.all(SQUARED.psi_double_prime(z) >= 0)


def test_psi_custom():
    spec = psi_custom(np.exp, np.exp, np.exp)
    assert spec.kind == "custom" and spec.in_domain(100.0)


def _single_model(alpha, beta):
    pt = np.array([[0.2, -0.1]])
    return RatioModel(np.array([alpha]), np.array([beta]), 1.0, KernelSpec(1.0), pt, pt)


def test_predict_examples():
    assert _single_model(0.0, 0.0).predict([0.2, -0.1]) == 0.0
    assert _single_model(-0.5, 1.0).predict([0.2, -0.1]) == pytest.approx(0.5, abs=1e-15)
    neg = _single_model(-2.0, 1.0)
    assert neg.predict([0.2, -0.1]) < 0 and neg.predict_truncated([0.2, -0.1]) == 0.0


def test_predict_dimension_mismatch():
    with pytest.raises(InputError):
        _single_model(1.0, 1.0).predict([0.0, 0.0, 0.0])


def test_model_rejects_wrong_lengths():
    pt = np.zeros((2, 1))
    with pytest.raises(InputError):
        RatioModel(np.zeros(3), np.zeros(2), 1.0, KernelSpec(1.0), pt, pt)


def test_l2_error_examples():
    pts = np.random.default_rng(0).standard_normal((50, 2))
    model = _single_model(0.0, 0.0)
    assert empirical_l2_error(model, lambda p: 0.0, pts) == 0.0
    # nearly constant model: huge bandwidth makes k == 1 to rounding
    c = 1.7
    x = np.zeros((1, 2))
    const = RatioModel(np.array([c]), np.zeros(1), 1.0, KernelSpec(1e9), x, x)
    assert empirical_l2_error(const, lambda p: 1.0, pts) == pytest.approx(abs(c - 1.0), rel=1e-12)
    with pytest.raises(InputError):
        empirical_l2_error(model, lambda p: 1.0, np.zeros((0, 2)))

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from latentmarkov.logit import (
    difflogit_fgh,
    difflogit_pack,
    difflogit_unpack,
    fit_difflogit,
    fit_multilogit,
    multilogit_fgh,
    newton_maximize,
)


def _numgrad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_multilogit_gradient_and_hessian_by_differences(rng):
    X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
    C = rng.random((20, 4)) * 3
    B = rng.normal(size=(3, 3))
    for ref in range(4):
        f, g, H = multilogit_fgh(X, C, B, ref)
        fun = lambda th: multilogit_fgh(X, C, th.reshape(3, 3), ref)[0]
        np.testing.assert_allclose(g, _numgrad(fun, B.ravel()), rtol=1e-6, atol=1e-6)
        gfun = lambda th: multilogit_fgh(X, C, th.reshape(3, 3), ref)[1]
        Hn = np.column_stack([_numgrad(lambda th: gfun(th)[i], B.ravel()) for i in range(9)]).T
        np.testing.assert_allclose(H, Hn, rtol=1e-5, atol=1e-5)


def test_intercept_only_equals_count_ratios():
    C = np.array([[3.0, 5.0, 2.0], [1.0, 0.5, 4.0]])
    X = np.ones((2, 1))
    B, info = fit_multilogit(X, C, np.zeros((1, 2)))
    tot = C.sum(axis=0)
    np.testing.assert_allclose(B[0], np.log(tot[1:] / tot[0]), atol=1e-8)
    assert info.converged and not info.capped


def _irls_logistic(x, w1, w0, iters=100):
    """Plain IRLS for a weighted binary logit with intercept."""
    X = np.column_stack([np.ones_like(x), x])
    n = w1 + w0
    beta = np.zeros(2)
    for _ in range(iters):
        p = expit(X @ beta)
        W = n * p * (1 - p)
        z = X @ beta + (w1 - n * p) / W
        beta = np.linalg.solve(X.T @ (W[:, None] * X), X.T @ (W * z))
    return beta


def test_two_pattern_logit_matches_irls():
    x = np.array([0.0, 1.0])
    w1, w0 = np.array([2.5, 7.0]), np.array([6.0, 3.5])
    X = np.column_stack([np.ones(2), x])
    B, _ = fit_multilogit(X, np.column_stack([w0, w1]), np.zeros((2, 1)))
    np.testing.assert_allclose(B[:, 0], _irls_logistic(x, w1, w0), atol=1e-6)


def test_multilogit_matches_generic_optimizer(rng):
    X = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
    C = rng.random((50, 3)) * 2
    B, _ = fit_multilogit(X, C, np.zeros((3, 2)), reference=1)

    def nll(th):
        eta = np.insert(X @ th.reshape(3, 2), 1, 0.0, axis=1)
        return -np.sum(C * (eta - logsumexp(eta, axis=1, keepdims=True)))

    ref = minimize(nll, np.zeros(6), method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(B.ravel(), ref.x, atol=1e-5)


def test_separation_hits_cap():
    X = np.ones((1, 1))
    C = np.array([[5.0, 0.0]])
    B, info = fit_multilogit(X, C, np.zeros((1, 1)))
    assert info.capped and B[0, 0] == pytest.approx(-50.0)


def test_difflogit_pack_round_trip(rng):
    k, p = 3, 2
    th = rng.normal(size=k * (k - 1) + (k - 1) * p)
    G0, G1 = difflogit_unpack(th, k, p)
    assert np.all(np.diag(G0) == 0) and np.all(G1[0] == 0)
    np.testing.assert_array_equal(difflogit_pack(G0, G1), th)


def test_difflogit_gradient_hessian_and_fit(rng):
    k, p, m = 3, 2, 40
    X = rng.normal(size=(m, p))
    C = rng.random((m, k, k)) * 2
    th = rng.normal(size=k * (k - 1) + (k - 1) * p) * 0.3
    f, g, H = difflogit_fgh(X, C, th, k)
    np.testing.assert_allclose(g, _numgrad(lambda t: difflogit_fgh(X, C, t, k)[0], th), rtol=1e-6, atol=1e-6)
    Hn = np.column_stack([_numgrad(lambda t: difflogit_fgh(X, C, t, k)[1][i], th) for i in range(len(th))]).T
    np.testing.assert_allclose(H, Hn, rtol=1e-5, atol=1e-5)
    est, info = fit_difflogit(X, C, np.zeros_like(th), k)
    ref = minimize(lambda t: -difflogit_fgh(X, C, t, k)[0], np.zeros_like(th), method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(est, ref.x, atol=1e-5)
    assert info.converged


def test_newton_concave_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -2.0])
    x, f, info = newton_maximize(lambda x: (-0.5 * x @ A @ x + b @ x, b - A @ x, -A), np.zeros(2))
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-12)
    assert info.converged and info.iterations <= 3


def test_joint_transition_rows_match_row_by_row_fits(rng):
    from latentmarkov.logit import fit_transition_rows, transition_rows_fgh

    k, m = 3, 60
    Z = np.column_stack([np.ones(m), rng.normal(size=(m, 2))])
    C = rng.random((m, k, k)) * 2
    Ga = rng.normal(size=(k, 3, k - 1)) * 0.3
    f, g, H = transition_rows_fgh(Z, C, Ga)
    th = Ga.ravel()
    fun = lambda t: transition_rows_fgh(Z, C, t.reshape(Ga.shape))
    np.testing.assert_allclose(g, _numgrad(lambda t: fun(t)[0], th), rtol=1e-6, atol=1e-6)
    Hn = np.column_stack([_numgrad(lambda t: fun(t)[1][i], th) for i in range(len(th))]).T
    np.testing.assert_allclose(H, Hn, rtol=1e-5, atol=1e-5)
    joint, info = fit_transition_rows(Z, C, np.zeros_like(Ga))
    assert info.converged
    for a in range(k):
        row, _ = fit_multilogit(Z, C[:, a, :], np.zeros((3, k - 1)), reference=a)
        np.testing.assert_allclose(joint[a], row, atol=1e-8)

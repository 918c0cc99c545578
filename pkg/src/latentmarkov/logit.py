"""Weighted multinomial logit fits by damped Newton iterations.

These solve the M-step problems of the covariate-in-latent model.  The
observations are *weighted* category counts (expected counts from the
E-step), not single responses.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .prob import LOGIT_CAP, log_softmax, small_sum


@dataclass
class NewtonInfo:
    converged: bool = False
    iterations: int = 0
    capped: bool = False
    ridge: bool = False
    grad_norm: float = np.nan
    messages: list = field(default_factory=list)


def _newton_direction(g, H, info):
    A = -H
    try:
        c = linalg.cho_factor(A, check_finite=True)
        return linalg.cho_solve(c, g)
    except (linalg.LinAlgError, ValueError):
        pass
    info.ridge = True
    lam = 1e-8 * max(1.0, float(np.abs(np.diag(A)).max(initial=0.0)))
    eye = np.eye(len(g))
    for _ in range(30):
        try:
            c = linalg.cho_factor(A + lam * eye)
            return linalg.cho_solve(c, g)
        except (linalg.LinAlgError, ValueError):
            lam *= 10
    return g / max(1.0, float(np.abs(g).max()))


def newton_maximize(fun, x0, cap=LOGIT_CAP, maxit=200, step_tol=1e-10, feasible=None, value=None):
    """Maximize a concave function with Newton steps and step halving.

    ``fun(x)`` returns ``(value, gradient, hessian)``; ``value(x)`` (if
    given) returns the value alone and is used during step halving.
    Iterates are clipped to ``[-cap, cap]``.  Convergence is declared when
    the proposed or accepted step has sup-norm at most ``step_tol``, or when no
    improving step exists along the Newton direction.  Divergent
    coefficients (separated data) keep taking steps of order one and end
    up on the cap, which is reported in ``info.capped``.
    """
    value = value or (lambda x: fun(x)[0])
    x = np.array(x0, dtype=float)
    if cap is not None:
        x = np.clip(x, -cap, cap)
    info = NewtonInfo()
    f, g, H = fun(x)
    for it in range(1, maxit + 1):
        info.iterations = it
        step = _newton_direction(g, H, info)
        if float(np.abs(step).max(initial=0.0)) <= step_tol and (cap is None or np.all(np.abs(x) < cap)):
            info.converged = True
            break
        accepted = False
        full = None
        for trial in range(60):
            x_new = x + step
            if cap is not None:
                x_new = np.clip(x_new, -cap, cap)
            if feasible is None or feasible(x_new):
                # the full step is usually accepted, so evaluate everything there
                if trial == 0:
                    full = fun(x_new)
                    f_new = full[0]
                else:
                    f_new = value(x_new)
                if np.isfinite(f_new) and f_new >= f:
                    accepted = True
                    break
            step = step / 2
        if not accepted:
            info.converged = True
            break
        moved = float(np.abs(x_new - x).max(initial=0.0))
        x = x_new
        f, g, H = full if trial == 0 else fun(x)
        if moved <= step_tol:
            info.converged = True
            break
    info.grad_norm = float(np.abs(g).max(initial=0.0))
    if cap is not None and np.any(np.abs(x) >= cap):
        info.capped = True
    return x, f, info


def _insert_ref(eta, reference):
    return np.insert(eta, reference, 0.0, axis=-1)


def multilogit_fgh(X, C, B, reference=0, hessian=True):
    """Value, gradient and Hessian of ``sum C * log p`` for a reference-category logit.

    ``X`` is ``(m, d)``, ``C`` is ``(m, k)`` and ``B`` is ``(d, k-1)``;
    gradient and Hessian are w.r.t. ``B.ravel()``.
    """
    k = B.shape[1] + 1
    others = np.delete(np.arange(k), reference)
    eta = np.zeros((X.shape[0], k))
    eta[:, others] = X @ B
    logP = log_softmax(eta)
    f = float(np.sum(C * logP))
    N = small_sum(C, 1)[:, 0]
    P = np.exp(logP[:, others])
    Cn = C[:, others]
    g = (X.T @ (Cn - N[:, None] * P)).ravel()
    if not hessian:
        return f, g, None
    W = N[:, None, None] * (P[:, :, None] * np.eye(P.shape[1]) - P[:, :, None] * P[:, None, :])
    d, q = B.shape
    H = -np.tensordot(X, X[:, :, None, None] * W[:, None], axes=(0, 0)).transpose(0, 2, 1, 3).reshape(d * q, d * q)
    return f, g, H


def fit_multilogit(X, C, B0, reference=0, cap=LOGIT_CAP, maxit=200):
    """Weighted multinomial logit MLE by Newton, warm-started at ``B0``."""
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    shape = np.shape(B0)
    if shape[1] == 0:
        return np.zeros(shape), NewtonInfo(converged=True)

    def fun(theta):
        return multilogit_fgh(X, C, theta.reshape(shape), reference)

    def value(theta):
        eta = _insert_ref(X @ theta.reshape(shape), reference)
        return float(np.sum(C * log_softmax(eta)))

    theta, _, info = newton_maximize(fun, np.ravel(B0), cap=cap, maxit=maxit, value=value)
    return theta.reshape(shape), info


def _row_logits(Z, Ga):
    """Full ``(k, m, k)`` linear predictors with a zero diagonal reference per origin."""
    k = Ga.shape[0]
    others = np.array([np.delete(np.arange(k), a) for a in range(k)])
    eta = np.zeros((k, Z.shape[0], k))
    idx = np.broadcast_to(others[:, None, :], (k, Z.shape[0], k - 1))
    np.put_along_axis(eta, idx, np.matmul(Z, Ga), axis=2)
    return eta, idx


def transition_rows_fgh(Z, C, Ga, hessian=True):
    """Joint objective of the ``k`` origin-specific logits of a transition model.

    ``Z`` is ``(m, d)``, ``C`` is ``(m, k, k)`` (origin, destination) and
    ``Ga`` is ``(k, d, k-1)`` with the diagonal as reference in each row.
    The problems are separable, so the Hessian is block diagonal.
    """
    k, d, q = Ga.shape
    eta, idx = _row_logits(Z, Ga)
    Ct = np.transpose(C, (1, 0, 2))  # (origin, m, destination)
    logP = log_softmax(eta, axis=2)
    f = float(np.sum(Ct * logP))
    N = small_sum(Ct, 2)[:, :, 0]
    P = np.take_along_axis(np.exp(logP), idx, axis=2)
    Cn = np.take_along_axis(Ct, idx, axis=2)
    g = np.matmul(Z.T, Cn - N[:, :, None] * P).ravel()
    if not hessian:
        return f, g, None
    W = N[:, :, None, None] * (P[:, :, :, None] * np.eye(q) - P[:, :, :, None] * P[:, :, None, :])
    m = Z.shape[0]
    ZZ = (Z[:, :, None] * Z[:, None, :]).reshape(m, d * d)
    blocks = -np.matmul(ZZ.T, W.reshape(k, m, q * q)).reshape(k, d, d, q, q)
    blocks = blocks.transpose(0, 1, 3, 2, 4).reshape(k, d * q, d * q)
    return f, g, linalg.block_diag(*blocks)


def fit_transition_rows(Z, C, Ga0, cap=LOGIT_CAP, maxit=200):
    """Fit all origin rows of a multilogit transition model in one Newton solve.

    Equivalent to fitting each row with :func:`fit_multilogit` (reference
    = origin), since the objective is a sum of independent row problems.
    """
    Z = np.asarray(Z, dtype=float)
    C = np.asarray(C, dtype=float)
    shape = np.shape(Ga0)
    if shape[2] == 0:
        return np.zeros(shape), NewtonInfo(converged=True)
    Ct = np.transpose(C, (1, 0, 2))

    def value(theta):
        eta, _ = _row_logits(Z, theta.reshape(shape))
        return float(np.sum(Ct * log_softmax(eta, axis=2)))

    theta, _, info = newton_maximize(lambda th: transition_rows_fgh(Z, C, th.reshape(shape)), np.ravel(Ga0),
                                     cap=cap, maxit=maxit, value=value)
    return theta.reshape(shape), info


def difflogit_unpack(theta, k, p):
    """Split the packed difflogit vector into full intercept and slope arrays.

    Returns ``G0`` with zero diagonal (``k x k``) and ``G1`` with zero first
    row (``k x p``).
    """
    n0 = k * (k - 1)
    G0 = np.zeros((k, k))
    G0[~np.eye(k, dtype=bool)] = theta[:n0]
    G1 = np.zeros((k, p))
    G1[1:] = theta[n0:].reshape(k - 1, p)
    return G0, G1


def difflogit_pack(G0, G1):
    k = G0.shape[0]
    return np.concatenate([G0[~np.eye(k, dtype=bool)], np.ravel(G1[1:])])


def difflogit_logprobs(G0, G1, X):
    """Log transition probabilities ``(m, k, k)`` for covariate rows ``X``."""
    eta = G0[None, :, :] - (X @ G1.T)[:, None, :]
    return log_softmax(eta)


def difflogit_fgh(X, C, theta, k, hessian=True):
    """Value, gradient, Hessian for the difflogit transition model.

    ``C[m, a, b]`` holds expected transition counts from ``a`` to ``b`` at
    covariate row ``X[m]``.  The logit of ``b`` against ``a`` in row ``a``
    is ``G0[a, b] + x'(G1[a] - G1[b])``; the ``x'G1[a]`` term is common to
    the row and cancels in the softmax.
    """
    p = X.shape[1]
    G0, G1 = difflogit_unpack(theta, k, p)
    logP = difflogit_logprobs(G0, G1, X)
    f = float(np.sum(C * logP))
    N = C.sum(axis=2)
    P = np.exp(logP)
    R = C - N[:, :, None] * P
    off = ~np.eye(k, dtype=bool)
    g0 = R.sum(axis=0)[off]
    g1 = -np.einsum("mab,mq->bq", R, X)[1:].ravel()
    g = np.concatenate([g0, g1])
    if not hessian:
        return f, g, None
    W = N[:, :, None, None] * (np.einsum("mau,uv->mauv", P, np.eye(k)) - P[:, :, :, None] * P[:, :, None, :])
    Wsum = W.sum(axis=0)  # (a, u, v)
    n0 = k * (k - 1)
    H00 = np.zeros((k, k, k, k))
    for a in range(k):
        H00[a, :, a, :] = -Wsum[a]
    H00 = H00[off][:, off]
    H01 = np.einsum("mauv,mq->auvq", W, X)  # (a, u, v, q)
    H01 = H01[off][:, 1:, :].reshape(n0, (k - 1) * p)
    H11 = -np.einsum("mauv,mq,ms->uqvs", W, X, X, optimize=True)[1:, :, 1:, :].reshape((k - 1) * p, (k - 1) * p)
    H = np.block([[H00, H01], [H01.T, H11]])
    return f, g, H


def fit_difflogit(X, C, theta0, k, cap=LOGIT_CAP, maxit=200):
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    p = X.shape[1]

    def value(theta):
        G0, G1 = difflogit_unpack(theta, k, p)
        return float(np.sum(C * difflogit_logprobs(G0, G1, X)))

    theta, _, info = newton_maximize(lambda th: difflogit_fgh(X, C, th, k), theta0, cap=cap, maxit=maxit, value=value)
    return theta, info

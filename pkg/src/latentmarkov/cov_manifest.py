"""Latent Markov model with covariates in the measurement model.

A single ordinal response with ``c`` categories follows a cumulative
(global) logit::

    log P(Y >= y | u, x) / P(Y < y | u, x) = mu[y-1] + al[u] + x' be

with ``al[0] = 0`` for identifiability.  The chain is time-homogeneous
and starts from the stationary distribution of its transition matrix.
Covariates enter at every occasion, so the dataset must carry the same
covariates in ``X1`` and ``X2``.
"""

from dataclasses import dataclass

import numpy as np

from .basic import persistent_transition
from .data import check_dataset
from .errors import ConfigError, DataError, NumericalError
from .fitting import FitResult, run_em
from .logit import newton_maximize
from .prob import LOGIT_CAP, global_logit_cells, global_logit_probs, make_rng, normalize_rows, stationary_distribution
from .recursions import batch_forward_backward


@dataclass
class CovManifestParams:
    mu: np.ndarray
    al: np.ndarray
    be: np.ndarray
    PI: np.ndarray

    @property
    def k(self):
        return self.al.shape[0]

    @property
    def c(self):
        return self.mu.shape[0] + 1

    @property
    def piv(self):
        return stationary_distribution(self.PI)

    def display(self):
        """Re-express with centred cut-points and unanchored support points."""
        m = float(self.mu.mean())
        return {"mu": self.mu - m, "al": self.al + m, "be": self.be.copy()}


def emission_probs_manifest(params, u, x):
    """Category probabilities in state ``u`` (0-based) for covariates ``x``."""
    return global_logit_probs(params.mu, params.al[u] + np.asarray(x, dtype=float) @ params.be)


def n_params_cov_manifest(k, c, p):
    return (c - 1) + (k - 1) + p + k * (k - 1)


def emission_manifest(params, S, X):
    """Emission table ``(n, T, k)`` for responses ``S`` (``n x T``) and covariates ``X``."""
    shift = params.al[None, None, :] + (X @ params.be)[:, :, None]
    cells = global_logit_cells(params.mu, shift)
    return np.take_along_axis(cells, S[:, :, None, None], axis=3)[..., 0]


def _data(ds):
    if ds.r != 1:
        raise DataError("covariates in the measurement model need a single response variable")
    X = ds.X_full()
    return ds.S[:, :, 0], X


def posteriors_cov_manifest(params, ds, need_xi=True):
    S, X = _data(ds)
    emit = emission_manifest(params, S, X)
    return batch_forward_backward(params.piv, params.PI, emit, need_xi=need_xi)


def estep_cov_manifest(params, ds):
    ll, gamma, xi = posteriors_cov_manifest(params, ds)
    w = ds.yv.astype(float)
    b1 = w @ gamma[:, 0]
    trans = np.einsum("n,ntab->ab", w, xi)
    return float(w @ ll), (b1, trans, gamma * w[:, None, None])


def _latent_q(PI, b1, trans):
    piv = stationary_distribution(PI)
    with np.errstate(divide="ignore"):
        lp, lP = np.log(piv), np.log(PI)
    q1 = np.where(b1 > 0, b1 * lp, 0.0).sum()
    q2 = np.where(trans > 0, trans * lP, 0.0).sum()
    return q1 + q2


def mstep_transition_stationary(b1, trans, PI_old):
    """Transition update under the stationary-start constraint.

    Takes the expected-count ratio and falls back to a convex combination
    with the previous matrix if the ratio lowers the latent part of the
    expected complete log-likelihood.
    """
    PI_r, empty = normalize_rows(trans)
    warnings = ["zero expected transitions from some state; row reset to uniform"] if np.any(empty) else []
    try:
        q_old = _latent_q(PI_old, b1, trans)
    except NumericalError:
        return PI_r, warnings
    lam = 1.0
    for _ in range(30):
        PI = (1 - lam) * PI_old + lam * PI_r
        try:
            if _latent_q(PI, b1, trans) >= q_old:
                return PI, warnings
        except NumericalError:
            pass
        lam /= 2
    return PI_old, warnings + ["transition update could not improve the stationary-tied objective"]


def _pack(mu, al, be):
    return np.concatenate([mu, al[1:], be])


def _unpack(theta, c, k, p):
    mu = theta[: c - 1]
    al = np.concatenate([[0.0], theta[c - 1 : c - 1 + k - 1]])
    be = theta[c - 1 + k - 1 :]
    return mu, al, be


def _design(X, k):
    """Rows ``(n, T, u)`` flattened; columns are state dummies ``u >= 1`` and ``x``."""
    n, T, p = X.shape
    D = np.zeros((n, T, k, k - 1 + p))
    if k > 1:
        D[:, :, 1:, : k - 1] = np.eye(k - 1)
    D[:, :, :, k - 1 :] = X[:, :, None, :]
    return D.reshape(n * T * k, k - 1 + p)


def global_logit_fgh(theta, y, Z, w, c, k, hessian=True, value_only=False):
    """Weighted cumulative-logit log-likelihood with gradient and Hessian.

    ``y`` are categories, ``Z`` the state/covariate design and ``w`` the
    weights of the flattened ``(n, T, u)`` rows; ``theta = (mu, al[1:], be)``.
    With ``value_only`` the log-likelihood alone is returned.
    """
    cuts = np.concatenate([[np.inf], theta[: c - 1], [-np.inf]])
    eta = Z @ theta[c - 1 :]
    lo = cuts[y] + eta  # logit of P(Y >= y)
    hi = cuts[y + 1] + eta  # logit of P(Y >= y+1)
    with np.errstate(over="ignore", invalid="ignore"):
        # 1 / (1 + exp(-x)) is exact at +-inf and much cheaper than scipy's expit
        F_lo = 1.0 / (1.0 + np.exp(-lo))
        F_hi = 1.0 / (1.0 + np.exp(-hi))
        phi = F_lo / (1.0 + np.exp(hi)) * -np.expm1(np.minimum(hi - lo, 0.0))
    phi = np.maximum(phi, 1e-300)
    f = float(np.sum(w * np.log(phi)))
    if value_only:
        return f
    f_lo, f_hi = F_lo * (1 - F_lo), F_hi * (1 - F_hi)
    has_lo, has_hi = y >= 1, y <= c - 2
    d_lo = np.where(has_lo, f_lo / phi, 0.0)
    d_hi = np.where(has_hi, -f_hi / phi, 0.0)
    # cut-point entering each bound; rows without that bound carry zero weight
    i_lo, i_hi = np.maximum(y - 1, 0), np.minimum(y, c - 2)

    def acc(idx, v):
        return np.bincount(idx, weights=v, minlength=c - 1)

    P = Z.shape[1]
    g = np.empty(c - 1 + P)
    g[: c - 1] = acc(i_lo, w * d_lo) + acc(i_hi, w * d_hi)
    g[c - 1 :] = Z.T @ (w * (d_lo + d_hi))
    if not hessian:
        return f, g, None
    both = has_lo & has_hi
    h_ll = np.where(has_lo, f_lo * (1 - 2 * F_lo) / phi - d_lo**2, 0.0)
    h_hh = np.where(has_hi, -f_hi * (1 - 2 * F_hi) / phi - d_hi**2, 0.0)
    h_lh = np.where(both, f_lo * f_hi / phi**2, 0.0)
    H = np.empty((c - 1 + P, c - 1 + P))
    mm = np.diag(acc(i_lo, w * h_ll) + acc(i_hi, w * h_hh))
    cross = acc(i_lo, w * h_lh)[: c - 2]  # entry (y-1, y)
    mm[np.arange(c - 2), np.arange(1, c - 1)] = cross
    mm[np.arange(1, c - 1), np.arange(c - 2)] = cross
    H[: c - 1, : c - 1] = mm
    s_lo, s_hi = w * (h_ll + h_lh), w * (h_hh + h_lh)
    mz = np.zeros((c - 1, P))
    for q in range(P):
        mz[:, q] = acc(i_lo, Z[:, q] * s_lo) + acc(i_hi, Z[:, q] * s_hi)
    H[: c - 1, c - 1 :] = mz
    H[c - 1 :, : c - 1] = mz.T
    s = w * (h_ll + h_hh + 2 * h_lh)
    H[c - 1 :, c - 1 :] = (Z * s[:, None]).T @ Z
    return f, g, H


def mstep_global_logit(weights, S, X, mu, al, be, maxit=200):
    """Newton update of ``(mu, al, be)`` from expected state weights ``(n, T, k)``.

    Returns ``(mu, al, be, info)``; iterates keep ``mu`` strictly decreasing.
    """
    n, T, k = weights.shape
    c = len(mu) + 1
    y = np.repeat(S.reshape(-1), k)
    Z = _design(X, k)
    w = weights.reshape(-1)
    keep = w > 0
    y, Z, w = y[keep], Z[keep], w[keep]
    theta0 = _pack(np.asarray(mu) + al[0], al - al[0], be)

    def feasible(theta):
        return bool(np.all(np.diff(theta[: c - 1]) < 0))

    if not feasible(theta0):
        raise NumericalError("cut-points are not strictly decreasing")
    theta, _, info = newton_maximize(
        lambda th: global_logit_fgh(th, y, Z, w, c, k),
        theta0, cap=LOGIT_CAP, maxit=maxit, feasible=feasible,
        value=lambda th: global_logit_fgh(th, y, Z, w, c, k, value_only=True),
    )
    mu, al, be = _unpack(theta, c, k, X.shape[2])
    return mu, al, be, info


def empirical_cutpoints(ds):
    """Pooled empirical cumulative logits ``logit P(Y >= y)``, ``y = 1..c-1``."""
    c = ds.categories[0]
    f = np.bincount(ds.S[:, :, 0].ravel(), weights=np.repeat(ds.yv, ds.T), minlength=c)[:c] + 0.5
    surv = np.cumsum(f[::-1])[::-1][1:] / f.sum()
    return np.log(surv / (1 - surv))


def start_cov_manifest(ds, cfg):
    k, p = cfg.k, ds.p1
    if cfg.start == 2:
        q = cfg.init
        return CovManifestParams(np.array(q.mu, float) + q.al[0], np.array(q.al, float) - q.al[0], np.array(q.be, float), np.array(q.PI, float))
    mu = empirical_cutpoints(ds)
    spread = max(2.0, float(mu[0] - mu[-1]))
    if cfg.start == 0:
        al = np.linspace(-spread / 2, spread / 2, k) if k > 1 else np.zeros(1)
    else:
        rng = make_rng(cfg.seed)
        al = np.sort(rng.normal(size=k)) * spread / 2
    mu = mu + al[0]
    al = al - al[0]
    return CovManifestParams(mu, al, np.zeros(p), persistent_transition(k))


def fit_cov_manifest(ds, cfg):
    """EM fit of the covariate-in-measurement model (stationary initial law).

    Only ``q = 1`` (first-order chain) is supported.
    """
    check_dataset(ds)
    if cfg.k is None or cfg.k < 1:
        raise ConfigError("k must be a positive integer")
    if cfg.q != 1:
        raise ConfigError("only q=1 (first-order latent chain) is supported")
    S, X = _data(ds)
    c = ds.categories[0]
    params = start_cov_manifest(ds, cfg)
    if params.c != c:
        raise ConfigError(f"start has {params.c} categories, data has {c}")

    def mstep(stats, p):
        b1, trans, weights = stats
        PI, w = mstep_transition_stationary(b1, trans, p.PI)
        mu, al, be, info = mstep_global_logit(weights, S, X, p.mu, p.al, p.be)
        if info.capped:
            w.append("cumulative-logit coefficients reached the cap |coef| = 50")
        if not info.converged:
            w.append("inner Newton solver hit its iteration limit")
        if info.ridge:
            w.append("singular Hessian in inner Newton solver; ridge step used")
        return CovManifestParams(mu, al, be, PI), w

    out = run_em(lambda p: estep_cov_manifest(p, ds), mstep, params, cfg.tol, cfg.maxit)
    return FitResult(
        variant="cov-manifest",
        params=out.params,
        loglik=out.trace[-1],
        trace=np.asarray(out.trace),
        n_params=n_params_cov_manifest(cfg.k, c, ds.p1),
        n_total=ds.n_total,
        iterations=out.iterations,
        converged=out.converged,
        config=cfg,
        warnings=out.warnings,
        diagnostics=out.diagnostics,
    )

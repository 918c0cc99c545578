"""Mixed latent Markov model.

A time-fixed latent class ``U`` (``k1`` classes, masses ``la``) selects
the initial probabilities ``Piv[:, u]`` and transition matrix
``PI[:, :, u]`` of a chain ``V`` on ``k2`` states.  Emissions depend on
``V`` only and are shared by all classes.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .basic import (
    fit_basic,
    n_psi_params,
    psi_counts,
    psi_mstep,
    random_psi,
    random_transition,
)
from .data import check_dataset
from .errors import ConfigError
from .fitting import FitResult, run_em
from .prob import make_rng, normalize_rows, random_simplex
from .recursions import batch_forward, batch_forward_backward, emission_table


@dataclass
class MixedParams:
    la: np.ndarray
    Piv: np.ndarray
    PI: np.ndarray
    Psi: np.ndarray
    categories: tuple

    @property
    def k1(self):
        return self.la.shape[0]

    @property
    def k2(self):
        return self.Piv.shape[0]


def n_params_mixed(k1, k2, categories):
    return (k1 - 1) + k1 * (k2 - 1) + k1 * k2 * (k2 - 1) + n_psi_params(categories, k2)


def class_posteriors(params, ds, need_xi=True):
    """Within-class recursions and posterior class probabilities.

    Returns ``(loglik, class_post, within)`` where ``loglik`` is the
    per-configuration manifest log-likelihood ``(n,)``, ``class_post`` is
    ``(n, k1)`` and ``within[u] = (ll_u, gamma_u, xi_u)``.
    """
    emit = emission_table(params.Psi, ds.S)
    within = [
        batch_forward_backward(params.Piv[:, u], params.PI[:, :, u], emit, need_xi=need_xi)
        for u in range(params.k1)
    ]
    with np.errstate(divide="ignore"):
        logw = np.log(params.la)[None, :] + np.stack([w[0] for w in within], axis=1)
    total = logsumexp(logw, axis=1)
    return total, np.exp(logw - total[:, None]), within


def mixed_manifest_loglik(params, ds):
    """Manifest log-likelihood, mixing the class likelihoods in log space."""
    emit = emission_table(params.Psi, ds.S)
    lls = np.stack([batch_forward(params.Piv[:, u], params.PI[:, :, u], emit)[2] for u in range(params.k1)], axis=1)
    with np.errstate(divide="ignore"):
        total = logsumexp(np.log(params.la)[None, :] + lls, axis=1)
    return float(ds.yv @ total)


def estep_mixed(params, ds):
    total, post, within = class_posteriors(params, ds)
    w = ds.yv.astype(float)
    wc = w[:, None] * post  # (n, k1)
    k1, k2 = params.k1, params.k2
    init = np.empty((k2, k1))
    trans = np.empty((k2, k2, k1))
    state_w = np.zeros(ds.S.shape[:2] + (k2,))
    for u, (_, gamma, xi) in enumerate(within):
        init[:, u] = wc[:, u] @ gamma[:, 0]
        trans[:, :, u] = np.einsum("n,ntab->ab", wc[:, u], xi)
        state_w += wc[:, u, None, None] * gamma
    a = psi_counts(ds.S, state_w, ds.categories)
    return float(w @ total), (wc.sum(axis=0), init, trans, a)


def mstep_mixed(stats, categories):
    cnt, init, trans, a = stats
    warnings = []
    la, _ = normalize_rows(cnt)
    if np.any(la < 1e-12):
        warnings.append("empty latent class (mass below 1e-12)")
    Piv, _ = normalize_rows(init, axis=0)
    PI, empty = normalize_rows(trans, axis=1)
    if np.any(empty):
        warnings.append("zero expected transitions from some state; row reset to uniform")
    Psi, e = psi_mstep(a, categories)
    if e:
        warnings.append("zero expected counts for some state; emission reset to uniform")
    return MixedParams(la, Piv, PI, Psi, tuple(categories)), warnings


def start_mixed(ds, cfg):
    k1, k2 = cfg.k1, cfg.k2
    if cfg.start == 2:
        p = cfg.init
        return MixedParams(*(np.array(a, dtype=float) for a in (p.la, p.Piv, p.PI, p.Psi)), ds.categories)
    if cfg.start == 1:
        rng = make_rng(cfg.seed)
        la = random_simplex(k1, rng)
        Piv = np.stack([random_simplex(k2, rng) for _ in range(k1)], axis=1)
        PI = np.stack([random_transition(k2, rng) for _ in range(k1)], axis=2)
        return MixedParams(la, Piv, PI, random_psi(ds.categories, k2, rng), ds.categories)
    base = fit_basic(ds, cfg.with_(k=k2, homogeneous=True, start=0, init=None)).params
    tilt = np.linspace(-0.5, 0.5, k1) if k1 > 1 else np.zeros(1)
    PI = np.empty((k2, k2, k1))
    for u, s in enumerate(tilt):
        P = base.PI * np.exp(s * np.eye(k2))
        PI[:, :, u] = P / P.sum(axis=1, keepdims=True)
    Piv = np.repeat(base.piv[:, None], k1, axis=1)
    return MixedParams(np.full(k1, 1.0 / k1), Piv, PI, base.Psi.copy(), ds.categories)


def fit_mixed(ds, cfg):
    """EM fit of the mixed model with ``cfg.k1`` classes and ``cfg.k2`` states."""
    check_dataset(ds)
    if not cfg.k1 or not cfg.k2 or cfg.k1 < 1 or cfg.k2 < 1:
        raise ConfigError("k1 and k2 must be positive integers")
    params = start_mixed(ds, cfg)
    out = run_em(
        lambda p: estep_mixed(p, ds),
        lambda st, p: mstep_mixed(st, ds.categories),
        params, cfg.tol, cfg.maxit,
    )
    return FitResult(
        variant="mixed",
        params=out.params,
        loglik=out.trace[-1],
        trace=np.asarray(out.trace),
        n_params=n_params_mixed(cfg.k1, cfg.k2, ds.categories),
        n_total=ds.n_total,
        iterations=out.iterations,
        converged=out.converged,
        config=cfg,
        warnings=out.warnings,
        diagnostics=out.diagnostics,
    )

"""Basic latent Markov model: no covariates, time-homogeneous emissions.

The transitions are time-specific by default (one matrix per occasion
``2..T``); ``FitConfig.homogeneous=True`` pools them into one matrix.
The emission helpers here are shared by the covariate-in-latent and
mixed variants, which use the same conditional response probabilities.
"""

from dataclasses import dataclass

import numpy as np

from .data import check_dataset
from .errors import ConfigError
from .fitting import FitResult, run_em
from .prob import make_rng, normalize_rows, random_simplex
from .recursions import batch_forward_backward, emission_table


@dataclass
class BasicParams:
    piv: np.ndarray
    PI: np.ndarray
    Psi: np.ndarray
    categories: tuple

    @property
    def k(self):
        return self.piv.shape[0]

    @property
    def homogeneous(self):
        return self.PI.ndim == 2

    def transition(self, t):
        """Transition matrix into occasion ``t`` (1-based, ``t >= 2``)."""
        return self.PI if self.homogeneous else self.PI[t - 2]


def n_psi_params(categories, k):
    return k * sum(c - 1 for c in categories)


def n_params_basic(k, T, categories, homogeneous=False):
    q_trans = k * (k - 1) * (1 if homogeneous else T - 1)
    return (k - 1) + q_trans + n_psi_params(categories, k)


def psi_counts(S, weights, categories):
    """Expected category counts ``a[j, y, u]`` from state weights ``(n, T, k)``."""
    r = S.shape[2]
    k = weights.shape[2]
    out = np.zeros((r, max(categories), k))
    for j, c in enumerate(categories):
        onehot = (S[:, :, j, None] == np.arange(c)).astype(float)
        out[j, :c] = np.einsum("nty,ntu->yu", onehot, weights)
    return out


def psi_mstep(counts, categories):
    """Normalize category counts into ``Psi``; empty ``(j, u)`` become uniform."""
    Psi = np.zeros_like(counts)
    empty = False
    for j, c in enumerate(categories):
        Psi[j, :c], e = normalize_rows(counts[j, :c], axis=0)
        empty = empty or bool(np.any(e))
    return Psi, empty


def deterministic_psi(ds, k, strength=1.0):
    """Tilted empirical frequencies: higher states favour higher categories."""
    r = ds.r
    Psi = np.zeros((r, max(ds.categories), k))
    s = np.linspace(-strength, strength, k) if k > 1 else np.zeros(1)
    for j, c in enumerate(ds.categories):
        f = np.bincount(ds.S[:, :, j].ravel(), weights=np.repeat(ds.yv, ds.T), minlength=c)[:c]
        f = (f + 0.5) / (f.sum() + 0.5 * c)
        z = (np.arange(c) - (c - 1) / 2) / ((c - 1) / 2)
        w = f[:, None] * np.exp(np.outer(z, s))
        Psi[j, :c] = w / w.sum(axis=0)
    return Psi


def random_psi(categories, k, rng):
    Psi = np.zeros((len(categories), max(categories), k))
    for j, c in enumerate(categories):
        for u in range(k):
            Psi[j, :c, u] = random_simplex(c, rng)
    return Psi


def persistent_transition(k, stay=0.8):
    if k == 1:
        return np.ones((1, 1))
    P = np.full((k, k), (1 - stay) / (k - 1))
    np.fill_diagonal(P, stay)
    return P


def random_transition(k, rng):
    return np.vstack([random_simplex(k, rng) for _ in range(k)])


def start_basic(ds, cfg):
    k, T = cfg.k, ds.T
    n_mat = 1 if cfg.homogeneous else T - 1
    if cfg.start == 2:
        p = cfg.init
        PI = np.asarray(p.PI, dtype=float)
        if cfg.homogeneous and PI.ndim == 3:
            PI = PI.mean(axis=0)
        elif not cfg.homogeneous and PI.ndim == 2:
            PI = np.repeat(PI[None], T - 1, axis=0)
        return BasicParams(np.asarray(p.piv, float).copy(), PI.copy(), np.asarray(p.Psi, float).copy(), ds.categories)
    if cfg.start == 0:
        piv = np.full(k, 1.0 / k)
        PI = persistent_transition(k)
        Psi = deterministic_psi(ds, k)
    else:
        rng = make_rng(cfg.seed)
        piv = random_simplex(k, rng)
        mats = [random_transition(k, rng) for _ in range(n_mat)]
        if cfg.homogeneous:
            PI = mats[0]
        else:
            PI = np.stack(mats) if mats else np.zeros((0, k, k))
        Psi = random_psi(ds.categories, k, rng)
        return BasicParams(piv, PI, Psi, ds.categories)
    if not cfg.homogeneous:
        PI = np.repeat(PI[None], max(T - 1, 0), axis=0)
    return BasicParams(piv, PI, Psi, ds.categories)


def posteriors_basic(params, ds, need_xi=True):
    emit = emission_table(params.Psi, ds.S)
    return batch_forward_backward(params.piv, params.PI, emit, need_xi=need_xi)


def estep_basic(params, ds):
    """Log-likelihood and expected counts ``(b1, transitions, a)``."""
    ll, gamma, xi = posteriors_basic(params, ds)
    w = ds.yv.astype(float)
    b1 = w @ gamma[:, 0]
    trans = np.einsum("n,ntab->tab", w, xi)
    a = psi_counts(ds.S, gamma * w[:, None, None], ds.categories)
    return float(w @ ll), (b1, trans, a)


def mstep_basic(stats, homogeneous, categories):
    """Closed-form M-step from expected counts.

    Returns the new parameters and a list of warnings for states that
    received no expected count (their rows are reset to uniform).
    """
    b1, trans, a = stats
    warnings = []
    piv, _ = normalize_rows(b1)
    if homogeneous:
        PI, empty = normalize_rows(trans.sum(axis=0))
    else:
        PI, empty = normalize_rows(trans)
    if np.any(empty):
        warnings.append("zero expected transitions from some state; row reset to uniform")
    Psi, e = psi_mstep(a, categories)
    if e:
        warnings.append("zero expected counts for some state; emission reset to uniform")
    return BasicParams(piv, PI, Psi, tuple(categories)), warnings


def fit_basic(ds, cfg):
    """Maximum likelihood fit of the basic model by EM.

    Parameters
    ----------
    ds : Dataset
    cfg : FitConfig
        Uses ``k``, ``tol``, ``maxit``, ``start``, ``seed``, ``homogeneous``
        and, for ``start=2``, ``init`` (a :class:`BasicParams`).

    Returns
    -------
    FitResult
        Identifiability beyond label switching is not checked: a ``k``
        larger than the data support still returns a fit.
    """
    check_dataset(ds)
    if cfg.k is None or cfg.k < 1:
        raise ConfigError("k must be a positive integer")
    params = start_basic(ds, cfg)
    out = run_em(
        lambda p: estep_basic(p, ds),
        lambda st, p: mstep_basic(st, cfg.homogeneous, ds.categories),
        params, cfg.tol, cfg.maxit,
    )
    return FitResult(
        variant="basic",
        params=out.params,
        loglik=out.trace[-1],
        trace=np.asarray(out.trace),
        n_params=n_params_basic(cfg.k, ds.T, ds.categories, cfg.homogeneous),
        n_total=ds.n_total,
        iterations=out.iterations,
        converged=out.converged,
        config=cfg,
        warnings=out.warnings,
        diagnostics=out.diagnostics,
    )

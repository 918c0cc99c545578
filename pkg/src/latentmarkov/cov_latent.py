"""Latent Markov model with covariates in the latent process.

Initial probabilities follow a multinomial logit with state 1 as the
reference category::

    log(pi[u|x] / pi[1|x]) = Be[0, u-1] + x' Be[1:, u-1],   u = 2..k

Transitions use the diagonal of each row as reference.  Two layouts:

``multilogit``
    ``Ga`` has shape ``(k, 1+p2, k-1)``; ``Ga[a]`` holds intercept and
    slopes for the destinations ``b != a`` in increasing order.
``difflogit``
    ``Ga`` is a :class:`DiffLogitGa` with intercepts ``G0`` (``k x k``,
    zero diagonal) and slopes ``G1`` (``k x p2``, first row fixed at
    zero); the logit of ``b`` against ``a`` is
    ``G0[a, b] + x'(G1[a] - G1[b])``.

Emissions are covariate-free and time-homogeneous.
"""

from dataclasses import dataclass

import numpy as np

from .basic import (
    deterministic_psi,
    n_psi_params,
    psi_counts,
    psi_mstep,
    random_psi,
    random_transition,
)
from .data import check_dataset
from .errors import ConfigError, DataError
from .fitting import FitResult, run_em
from .logit import difflogit_logprobs, difflogit_pack, difflogit_unpack, fit_difflogit, fit_multilogit, fit_transition_rows
from .prob import make_rng, multinomial_logit, multinomial_logit_inverse, random_simplex
from .recursions import batch_forward_backward, emission_table


@dataclass
class DiffLogitGa:
    G0: np.ndarray
    G1: np.ndarray

    @property
    def k(self):
        return self.G0.shape[0]

    @property
    def p(self):
        return self.G1.shape[1]

    def pack(self):
        return difflogit_pack(self.G0, self.G1)

    @classmethod
    def unpack(cls, theta, k, p):
        return cls(*difflogit_unpack(np.asarray(theta, dtype=float), k, p))

    def to_multilogit(self):
        """Equivalent multilogit coefficients (same transitions for every x)."""
        k, p = self.G0.shape[0], self.G1.shape[1]
        Ga = np.zeros((k, 1 + p, k - 1))
        for a in range(k):
            others = [b for b in range(k) if b != a]
            Ga[a, 0] = self.G0[a, others]
            Ga[a, 1:] = (self.G1[a][:, None] - self.G1[others].T)
        return Ga


@dataclass
class CovLatentParams:
    Be: np.ndarray
    Ga: object
    Psi: np.ndarray
    categories: tuple
    param: str = "multilogit"

    @property
    def k(self):
        return self.Psi.shape[2]


def _design(X):
    X = np.asarray(X, dtype=float)
    return np.concatenate([np.ones(X.shape[:-1] + (1,)), X], axis=-1)


def initial_probs(Be, x1):
    """Initial state probabilities for covariates ``x1`` (``(p1,)`` or ``(n, p1)``)."""
    return multinomial_logit(_design(x1) @ np.asarray(Be, dtype=float), reference=0)


def transition_probs(Ga, x2, mode="multilogit"):
    """Transition matrix for covariates ``x2``; batched over leading axes of ``x2``.

    Rows are origins, columns destinations; each row is a softmax with the
    diagonal entry as reference.
    """
    x2 = np.asarray(x2, dtype=float)
    lead = x2.shape[:-1]
    flat = x2.reshape(int(np.prod(lead)), x2.shape[-1])
    if mode == "difflogit":
        out = np.exp(difflogit_logprobs(Ga.G0, Ga.G1, flat))
    elif mode == "multilogit":
        Ga = np.asarray(Ga, dtype=float)
        k = Ga.shape[0]
        Z = _design(flat)
        out = np.empty((flat.shape[0], k, k))
        for a in range(k):
            out[:, a, :] = multinomial_logit(Z @ Ga[a], reference=a)
    else:
        raise ConfigError(f"unknown parameterization {mode!r}")
    return out.reshape(lead + out.shape[1:])


def n_params_cov_latent(k, p1, p2, categories, param="multilogit"):
    q_ga = k * (k - 1) * (1 + p2) if param == "multilogit" else k * (k - 1) + (k - 1) * p2
    return (k - 1) * (1 + p1) + q_ga + n_psi_params(categories, k)


def latent_probs(params, ds):
    """Per-configuration initial ``(n, k)`` and transition ``(n, T-1, k, k)`` probabilities."""
    Piv = initial_probs(params.Be, ds.X1)
    PI = transition_probs(params.Ga, ds.X2, params.param)
    return Piv, PI


def check_covariates(params, ds):
    p1, p2 = params.Be.shape[0] - 1, (params.Ga.p if params.param == "difflogit" else params.Ga.shape[1] - 1)
    if ds.p1 != p1 or ds.p2 != p2:
        raise DataError(f"model expects {p1} initial and {p2} transition covariates, data has {ds.p1} and {ds.p2}")


def posteriors_cov_latent(params, ds, need_xi=True):
    Piv, PI = latent_probs(params, ds)
    emit = emission_table(params.Psi, ds.S)
    return batch_forward_backward(Piv, PI, emit, need_xi=need_xi)


def estep_cov_latent(params, ds):
    ll, gamma, xi = posteriors_cov_latent(params, ds)
    w = ds.yv.astype(float)
    return float(w @ ll), (gamma, xi)


def mstep_latent_logits(gamma, xi, yv, X1, X2, Be, Ga, mode="multilogit"):
    """Update ``Be`` and ``Ga`` by maximizing the expected complete log-likelihood.

    Returns ``(Be, Ga, infos)`` where ``infos`` lists the :class:`NewtonInfo`
    of every inner solve.
    """
    w = np.asarray(yv, dtype=float)
    infos = []
    Be, info = fit_multilogit(_design(X1), w[:, None] * gamma[:, 0], Be, reference=0)
    infos.append(info)
    n, Tm1, k, _ = xi.shape
    Xr = np.asarray(X2, dtype=float).reshape(n * Tm1, -1)
    C = (w[:, None, None, None] * xi).reshape(n * Tm1, k, k)
    if mode == "multilogit":
        Ga, info = fit_transition_rows(_design(Xr), C, np.asarray(Ga, dtype=float))
        infos.append(info)
    else:
        theta, info = fit_difflogit(Xr, C, Ga.pack(), k)
        Ga = DiffLogitGa.unpack(theta, k, Xr.shape[1])
        infos.append(info)
    return Be, Ga, infos


def _inner_warnings(infos):
    out = []
    if any(i.capped for i in infos):
        out.append("logit coefficients reached the cap |coef| = 50 (separation)")
    if any(not i.converged for i in infos):
        out.append("inner Newton solver hit its iteration limit")
    if any(i.ridge for i in infos):
        out.append("singular Hessian in inner Newton solver; ridge step used")
    return out


def start_cov_latent(ds, cfg):
    k, p1, p2 = cfg.k, ds.p1, ds.p2
    if cfg.start == 2:
        p = cfg.init
        Ga = p.Ga if cfg.param == "difflogit" else np.array(p.Ga, dtype=float)
        if cfg.param == "difflogit" and not isinstance(Ga, DiffLogitGa):
            raise ConfigError("difflogit start needs DiffLogitGa coefficients")
        return CovLatentParams(np.array(p.Be, dtype=float), Ga, np.array(p.Psi, dtype=float), ds.categories, cfg.param)
    if cfg.start == 0:
        Psi = deterministic_psi(ds, k)
        Be = np.zeros((1 + p1, k - 1))
        off = np.log(0.2 / (k - 1) / 0.8) if k > 1 else 0.0
        G0 = np.full((k, k), off)
        np.fill_diagonal(G0, 0.0)
    else:
        rng = make_rng(cfg.seed)
        Be = np.zeros((1 + p1, k - 1))
        Be[0] = multinomial_logit_inverse(random_simplex(k, rng))
        P = random_transition(k, rng)
        G0 = np.log(P / np.diag(P)[:, None])
        Psi = random_psi(ds.categories, k, rng)
    if cfg.param == "multilogit":
        Ga = np.zeros((k, 1 + p2, k - 1))
        for a in range(k):
            Ga[a, 0] = np.delete(G0[a], a)
    else:
        Ga = DiffLogitGa(G0, np.zeros((k, p2)))
    return CovLatentParams(Be, Ga, Psi, ds.categories, cfg.param)


def fit_cov_latent(ds, cfg):
    """EM fit of the covariate-in-latent model.

    ``cfg.param`` selects ``"multilogit"`` or ``"difflogit"`` transitions;
    ``cfg.fix_psi`` keeps the emission probabilities of the start (use
    ``start=2``) unchanged throughout.
    """
    check_dataset(ds)
    if cfg.k is None or cfg.k < 1:
        raise ConfigError("k must be a positive integer")
    if ds.T < 2:
        raise DataError("at least two occasions are required")
    if cfg.fix_psi and cfg.start != 2:
        raise ConfigError("fix_psi requires start=2 with given Psi")
    params = start_cov_latent(ds, cfg)
    check_covariates(params, ds)

    def mstep(stats, p):
        gamma, xi = stats
        Be, Ga, infos = mstep_latent_logits(gamma, xi, ds.yv, ds.X1, ds.X2, p.Be, p.Ga, cfg.param)
        if cfg.fix_psi:
            Psi = p.Psi
            w = []
        else:
            Psi, empty = psi_mstep(psi_counts(ds.S, gamma * ds.yv[:, None, None], ds.categories), ds.categories)
            w = ["zero expected counts for some state; emission reset to uniform"] if empty else []
        return CovLatentParams(Be, Ga, Psi, ds.categories, cfg.param), w + _inner_warnings(infos)

    out = run_em(lambda p: estep_cov_latent(p, ds), mstep, params, cfg.tol, cfg.maxit)
    return FitResult(
        variant="cov-latent",
        params=out.params,
        loglik=out.trace[-1],
        trace=np.asarray(out.trace),
        n_params=n_params_cov_latent(cfg.k, ds.p1, ds.p2, ds.categories, cfg.param),
        n_total=ds.n_total,
        iterations=out.iterations,
        converged=out.converged,
        config=cfg,
        warnings=out.warnings,
        diagnostics=out.diagnostics,
    )

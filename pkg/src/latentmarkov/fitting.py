"""Fit configuration, fit results and the generic EM loop."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

START_CODES = {"det": 0, "deterministic": 0, "random": 1, "input": 2}


def start_code(start):
    if isinstance(start, str):
        try:
            return START_CODES[start]
        except KeyError:
            raise ConfigError(f"unknown start rule {start!r}") from None
    if start not in (0, 1, 2):
        raise ConfigError(f"unknown start rule {start!r}")
    return int(start)


@dataclass
class FitConfig:
    """Options shared by all estimators.

    ``start`` is 0 (deterministic), 1 (random, drawn from ``seed``) or 2
    (the parameters in ``init``).  ``n_starts`` is the number of random
    starts used by :func:`latentmarkov.inference.multistart`; None means
    ``2 + k``.
    """

    k: int = None
    k1: int = None
    k2: int = None
    tol: float = 1e-8
    maxit: int = 1000
    start: int = 0
    n_starts: int = None
    seed: int = 0
    param: str = "multilogit"
    homogeneous: bool = False
    fix_psi: bool = False
    init: object = None
    q: int = 1

    def __post_init__(self):
        self.start = start_code(self.start)
        if self.param not in ("multilogit", "difflogit"):
            raise ConfigError(f"unknown parameterization {self.param!r}")
        if self.tol <= 0 or self.maxit < 0:
            raise ConfigError("tol must be positive and maxit nonnegative")
        if self.start == 2 and self.init is None:
            raise ConfigError("start=2 requires initial parameters")

    def with_(self, **kw):
        return replace(self, **kw)

    def echo(self):
        return {
            "k": self.k, "k1": self.k1, "k2": self.k2, "tol": self.tol, "maxit": self.maxit,
            "start": self.start, "n_starts": self.n_starts, "seed": self.seed, "param": self.param,
            "homogeneous": self.homogeneous, "fix_psi": self.fix_psi, "q": self.q,
        }


def aic(loglik, n_params):
    return -2.0 * loglik + 2.0 * n_params


def bic(loglik, n_params, n):
    return -2.0 * loglik + math.log(n) * n_params


@dataclass
class FitResult:
    variant: str
    params: object
    loglik: float
    trace: np.ndarray
    n_params: int
    n_total: int
    iterations: int
    converged: bool
    config: FitConfig
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    se: object = None

    @property
    def aic(self):
        return aic(self.loglik, self.n_params)

    @property
    def bic(self):
        return bic(self.loglik, self.n_params, self.n_total)

    @property
    def seed(self):
        return self.config.seed


@dataclass
class EMOutcome:
    params: object
    trace: list
    converged: bool
    iterations: int
    warnings: list
    diagnostics: dict


def run_em(estep, mstep, params, tol, maxit, drop_tol=1e-10):
    """Alternate E- and M-steps until the relative log-likelihood gain < ``tol``.

    ``estep(params)`` returns ``(loglik, stats)`` and ``mstep(stats, params)``
    returns ``(new_params, warnings)``.  Steps that lower the
    log-likelihood by more than ``drop_tol * |loglik|`` are recorded in
    ``diagnostics["monotone_violations"]`` as ``(iteration, relative drop)``.
    """
    ll, stats = estep(params)
    trace = [ll]
    warnings = []
    violations = []
    converged = False
    it = 0
    while it < maxit:
        it += 1
        params, w = mstep(stats, params)
        for msg in w:
            if msg not in warnings:
                warnings.append(msg)
        new_ll, stats = estep(params)
        trace.append(new_ll)
        # a perfect fit has loglik 0; fall back to the absolute change
        rel = (new_ll - ll) / (abs(new_ll) or 1.0)
        if rel < -drop_tol:
            violations.append((it, float(-rel)))
        ll = new_ll
        if rel < tol:
            converged = True
            break
    if not converged and maxit > 0:
        warnings.append(f"EM stopped at maxit={maxit} before convergence")
    diagnostics = {"monotone_violations": violations}
    return EMOutcome(params, trace, converged, it, warnings, diagnostics)

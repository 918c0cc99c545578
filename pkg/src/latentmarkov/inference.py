"""Standard errors, simulation, multi-start fitting and model selection.

Every variant has a free-parameter vector ``theta`` in unconstrained
coordinates:

* simplices (initial probabilities, transition rows, emission columns,
  class weights) are logits against a reference cell: the first cell,
  except transition rows which use the diagonal;
* regression coefficients (``Be``, ``Ga``, ``mu``, ``al[1:]``, ``be``) are
  taken as they are.

The length of ``theta`` equals the variant's parameter count ``np``.
"""

import csv
import io
import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basic import BasicParams, estep_basic, fit_basic, psi_counts
from .cov_latent import (
    CovLatentParams,
    DiffLogitGa,
    _design as _latent_design,
    estep_cov_latent,
    fit_cov_latent,
    initial_probs,
    transition_probs,
)
from .cov_manifest import (
    CovManifestParams,
    _data as _manifest_data,
    _design as _manifest_design,
    estep_cov_manifest,
    fit_cov_manifest,
    global_logit_fgh,
)
from .data import Dataset, collapse, expand
from .errors import ConfigError, DataError, LatentMarkovError
from .fitting import aic, bic
from .logit import difflogit_fgh, multilogit_fgh
from .mixed import MixedParams, estep_mixed, fit_mixed
from .prob import LOGIT_CAP, global_logit_cells, make_rng, multinomial_logit, spawn_seeds, stationary_distribution

FITTERS = {
    "basic": fit_basic,
    "cov-latent": fit_cov_latent,
    "cov-manifest": fit_cov_manifest,
    "mixed": fit_mixed,
}


def variant_of(params):
    if isinstance(params, BasicParams):
        return "basic"
    if isinstance(params, CovLatentParams):
        return "cov-latent"
    if isinstance(params, CovManifestParams):
        return "cov-manifest"
    if isinstance(params, MixedParams):
        return "mixed"
    raise TypeError(f"not a model parameter object: {type(params).__name__}")


def default_threads():
    env = os.environ.get("LMEST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _pmap(fn, items, threads):
    """Ordered map, optionally over a thread pool."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# packing

class _Packer:
    """Accumulates theta blocks with coordinate names and boundary flags."""

    def __init__(self):
        self.parts, self.names, self.flags = [], [], []

    def raw(self, values, names):
        v = np.ravel(np.asarray(values, dtype=float))
        self.parts.append(v)
        self.names.extend(names)
        self.flags.append(np.zeros(v.size, dtype=bool))

    def simplex(self, p, ref, names):
        p = np.asarray(p, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.log(p)
            eta = np.delete(lp - lp[ref], ref)
        bad = ~np.isfinite(eta) | (np.abs(eta) > LOGIT_CAP)
        eta = np.where(np.isnan(eta), 0.0, eta)
        eta = np.clip(eta, -LOGIT_CAP, LOGIT_CAP)
        self.parts.append(eta)
        self.names.extend(names)
        self.flags.append(bad)

    def result(self):
        if not self.parts:
            return np.zeros(0), [], np.zeros(0, dtype=bool)
        return np.concatenate(self.parts), self.names, np.concatenate(self.flags)


class _Reader:
    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=float)
        self.pos = 0

    def take(self, m):
        out = self.theta[self.pos : self.pos + m]
        if len(out) != m:
            raise ValueError("theta is too short for the parameter template")
        self.pos += m
        return out

    def simplex(self, c, ref):
        return multinomial_logit(self.take(c - 1), reference=ref)

    def done(self):
        if self.pos != len(self.theta):
            raise ValueError("theta is too long for the parameter template")


def _others(k, a):
    return [b for b in range(k) if b != a]


def _pack_rows(pk, P, tag):
    k = P.shape[0]
    for a in range(k):
        pk.simplex(P[a], a, [f"{tag}[{a + 1},{b + 1}]" for b in _others(k, a)])


def _read_rows(rd, k):
    return np.vstack([rd.simplex(k, a) for a in range(k)])


def _pack_psi(pk, Psi, categories):
    for j, c in enumerate(categories):
        for u in range(Psi.shape[2]):
            pk.simplex(Psi[j, :c, u], 0, [f"Psi[{j + 1},{y},{u + 1}]" for y in range(1, c)])


def _read_psi(rd, categories, k):
    Psi = np.zeros((len(categories), max(categories), k))
    for j, c in enumerate(categories):
        for u in range(k):
            Psi[j, :c, u] = rd.simplex(c, 0)
    return Psi


def pack_params(params):
    """Return ``(theta, names, boundary_flags)`` for any variant."""
    pk = _Packer()
    v = variant_of(params)
    if v == "basic":
        k = params.k
        pk.simplex(params.piv, 0, [f"piv[{u + 1}]" for u in range(1, k)])
        if params.homogeneous:
            _pack_rows(pk, params.PI, "PI")
        else:
            for t in range(params.PI.shape[0]):
                _pack_rows(pk, params.PI[t], f"PI_t{t + 2}")
        _pack_psi(pk, params.Psi, params.categories)
    elif v == "cov-latent":
        k = params.k
        Be = params.Be
        pk.raw(Be, [f"Be[{i},{u + 1}]" for i in range(Be.shape[0]) for u in range(1, k)])
        if params.param == "difflogit":
            G1 = params.Ga.G1
            pk.raw(params.Ga.pack(),
                   [f"Ga0[{a + 1},{b + 1}]" for a in range(k) for b in _others(k, a)]
                   + [f"Ga1[{u + 1},{i + 1}]" for u in range(1, k) for i in range(G1.shape[1])])
        else:
            Ga = np.asarray(params.Ga)
            pk.raw(Ga, [f"Ga[{a + 1},{i},{b + 1}]" for a in range(k) for i in range(Ga.shape[1]) for b in _others(k, a)])
        _pack_psi(pk, params.Psi, params.categories)
    elif v == "cov-manifest":
        k = params.k
        pk.raw(params.mu, [f"mu[{y}]" for y in range(1, params.c)])
        pk.raw(params.al[1:], [f"al[{u + 1}]" for u in range(1, k)])
        pk.raw(params.be, [f"be[{i + 1}]" for i in range(len(params.be))])
        _pack_rows(pk, params.PI, "PI")
    else:
        k1, k2 = params.k1, params.k2
        pk.simplex(params.la, 0, [f"la[{u + 1}]" for u in range(1, k1)])
        for u in range(k1):
            pk.simplex(params.Piv[:, u], 0, [f"Piv[{v + 1},{u + 1}]" for v in range(1, k2)])
        for u in range(k1):
            _pack_rows(pk, params.PI[:, :, u], f"PI_c{u + 1}")
        _pack_psi(pk, params.Psi, params.categories)
    return pk.result()


def free_param_vector(params):
    """Unconstrained parameter vector ``theta`` (see :func:`pack_params`)."""
    return pack_params(params)[0]


def unpack_params(theta, template):
    """Inverse of :func:`free_param_vector`; ``template`` supplies the shapes."""
    rd = _Reader(theta)
    v = variant_of(template)
    if v == "basic":
        k = template.k
        piv = rd.simplex(k, 0)
        if template.homogeneous:
            PI = _read_rows(rd, k)
        else:
            PI = np.stack([_read_rows(rd, k) for _ in range(template.PI.shape[0])]) if template.PI.shape[0] else np.zeros((0, k, k))
        Psi = _read_psi(rd, template.categories, k)
        out = BasicParams(piv, PI, Psi, template.categories)
    elif v == "cov-latent":
        k = template.k
        Be = rd.take(template.Be.size).reshape(template.Be.shape)
        if template.param == "difflogit":
            p = template.Ga.p
            Ga = DiffLogitGa.unpack(rd.take(k * (k - 1) + (k - 1) * p), k, p)
        else:
            shape = np.shape(template.Ga)
            Ga = rd.take(int(np.prod(shape))).reshape(shape)
        Psi = _read_psi(rd, template.categories, k)
        out = CovLatentParams(Be.copy(), Ga if template.param == "difflogit" else Ga.copy(), Psi, template.categories, template.param)
    elif v == "cov-manifest":
        k, c = template.k, template.c
        mu = rd.take(c - 1).copy()
        al = np.concatenate([[0.0], rd.take(k - 1)])
        be = rd.take(len(template.be)).copy()
        out = CovManifestParams(mu, al, be, _read_rows(rd, k))
    else:
        k1, k2 = template.k1, template.k2
        la = rd.simplex(k1, 0)
        Piv = np.stack([rd.simplex(k2, 0) for _ in range(k1)], axis=1)
        PI = np.stack([_read_rows(rd, k2) for _ in range(k1)], axis=2)
        out = MixedParams(la, Piv, PI, _read_psi(rd, template.categories, k2), template.categories)
    rd.done()
    return out


def natural_vector(params):
    """Natural-scale parameters (probabilities and raw coefficients) with names."""
    v = variant_of(params)
    vals, names = [], []

    def add(x, nm):
        vals.append(np.ravel(np.asarray(x, dtype=float)))
        names.extend(nm)

    def psi(Psi, cats):
        for j, c in enumerate(cats):
            for u in range(Psi.shape[2]):
                add(Psi[j, :c, u], [f"Psi[{j + 1},{y},{u + 1}]" for y in range(c)])

    if v == "basic":
        k = params.k
        add(params.piv, [f"piv[{u + 1}]" for u in range(k)])
        mats = [params.PI] if params.homogeneous else list(params.PI)
        for t, P in enumerate(mats):
            tag = "PI" if params.homogeneous else f"PI_t{t + 2}"
            add(P, [f"{tag}[{a + 1},{b + 1}]" for a in range(k) for b in range(k)])
        psi(params.Psi, params.categories)
    elif v == "cov-latent":
        th, nm, _ = pack_params(params)
        m = len(th) - sum(params.k * (c - 1) for c in params.categories)
        add(th[:m], nm[:m])
        psi(params.Psi, params.categories)
    elif v == "cov-manifest":
        k = params.k
        add(params.mu, [f"mu[{y}]" for y in range(1, params.c)])
        add(params.al[1:], [f"al[{u + 1}]" for u in range(1, k)])
        add(params.be, [f"be[{i + 1}]" for i in range(len(params.be))])
        add(params.PI, [f"PI[{a + 1},{b + 1}]" for a in range(k) for b in range(k)])
    else:
        k1, k2 = params.k1, params.k2
        add(params.la, [f"la[{u + 1}]" for u in range(k1)])
        add(params.Piv.T, [f"Piv[{v + 1},{u + 1}]" for u in range(k1) for v in range(k2)])
        for u in range(k1):
            add(params.PI[:, :, u], [f"PI_c{u + 1}[{a + 1},{b + 1}]" for a in range(k2) for b in range(k2)])
        psi(params.Psi, params.categories)
    return np.concatenate(vals), names


# --------------------------------------------------------------------------
# analytic score (gradient of the expected complete-data log-likelihood)

def _simplex_grad(counts, p, ref):
    counts = np.asarray(counts, dtype=float)
    return np.delete(counts - counts.sum() * p, ref)


def _rows_grad(C, P):
    return np.concatenate([_simplex_grad(C[a], P[a], a) for a in range(P.shape[0])])


def _psi_grad(a, Psi, categories):
    out = []
    for j, c in enumerate(categories):
        for u in range(Psi.shape[2]):
            out.append(_simplex_grad(a[j, :c, u], Psi[j, :c, u], 0))
    return np.concatenate(out) if out else np.zeros(0)


def _stationary_rows_grad(b1, C, P):
    """Row-logit gradient of ``b1' log pi(P) + sum C log P`` with ``pi`` stationary."""
    k = P.shape[0]
    pi = stationary_distribution(P)
    Z = np.linalg.inv(np.eye(k) - P + np.outer(np.ones(k), pi))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(b1 > 0, b1 / pi, 0.0)
        G = np.where(C > 0, C / P, 0.0)
    G = G + np.outer(pi, Z @ r)
    out = []
    for a in range(k):
        g = P[a] * (G[a] - G[a] @ P[a])
        out.append(np.delete(g, a))
    return np.concatenate(out)


def score(params, ds):
    """Observed-data score in ``theta`` coordinates.

    By the Fisher identity this equals the gradient of the expected
    complete-data log-likelihood evaluated at the posterior quantities
    of ``params`` itself.
    """
    v = variant_of(params)
    if v == "basic":
        _, (b1, trans, a) = estep_basic(params, ds)
        parts = [_simplex_grad(b1, params.piv, 0)]
        if params.homogeneous:
            parts.append(_rows_grad(trans.sum(axis=0), params.PI))
        else:
            parts.extend(_rows_grad(trans[t], params.PI[t]) for t in range(params.PI.shape[0]))
        parts.append(_psi_grad(a, params.Psi, params.categories))
    elif v == "cov-latent":
        _, (gamma, xi) = estep_cov_latent(params, ds)
        w = ds.yv.astype(float)
        parts = [multilogit_fgh(_latent_design(ds.X1), w[:, None] * gamma[:, 0], params.Be, 0, hessian=False)[1]]
        n, Tm1, k, _ = xi.shape
        Xr = ds.X2.reshape(n * Tm1, -1)
        C = (w[:, None, None, None] * xi).reshape(n * Tm1, k, k)
        if params.param == "difflogit":
            parts.append(difflogit_fgh(Xr, C, params.Ga.pack(), k, hessian=False)[1])
        else:
            Z = _latent_design(Xr)
            for a in range(k):
                parts.append(multilogit_fgh(Z, C[:, a, :], params.Ga[a], a, hessian=False)[1])
        a_cnt = psi_counts(ds.S, gamma * w[:, None, None], params.categories)
        parts.append(_psi_grad(a_cnt, params.Psi, params.categories))
    elif v == "cov-manifest":
        _, (b1, trans, weights) = estep_cov_manifest(params, ds)
        S, X = _manifest_data(ds)
        k, c = params.k, params.c
        y = np.repeat(S.reshape(-1), k)
        Z = _manifest_design(X, k)
        wt = weights.reshape(-1)
        keep = wt > 0
        theta = np.concatenate([params.mu, params.al[1:], params.be])
        g = global_logit_fgh(theta, y[keep], Z[keep], wt[keep], c, k, hessian=False)[1]
        parts = [g, _stationary_rows_grad(b1, trans, params.PI)]
    else:
        _, (cnt, init, trans, a) = estep_mixed(params, ds)
        parts = [_simplex_grad(cnt, params.la, 0)]
        parts.extend(_simplex_grad(init[:, u], params.Piv[:, u], 0) for u in range(params.k1))
        parts.extend(_rows_grad(trans[:, :, u], params.PI[:, :, u]) for u in range(params.k1))
        parts.append(_psi_grad(a, params.Psi, params.categories))
    parts = [np.ravel(p) for p in parts]
    return np.concatenate(parts) if parts else np.zeros(0)


def observed_loglik(params, ds):
    """Observed-data log-likelihood of ``params`` on ``ds``."""
    v = variant_of(params)
    if v == "basic":
        return estep_basic(params, ds)[0]
    if v == "cov-latent":
        return estep_cov_latent(params, ds)[0]
    if v == "cov-manifest":
        return estep_cov_manifest(params, ds)[0]
    return estep_mixed(params, ds)[0]


# --------------------------------------------------------------------------
# standard errors

@dataclass
class SEReport:
    """Standard errors of the free parameters.

    ``se`` follows the order of :func:`free_param_vector`; ``se_natural``
    gives the same information on the probability/coefficient scale.
    Coordinates whose variance could not be estimated are ``nan`` and
    listed in ``flagged`` (0-based).
    """

    method: str
    se: np.ndarray
    names: list
    info: np.ndarray = None
    B: int = None
    se_natural: np.ndarray = None
    natural_names: list = None
    flagged: list = field(default_factory=list)
    n_failed: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self):
        def arr(x):
            if x is None:
                return None
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(x)] if np.ndim(x) == 1 else [
                [float(v) for v in row] for row in np.asarray(x)]

        return {
            "method": self.method,
            "B": self.B,
            "names": list(self.names),
            "se": arr(self.se),
            "natural_names": None if self.natural_names is None else list(self.natural_names),
            "se_natural": arr(self.se_natural),
            "info": arr(self.info),
            "flagged": [int(i) for i in self.flagged],
            "n_failed": int(self.n_failed),
            "warnings": list(self.warnings),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "parameter", "se"])
        for nm, s in zip(self.names, self.se):
            w.writerow(["theta", nm, "" if not np.isfinite(s) else repr(float(s))])
        if self.se_natural is not None:
            for nm, s in zip(self.natural_names, self.se_natural):
                w.writerow(["natural", nm, "" if not np.isfinite(s) else repr(float(s))])
        return buf.getvalue()


def fd_step(theta):
    return np.maximum(1e-5, 1e-5 * np.abs(theta))


def _natural_jacobian(theta, template):
    base, _ = natural_vector(unpack_params(theta, template))
    Jac = np.empty((len(base), len(theta)))
    h = fd_step(theta)
    for m in range(len(theta)):
        e = np.zeros(len(theta))
        e[m] = h[m]
        up = natural_vector(unpack_params(theta + e, template))[0]
        dn = natural_vector(unpack_params(theta - e, template))[0]
        Jac[:, m] = (up - dn) / (2 * h[m])
    return Jac


def numerical_information(fit, ds):
    """Observed information by central differences of the analytic score.

    ``J[:, m] = -(s(theta + h_m e_m) - s(theta - h_m e_m)) / (2 h_m)`` with
    ``h_m = max(1e-5, 1e-5 |theta_m|)``; ``J`` is symmetrized and the
    standard errors are the square roots of the diagonal of its inverse.
    """
    template = fit.params
    theta, names, bound = pack_params(template)
    m = len(theta)
    warnings = []
    if not fit.converged:
        warnings.append("fit did not converge; standard errors may be unreliable")
    if np.any(bound):
        warnings.append("some parameters are on the boundary; their logits were clamped at +/-50")
    h = fd_step(theta)
    J = np.empty((m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h[i]
        s_up = score(unpack_params(theta + e, template), ds)
        s_dn = score(unpack_params(theta - e, template), ds)
        J[:, i] = -(s_up - s_dn) / (2 * h[i])
    J = 0.5 * (J + J.T)
    try:
        if m and np.linalg.cond(J) > 1e12:
            raise linalg.LinAlgError("ill-conditioned")
        V = linalg.inv(J) if m else np.zeros((0, 0))
    except (linalg.LinAlgError, ValueError):
        warnings.append("information matrix is singular; pseudo-inverse used")
        V = np.linalg.pinv(J, hermitian=True)
    d = np.diag(V).copy()
    flagged = [int(i) for i in np.flatnonzero(~(d >= 0))]
    if flagged:
        warnings.append(f"{len(flagged)} coordinates have negative variance estimates; se not reported")
    se = np.where(d >= 0, np.sqrt(np.abs(d)), np.nan)
    Jac = _natural_jacobian(theta, template)
    Vn = Jac @ V @ Jac.T
    dn = np.diag(Vn)
    se_nat = np.where(dn >= 0, np.sqrt(np.abs(dn)), np.nan)
    return SEReport("numerical", se, names, info=J, se_natural=se_nat,
                    natural_names=natural_vector(template)[1], flagged=flagged, warnings=warnings)


# --------------------------------------------------------------------------
# label permutations

def permute_params(params, perm):
    """Relabel states: new state ``v`` is old state ``perm[v]``.

    For the mixed model the permutation acts on the chain states.
    """
    perm = np.asarray(perm)
    v = variant_of(params)
    if v == "basic":
        PI = params.PI[..., perm, :][..., perm]
        return BasicParams(params.piv[perm], PI, params.Psi[:, :, perm], params.categories)
    if v == "mixed":
        return MixedParams(params.la.copy(), params.Piv[perm], params.PI[perm][:, perm],
                           params.Psi[:, :, perm], params.categories)
    if v == "cov-latent":
        k = params.k
        Bf = np.insert(params.Be, 0, 0.0, axis=1)[:, perm]
        Be = (Bf - Bf[:, [0]])[:, 1:]
        if params.param == "difflogit":
            G0 = params.Ga.G0[perm][:, perm]
            G1 = params.Ga.G1[perm] - params.Ga.G1[perm[0]]
            Ga = DiffLogitGa(G0, G1)
        else:
            Ga = np.empty_like(params.Ga)
            for a in range(k):
                src = perm[a]
                full = np.insert(params.Ga[src], src, 0.0, axis=1)  # columns = old destinations
                Ga[a] = np.delete(full[:, perm], a, axis=1)
        return CovLatentParams(Be, Ga, params.Psi[:, :, perm], params.categories, params.param)
    raise ConfigError("label permutation is not defined for the cov-manifest variant")


def best_permutation(Psi, Psi_ref):
    """Permutation of states minimizing the total variation between emissions."""
    k = Psi.shape[2]
    best, best_d = tuple(range(k)), np.inf
    for perm in itertools.permutations(range(k)):
        d = 0.5 * np.abs(Psi[:, :, list(perm)] - Psi_ref).sum()
        if d < best_d - 1e-12:
            best, best_d = perm, d
    return np.array(best)


def align_labels(params, reference):
    """Relabel ``params`` to best match the emissions of ``reference``."""
    return permute_params(params, best_permutation(params.Psi, reference.Psi))


# --------------------------------------------------------------------------
# simulation

def _draw(P, u):
    """Categorical draws from rows of ``P`` (``(..., k)``) using uniforms ``u``."""
    cum = np.cumsum(P, axis=-1)
    idx = (u[..., None] > cum).sum(axis=-1)
    return np.minimum(idx, P.shape[-1] - 1)


def _chain(init, trans_fn, n, T, rng):
    states = np.empty((n, T), dtype=np.int64)
    states[:, 0] = _draw(init, rng.random(n))
    for t in range(1, T):
        states[:, t] = _draw(trans_fn(t, states[:, t - 1]), rng.random(n))
    return states


def _responses_psi(Psi, categories, states, rng):
    n, T = states.shape
    S = np.empty((n, T, len(categories)), dtype=np.int64)
    for j, c in enumerate(categories):
        P = np.moveaxis(Psi[j, :c][:, states], 0, -1)
        S[:, :, j] = _draw(P, rng.random((n, T)))
    return S


def _cov_arrays(n, T, X1, X2, p1, p2):
    if X1 is None:
        if p1:
            raise DataError(f"X1 with {p1} columns is required")
        X1 = np.zeros((n, 0))
    if X2 is None:
        if p2:
            raise DataError(f"X2 with {p2} columns is required")
        X2 = np.zeros((n, T - 1, 0))
    X1 = np.asarray(X1, dtype=float).reshape(n, -1)
    X2 = np.asarray(X2, dtype=float).reshape(n, T - 1, -1)
    if X1.shape[1] != p1 or X2.shape[2] != p2:
        raise DataError(f"covariates must have {p1} initial and {p2} transition columns")
    return X1, X2


def simulate(params, n=None, seed=None, T=None, X1=None, X2=None, collapse_units=True, return_states=False):
    """Simulate a dataset from a fitted model.

    Latent paths are drawn first (initial law, then one transition per
    occasion) and responses afterwards.  Covariates are held fixed at
    ``X1`` (``n x p1``) and ``X2`` (``n x (T-1) x p2``); ``n`` and ``T``
    are inferred from them when given.  With ``collapse_units`` the
    result is collapsed into configurations.
    """
    rng = make_rng(seed)
    v = variant_of(params)
    if X1 is not None:
        n = np.shape(X1)[0] if n is None else n
    if X2 is not None:
        n = np.shape(X2)[0] if n is None else n
        T = np.shape(X2)[1] + 1 if T is None else T
    if v == "basic" and T is None and not params.homogeneous:
        T = params.PI.shape[0] + 1
    if n is None or T is None:
        raise ConfigError("n and T must be given (directly or through the covariates)")
    n, T = int(n), int(T)
    if v == "basic":
        if not params.homogeneous and params.PI.shape[0] != T - 1:
            raise ConfigError("T does not match the number of transition matrices")
        PI = params.PI
        states = _chain(np.broadcast_to(params.piv, (n, params.k)),
                        lambda t, s: PI[s] if PI.ndim == 2 else PI[t - 1][s], n, T, rng)
        S = _responses_psi(params.Psi, params.categories, states, rng)
        ds = Dataset(S, np.ones(n, dtype=np.int64), categories=params.categories)
    elif v == "cov-latent":
        p1 = params.Be.shape[0] - 1
        p2 = params.Ga.p if params.param == "difflogit" else params.Ga.shape[1] - 1
        X1, X2 = _cov_arrays(n, T, X1, X2, p1, p2)
        Piv = initial_probs(params.Be, X1)
        PI = transition_probs(params.Ga, X2, params.param)
        rows = np.arange(n)
        states = _chain(Piv, lambda t, s: PI[rows, t - 1, s], n, T, rng)
        S = _responses_psi(params.Psi, params.categories, states, rng)
        ds = Dataset(S, np.ones(n, dtype=np.int64), X1, X2, params.categories)
    elif v == "cov-manifest":
        p = len(params.be)
        X1, X2 = _cov_arrays(n, T, X1, X2, p, p)
        X = np.concatenate([X1[:, None, :], X2], axis=1)
        states = _chain(np.broadcast_to(params.piv, (n, params.k)), lambda t, s: params.PI[s], n, T, rng)
        shift = params.al[states] + X @ params.be
        cells = global_logit_cells(params.mu, shift)
        S = _draw(cells, rng.random((n, T)))[:, :, None]
        ds = Dataset(S, np.ones(n, dtype=np.int64), X1, X2, (params.c,))
    else:
        cls = _draw(np.broadcast_to(params.la, (n, params.k1)), rng.random(n))
        states = _chain(params.Piv[:, cls].T, lambda t, s: params.PI[s, :, cls], n, T, rng)
        S = _responses_psi(params.Psi, params.categories, states, rng)
        ds = Dataset(S, np.ones(n, dtype=np.int64), categories=params.categories)
    if collapse_units:
        ds = collapse(ds)
    return (ds, states) if return_states else ds


# --------------------------------------------------------------------------
# bootstrap

def bootstrap_se(fit, ds, B=200, seed=0, threads=1):
    """Parametric bootstrap standard errors.

    Each replicate simulates a dataset from ``fit.params`` with the
    covariates of ``ds`` held fixed, refits it starting from the fitted
    values, aligns state labels to the original fit and records ``theta``.
    Replicates whose fit fails or does not converge are dropped.
    """
    if B is None or B <= 0:
        raise ConfigError("B must be positive")
    if fit.variant not in ("basic", "cov-latent"):
        raise ConfigError("parametric bootstrap is available for the basic and cov-latent variants only")
    units = expand(ds)
    fitter = FITTERS[fit.variant]
    cfg = fit.config.with_(start=2, init=fit.params)
    theta0, names, _ = pack_params(fit.params)
    seeds = spawn_seeds(seed, B)

    def one(ss):
        sim = simulate(fit.params, seed=ss, n=units.n_config, T=units.T, X1=units.X1, X2=units.X2)
        try:
            res = fitter(sim, cfg)
        except (LatentMarkovError, ArithmeticError, np.linalg.LinAlgError):
            return None
        if not res.converged:
            return None
        p = align_labels(res.params, fit.params)
        return pack_params(p)[0], natural_vector(p)[0]

    reps = _pmap(one, seeds, threads)
    ok = [r for r in reps if r is not None]
    n_failed = B - len(ok)
    warnings = [f"{n_failed} of {B} replicates failed or did not converge and were dropped"] if n_failed else []
    if len(ok) < 2:
        se = np.full(len(theta0), np.nan)
        nat_names = natural_vector(fit.params)[1]
        return SEReport("bootstrap", se, names, B=B, se_natural=np.full(len(nat_names), np.nan),
                        natural_names=nat_names, flagged=list(range(len(theta0))), n_failed=n_failed,
                        warnings=warnings + ["fewer than two usable replicates"])
    TH = np.vstack([r[0] for r in ok])
    NA = np.vstack([r[1] for r in ok])
    return SEReport("bootstrap", TH.std(axis=0, ddof=1), names, B=B, se_natural=NA.std(axis=0, ddof=1),
                    natural_names=natural_vector(fit.params)[1], n_failed=n_failed, warnings=warnings)


# --------------------------------------------------------------------------
# multi-start and selection

def _size(cfg, variant):
    return cfg.k2 if variant == "mixed" else cfg.k


def start_plan(cfg, variant):
    """List of ``(label, cfg)`` pairs tried by :func:`multistart`.

    ``start=2`` runs the given start only.  ``start=0`` runs the
    deterministic start plus ``n_starts`` random ones (none if
    ``n_starts`` is None).  ``start=1`` runs ``n_starts`` random starts,
    ``2 + k`` by default.
    """
    if cfg.start == 2:
        return [("input", cfg)]
    plan = []
    if cfg.start == 0:
        plan.append(("det", cfg))
        n_rand = cfg.n_starts or 0
    else:
        n_rand = cfg.n_starts if cfg.n_starts is not None else 2 + (_size(cfg, variant) or 1)
    for ss in spawn_seeds(cfg.seed, n_rand):
        s = int(ss.generate_state(1)[0])
        plan.append((s, cfg.with_(start=1, seed=s)))
    return plan


def multistart(variant, ds, cfg, threads=1):
    """Fit from every start of :func:`start_plan` and keep the largest log-likelihood.

    The winning start is stored in ``diagnostics["best_start"]`` and all
    final log-likelihoods in ``diagnostics["start_logliks"]``.  Ties go to
    the earliest start.
    """
    if variant not in FITTERS:
        raise ConfigError(f"unknown variant {variant!r}")
    plan = start_plan(cfg, variant)
    fitter = FITTERS[variant]
    results = _pmap(lambda item: fitter(ds, item[1]), plan, threads)
    best = 0
    for i, r in enumerate(results):
        if r.loglik > results[best].loglik:
            best = i
    out = results[best]
    out.diagnostics = dict(out.diagnostics)
    out.diagnostics["best_start"] = plan[best][0]
    out.diagnostics["start_logliks"] = [[lab if isinstance(lab, str) else int(lab), float(r.loglik)]
                                        for (lab, _), r in zip(plan, results)]
    return out


@dataclass
class SelectionTable:
    """Model-selection table; one row per number of states (or class/state pair)."""

    variant: str
    n_total: int
    rows: list = field(default_factory=list)

    def add_row(self, size, loglik, n_params, seed=None, converged=True, error=None):
        row = {"size": size, "loglik": loglik, "np": n_params, "AIC": None, "BIC": None,
               "seed": seed, "converged": converged, "error": error}
        if loglik is not None:
            row["AIC"] = aic(loglik, n_params)
            row["BIC"] = bic(loglik, n_params, self.n_total)
        self.rows.append(row)
        return row

    def _argmin(self, key):
        vals = [(r[key], i) for i, r in enumerate(self.rows) if r[key] is not None]
        return min(vals)[1] if vals else None

    @property
    def best_aic(self):
        i = self._argmin("AIC")
        return None if i is None else self.rows[i]["size"]

    @property
    def best_bic(self):
        i = self._argmin("BIC")
        return None if i is None else self.rows[i]["size"]

    def to_dict(self):
        ia, ib = self._argmin("AIC"), self._argmin("BIC")
        rows = []
        for i, r in enumerate(self.rows):
            d = dict(r)
            d["size"] = list(r["size"]) if isinstance(r["size"], tuple) else r["size"]
            d["min_AIC"], d["min_BIC"] = i == ia, i == ib
            rows.append(d)
        return {"variant": self.variant, "n_total": self.n_total, "rows": rows}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        mixed = any(isinstance(r["size"], tuple) for r in self.rows)
        head = ["k1", "k2"] if mixed else ["k"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head + ["loglik", "np", "AIC", "BIC", "seed", "converged", "min_AIC", "min_BIC", "error"])

        def num(x):
            return "" if x is None else repr(float(x))

        for d in self.to_dict()["rows"]:
            size = d["size"] if mixed else [d["size"]]
            w.writerow(list(size) + [num(d["loglik"]), d["np"], num(d["AIC"]), num(d["BIC"]),
                                     "" if d["seed"] is None else d["seed"], int(bool(d["converged"])),
                                     int(d["min_AIC"]), int(d["min_BIC"]), d["error"] or ""])
        return buf.getvalue()


def select_states(ds, variant, sizes, cfg, threads=1):
    """Fit each size and tabulate log-likelihood, np, AIC and BIC.

    ``sizes`` is an iterable of ``k`` values, or of ``(k1, k2)`` pairs for
    the mixed variant.  Each size uses :func:`multistart` with ``cfg``.
    A size whose fit raises is recorded with its error message.
    """
    table = SelectionTable(variant, ds.n_total)
    sizes = list(sizes)
    if not sizes:
        raise ConfigError("empty range of sizes")

    def one(size):
        c = cfg.with_(k1=size[0], k2=size[1]) if variant == "mixed" else cfg.with_(k=int(size))
        try:
            return multistart(variant, ds, c), None
        except LatentMarkovError as e:
            return None, str(e)

    for size, (res, err) in zip(sizes, _pmap(one, sizes, threads)):
        size = tuple(int(s) for s in size) if variant == "mixed" else int(size)
        if res is None:
            table.add_row(size, None, None, converged=False, error=err)
        else:
            table.add_row(size, float(res.loglik), int(res.n_params), res.diagnostics.get("best_start"), bool(res.converged))
    return table


def information_criteria(loglik, n_params, n):
    """``(AIC, BIC)`` for a log-likelihood, parameter count and sample size."""
    return aic(loglik, n_params), bic(loglik, n_params, n)


__all__ = [
    "SEReport", "SelectionTable", "align_labels", "best_permutation", "bootstrap_se", "free_param_vector",
    "information_criteria", "multistart", "natural_vector", "numerical_information", "observed_loglik",
    "pack_params", "permute_params", "score", "select_states", "simulate", "start_plan", "unpack_params",
]

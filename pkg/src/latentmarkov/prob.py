"""Probability primitives: simplices, stochastic matrices and logit links.

Random numbers come from :class:`numpy.random.Generator` over the PCG64
bit generator, which produces the same stream for a given seed on every
platform.  Independent sub-streams are derived with
:meth:`numpy.random.SeedSequence.spawn`.
"""

import numpy as np
from scipy.special import expit

from .errors import NumericalError, ParameterizationError

LOGIT_CAP = 50.0


def make_rng(seed=None):
    """Return a PCG64-backed generator (``seed`` may be an int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed, n):
    """Derive ``n`` independent child seed sequences from ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)


def random_simplex(k, rng):
    """Draw ``k`` uniform(0, 1) numbers and normalize them to sum to one."""
    if k < 1:
        raise ValueError("k must be at least 1")
    u = rng.random(k)
    return u / u.sum()


def stationary_distribution(P, atol=1e-8):
    """Stationary distribution of a row-stochastic matrix.

    Solves ``(I - P^T) pi = 0`` together with ``sum(pi) = 1`` in the least
    squares sense.  For reducible chains this returns the minimum-norm
    solution, e.g. the uniform vector for the identity matrix.

    Raises
    ------
    NumericalError
        If the stacked system has no solution within ``atol``.
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    if P.shape != (k, k):
        raise ValueError("P must be square")
    A = np.vstack([np.eye(k) - P.T, np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = np.abs(A @ pi - b).max()
    if not np.isfinite(resid) or resid > atol:
        raise NumericalError(f"stationary system residual {resid:.3g} exceeds {atol}")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def multinomial_logit(eta, reference=0):
    """Map ``k-1`` logits to a probability vector of length ``k``.

    ``eta`` may carry leading batch dimensions; the last axis holds the
    logits of the non-reference categories in increasing index order.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    full = np.insert(eta, reference, 0.0, axis=-1)
    full = full - full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def multinomial_logit_inverse(probs, reference=0, cap=LOGIT_CAP):
    """Logits of ``probs`` relative to ``reference``, clamped to ``[-cap, cap]``."""
    probs = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    ref = np.take(logp, [reference], axis=-1)
    eta = np.delete(logp - ref, reference, axis=-1)
    eta = np.where(np.isnan(eta), 0.0, eta)
    return np.clip(eta, -cap, cap)


def _small_reduce(op, x, axis):
    # numpy reductions over a short axis are far slower than slice-wise ufuncs
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[axis] > 16 or x.shape[axis] == 0:
        return op.reduce(x, axis=axis, keepdims=True)
    x = np.moveaxis(x, axis, 0)
    out = x[0].copy()
    for s in x[1:]:
        op(out, s, out=out)
    return np.expand_dims(out, axis)


def small_sum(x, axis=-1):
    """Sum over ``axis`` with kept dims, fast when the axis is short."""
    return _small_reduce(np.add, x, axis)


def small_max(x, axis=-1):
    """Max over ``axis`` with kept dims, fast when the axis is short."""
    return _small_reduce(np.maximum, x, axis)


def log_softmax(eta, axis=-1):
    # plain numpy: scipy's logsumexp has a large per-call overhead on small arrays
    eta = np.asarray(eta, dtype=float)
    m = small_max(eta, axis)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return eta - m - np.log(small_sum(np.exp(eta - m), axis))


def global_logit_survival(mu, shift):
    """Survivor probabilities ``P(Y >= y)`` for ``y = 1..c-1``.

    ``shift`` may be an array; the result has shape ``shift.shape + (c-1,)``.
    """
    mu = np.asarray(mu, dtype=float)
    shift = np.asarray(shift, dtype=float)
    return expit(mu + shift[..., None])


def global_logit_probs(mu, shift=0.0):
    """Category probabilities under a cumulative (global) logit link.

    The log-odds of ``Y >= y`` against ``Y < y`` equal ``mu[y-1] + shift``
    for ``y = 1..c-1``.  Cell probabilities are first differences of the
    survivor function.

    Raises
    ------
    ParameterizationError
        If the cut-points are not decreasing, so that some cell would get a
        negative probability.
    """
    surv = global_logit_survival(mu, shift)
    ones = np.ones(surv.shape[:-1] + (1,))
    zeros = np.zeros_like(ones)
    full = np.concatenate([ones, surv, zeros], axis=-1)
    phi = full[..., :-1] - full[..., 1:]
    if np.any(phi < 0):
        raise ParameterizationError("cut-points are not decreasing: negative cell probability")
    return phi


def is_simplex(p, atol=1e-10):
    p = np.asarray(p)
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=-1) - 1) <= atol))


def normalize_rows(counts, axis=-1):
    """Normalize ``counts`` along ``axis``; all-zero slices become uniform.

    Returns the normalized array and a boolean mask of the reset slices.
    """
    counts = np.asarray(counts, dtype=float)
    tot = small_sum(counts, axis)
    empty = tot <= 0
    size = counts.shape[axis]
    out = np.where(empty, 1.0 / size, counts / np.where(empty, 1.0, tot))
    return out, np.squeeze(empty, axis=axis)


def global_logit_cells(mu, shift):
    """Cell probabilities of the cumulative logit, computed without cancellation.

    Uses ``expit(a) - expit(b) = expit(a) * expit(-b) * (1 - exp(b - a))``
    for adjacent cumulative logits ``a > b``.  Returns an array of shape
    ``shift.shape + (c,)``; decreasing cut-points are assumed, not checked.
    """
    mu = np.asarray(mu, dtype=float)
    lam = mu + np.asarray(shift, dtype=float)[..., None]
    inf = np.full(lam.shape[:-1] + (1,), np.inf)
    hi = np.concatenate([inf, lam], axis=-1)
    lo = np.concatenate([lam, -inf], axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        phi = expit(hi) * expit(-lo) * -np.expm1(np.minimum(lo - hi, 0.0))
    return np.where(np.isnan(phi), 0.0, phi)

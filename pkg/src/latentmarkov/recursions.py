"""Scaled forward-backward recursions for short categorical sequences.

The single-sequence functions (:func:`forward_loglik`,
:func:`forward_backward`) take an :class:`HmmInputs`.  The estimation
engines use :func:`batch_forward_backward`, which runs the same recursion
vectorized over all configurations of a dataset.  Frequencies are applied
by the callers, never inside the recursion.

Transition arrays passed to the batch routines may have shape ``(k, k)``
(shared and time-homogeneous), ``(T-1, k, k)`` (shared, time-specific) or
``(n, T-1, k, k)`` (configuration- and time-specific).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .prob import small_sum


@dataclass
class HmmInputs:
    init: np.ndarray
    trans: np.ndarray
    emit: np.ndarray

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=float)
        self.trans = np.asarray(self.trans, dtype=float)
        self.emit = np.asarray(self.emit, dtype=float)

    @property
    def T(self):
        return self.emit.shape[0]

    @property
    def k(self):
        return self.init.shape[0]

    def trans_at(self, t):
        """Transition matrix into occasion ``t`` (0-based, ``t >= 1``)."""
        return self.trans if self.trans.ndim == 2 else self.trans[t - 1]


@dataclass
class PosteriorSet:
    loglik: float
    gamma: np.ndarray
    xi: np.ndarray


def _trans_at(trans, t):
    # returns an array broadcastable against (n, k, k)
    if trans.ndim == 2:
        return trans
    if trans.ndim == 3:
        return trans[t - 1]
    return trans[:, t - 1]


def batch_forward(init, trans, emit):
    """Scaled forward pass.

    Returns the normalized forward variables ``(n, T, k)``, the scale
    factors ``(n, T)`` and the log-likelihood of each sequence ``(n,)``.
    Sequences that are impossible under the model get ``-inf``.
    """
    emit = np.asarray(emit, dtype=float)
    n, T, k = emit.shape
    init = np.broadcast_to(np.asarray(init, dtype=float), (n, k))
    trans = np.asarray(trans, dtype=float)
    alpha = np.empty((n, T, k))
    scale = np.empty((n, T))
    a = init * emit[:, 0]
    for t in range(T):
        if t > 0:
            P = _trans_at(trans, t)
            if P.ndim == 2:
                a = (alpha[:, t - 1] @ P) * emit[:, t]
            else:
                a = np.einsum("ni,nij->nj", alpha[:, t - 1], P) * emit[:, t]
        c = small_sum(a, 1)[:, 0]
        scale[:, t] = c
        alpha[:, t] = a / np.where(c > 0, c, 1.0)[:, None]
    with np.errstate(divide="ignore"):
        loglik = np.log(scale).sum(axis=1)
    return alpha, scale, loglik


def batch_forward_backward(init, trans, emit, need_xi=True):
    """Posterior state probabilities for every sequence of a batch.

    Returns
    -------
    loglik : (n,) array
    gamma : (n, T, k) array
        ``gamma[i, t, u] = p(U_t = u | y_i)``.
    xi : (n, T-1, k, k) array or None
        ``xi[i, t-1, a, b] = p(U_{t-1} = a, U_t = b | y_i)``.

    Raises
    ------
    NumericalError
        If some sequence has zero probability under the model.
    """
    emit = np.asarray(emit, dtype=float)
    n, T, k = emit.shape
    trans = np.asarray(trans, dtype=float)
    alpha, scale, loglik = batch_forward(init, trans, emit)
    if np.any(~np.isfinite(loglik)):
        bad = int(np.flatnonzero(~np.isfinite(loglik))[0])
        raise NumericalError(f"configuration {bad} has zero probability under the model")
    beta = np.empty((n, T, k))
    beta[:, T - 1] = 1.0
    xi = np.empty((n, T - 1, k, k)) if need_xi else None
    for t in range(T - 1, 0, -1):
        P = _trans_at(trans, t)
        eb = emit[:, t] * beta[:, t]
        if P.ndim == 2:
            beta[:, t - 1] = (eb @ P.T) / scale[:, t, None]
        else:
            beta[:, t - 1] = np.einsum("nij,nj->ni", P, eb) / scale[:, t, None]
        if need_xi:
            xi[:, t - 1] = alpha[:, t - 1, :, None] * P * (eb / scale[:, t, None])[:, None, :]
    gamma = alpha * beta
    return loglik, gamma, xi


def forward_loglik(h):
    """Log-probability of one observed sequence (``-inf`` if impossible)."""
    trans = h.trans if h.trans.ndim == 2 else h.trans[None]
    _, _, ll = batch_forward(h.init[None], trans, h.emit[None])
    return float(ll[0])


def forward_backward(h):
    """Posterior quantities of one sequence as a :class:`PosteriorSet`."""
    trans = h.trans if h.trans.ndim == 2 else h.trans[None]
    ll, gamma, xi = batch_forward_backward(h.init[None], trans, h.emit[None])
    return PosteriorSet(float(ll[0]), gamma[0], xi[0])


def emission_table(Psi, responses):
    """Probability of the observed responses at each occasion given each state.

    Parameters
    ----------
    Psi : (r, c_max, k) array
        ``Psi[j, y, u]`` is the probability of category ``y`` of variable
        ``j`` in state ``u``.
    responses : (T, r) or (n, T, r) integer array

    Returns
    -------
    (T, k) or (n, T, k) array, the product over variables of the
    probabilities of the observed categories (local independence).
    """
    Psi = np.asarray(Psi, dtype=float)
    S = np.asarray(responses)
    single = S.ndim == 2
    if single:
        S = S[None]
    n, T, r = S.shape
    out = np.ones((n, T, Psi.shape[2]))
    for j in range(r):
        out *= Psi[j][S[:, :, j]]
    return out[0] if single else out

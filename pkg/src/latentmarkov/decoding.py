"""Local and global decoding of latent states.

Decoded states are 1-based.  Ties go to the smallest state index, both
in the per-occasion argmax and at every backtracking step of Viterbi.
Mixed models are decoded in two stages: each configuration is assigned
to its most probable latent class, then the chain is decoded with that
class's initial and transition probabilities.
"""

from dataclasses import dataclass

import numpy as np

from .cov_latent import check_covariates, latent_probs
from .cov_manifest import _data, emission_manifest
from .errors import DataError, NumericalError
from .mixed import class_posteriors
from .recursions import PosteriorSet, batch_forward_backward, emission_table


@dataclass
class DecodingResult:
    Ul: np.ndarray
    Ug: np.ndarray


def local_decode(posteriors):
    """Per-occasion argmax of posterior state probabilities.

    ``posteriors`` is a ``(T, k)`` or ``(n, T, k)`` array, a
    :class:`PosteriorSet` or a sequence of them.
    """
    if isinstance(posteriors, PosteriorSet):
        gamma = posteriors.gamma
    elif isinstance(posteriors, (list, tuple)) and posteriors and isinstance(posteriors[0], PosteriorSet):
        gamma = np.stack([p.gamma for p in posteriors])
    else:
        gamma = np.asarray(posteriors, dtype=float)
    return np.argmax(gamma, axis=-1) + 1


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def batch_viterbi(init, trans, emit):
    """Most probable state path of every sequence, shape ``(n, T)``, 1-based.

    Transition shapes follow :mod:`latentmarkov.recursions`.
    """
    emit = np.asarray(emit, dtype=float)
    n, T, k = emit.shape
    init = np.broadcast_to(np.asarray(init, dtype=float), (n, k))
    trans = np.asarray(trans, dtype=float)
    lt = _log(trans)
    le = _log(emit)
    delta = _log(init) + le[:, 0]
    back = np.zeros((n, T, k), dtype=np.int64)
    for t in range(1, T):
        if lt.ndim == 2:
            L = lt[None]
        elif lt.ndim == 3:
            L = lt[t - 1][None]
        else:
            L = lt[:, t - 1]
        cand = delta[:, :, None] + L  # (n, from, to)
        back[:, t] = np.argmax(cand, axis=1)
        delta = np.max(cand, axis=1) + le[:, t]
    if np.any(np.max(delta, axis=1) == -np.inf):
        bad = int(np.flatnonzero(np.max(delta, axis=1) == -np.inf)[0])
        raise NumericalError(f"sequence {bad} has zero probability under every state path")
    path = np.empty((n, T), dtype=np.int64)
    path[:, T - 1] = np.argmax(delta, axis=1)
    rows = np.arange(n)
    for t in range(T - 1, 0, -1):
        path[:, t - 1] = back[rows, t, path[:, t]]
    return path + 1


def global_decode(h):
    """Viterbi path (1-based) of a single :class:`HmmInputs`."""
    trans = h.trans if h.trans.ndim == 2 else h.trans[None]
    return batch_viterbi(h.init[None], trans, h.emit[None])[0]


def _hmm_arrays(fit, ds):
    p = fit.params
    if fit.variant == "basic":
        if p.PI.ndim == 3 and p.PI.shape[0] != ds.T - 1:
            raise DataError("number of occasions differs from the fitted model")
        return p.piv, p.PI, emission_table(p.Psi, ds.S)
    if fit.variant == "cov-latent":
        check_covariates(p, ds)
        Piv, PI = latent_probs(p, ds)
        return Piv, PI, emission_table(p.Psi, ds.S)
    if fit.variant == "cov-manifest":
        if ds.p1 != len(p.be) or ds.p2 != len(p.be):
            raise DataError(f"model expects {len(p.be)} covariates at every occasion")
        S, X = _data(ds)
        return p.piv, p.PI, emission_manifest(p, S, X)
    raise ValueError(f"unknown variant {fit.variant!r}")


def _check_responses(fit, ds):
    cats = getattr(fit.params, "categories", None)
    if cats is None:
        cats = (fit.params.c,)
    if ds.r != len(cats) or any(int(ds.S[:, :, j].max(initial=0)) >= c for j, c in enumerate(cats)):
        raise DataError("responses do not match the fitted model's categories")


def decode(fit, ds):
    """Local and global decoding of every configuration of ``ds`` under ``fit``."""
    _check_responses(fit, ds)
    if fit.variant == "mixed":
        p = fit.params
        _, post, within = class_posteriors(p, ds, need_xi=False)
        cls = np.argmax(post, axis=1)
        gamma = np.stack([w[1] for w in within], axis=0)[cls, np.arange(ds.n_config)]
        emit = emission_table(p.Psi, ds.S)
        Ug = np.empty((ds.n_config, ds.T), dtype=np.int64)
        for u in range(p.k1):
            sel = cls == u
            if np.any(sel):
                Ug[sel] = batch_viterbi(p.Piv[:, u], p.PI[:, :, u], emit[sel])
        return DecodingResult(local_decode(gamma), Ug)
    init, trans, emit = _hmm_arrays(fit, ds)
    _, gamma, _ = batch_forward_backward(init, trans, emit, need_xi=False)
    return DecodingResult(local_decode(gamma), batch_viterbi(init, trans, emit))

import itertools

import numpy as np
import pytest

from latentmarkov import FitConfig, MixedParams, fit_basic, fit_mixed
from latentmarkov.basic import start_basic
from latentmarkov.inference import permute_params, simulate
from latentmarkov.mixed import class_posteriors, mixed_manifest_loglik, n_params_mixed
from latentmarkov.recursions import emission_table
from oracles import random_instance


def test_np_matches_printed_27():
    assert n_params_mixed(2, 2, (2,) * 10) == 27


def _enum_loglik(params, ds):
    """Sum over classes and all latent paths."""
    emit = emission_table(params.Psi, ds.S)
    n, T, k2 = emit.shape
    lik = np.zeros(n)
    for u in range(params.k1):
        for path in itertools.product(range(k2), repeat=T):
            pr = params.la[u] * params.Piv[path[0], u]
            for t in range(1, T):
                pr = pr * params.PI[path[t - 1], path[t], u]
            lik += pr * np.prod(emit[:, np.arange(T), list(path)], axis=1)
    return float(ds.yv @ np.log(lik))


def _random_mixed(rng, k1, k2, cats):
    la = rng.dirichlet(np.ones(k1))
    Piv = rng.dirichlet(np.ones(k2), size=k1).T
    PI = np.stack([rng.dirichlet(np.ones(k2), size=k2) for _ in range(k1)], axis=2)
    Psi = random_instance(rng, k2, 2, len(cats), cats)[2]
    return MixedParams(la, Piv, PI, Psi, tuple(cats))


def test_loglik_matches_enumeration(rng):
    for _ in range(10):
        p = _random_mixed(rng, 2, 3, (2, 3))
        ds = simulate(p, n=30, T=4, seed=int(rng.integers(1 << 30)))
        assert mixed_manifest_loglik(p, ds) == pytest.approx(_enum_loglik(p, ds), rel=1e-10)


def _as_mixed(p):
    return MixedParams(np.ones(1), p.piv[:, None], p.PI[:, :, None], p.Psi, p.categories)


def test_one_class_reduces_to_basic_homogeneous(basic_data):
    cfg = FitConfig(k=2, homogeneous=True, start=1, seed=3)
    b = fit_basic(basic_data, cfg)
    m = fit_mixed(basic_data, FitConfig(k1=1, k2=2, start=2, init=_as_mixed(start_basic(basic_data, cfg))))
    assert len(m.trace) == len(b.trace)
    np.testing.assert_allclose(m.trace, b.trace, rtol=0, atol=1e-8)
    np.testing.assert_allclose(m.params.Psi, b.params.Psi, atol=1e-10)
    assert mixed_manifest_loglik(_as_mixed(b.params), basic_data) == pytest.approx(b.loglik, abs=1e-8)


def test_one_class_tight_tolerance_same_optimum(basic_data):
    b = fit_basic(basic_data, FitConfig(k=2, homogeneous=True, tol=1e-13))
    m = fit_mixed(basic_data, FitConfig(k1=1, k2=2, tol=1e-13))
    assert m.loglik == pytest.approx(b.loglik, abs=1e-8)


def test_degenerate_class_masses_are_fixed(rng):
    p = _random_mixed(rng, 2, 2, (2, 2))
    p.la = np.array([1.0, 0.0])
    ds = simulate(p, n=200, T=4, seed=1)
    fit = fit_mixed(ds, FitConfig(k1=2, k2=2, start=2, init=p, maxit=50))
    assert fit.params.la[1] == 0.0
    _, post, _ = class_posteriors(fit.params, ds)
    np.testing.assert_array_equal(post[:, 1], 0.0)


def test_class_permutation_invariance(rng):
    p = _random_mixed(rng, 3, 2, (3, 2))
    ds = simulate(p, n=40, T=3, seed=4)
    for perm in itertools.permutations(range(3)):
        q = MixedParams(p.la[list(perm)], p.Piv[:, list(perm)], p.PI[:, :, list(perm)], p.Psi, p.categories)
        assert mixed_manifest_loglik(q, ds) == pytest.approx(mixed_manifest_loglik(p, ds), rel=1e-12)
    q = permute_params(p, [1, 0])
    assert mixed_manifest_loglik(q, ds) == pytest.approx(mixed_manifest_loglik(p, ds), rel=1e-12)


def _two_class_truth():
    la = np.array([0.35, 0.65])
    Piv = np.array([[0.8, 0.3], [0.2, 0.7]])
    PI = np.stack([np.array([[0.95, 0.05], [0.1, 0.9]]), np.array([[0.5, 0.5], [0.45, 0.55]])], axis=2)
    Psi = np.zeros((5, 2, 2))
    Psi[:, :, 0] = [0.9, 0.1]
    Psi[:, :, 1] = [0.15, 0.85]
    return MixedParams(la, Piv, PI, Psi, (2,) * 5)


def test_monotone_trace_various_starts():
    ds = simulate(_two_class_truth(), n=400, T=5, seed=6)
    for start, seed in [(0, 0), (1, 1), (1, 2)]:
        fit = fit_mixed(ds, FitConfig(k1=2, k2=2, start=start, seed=seed))
        assert np.all(np.diff(fit.trace) >= -1e-8 * np.abs(fit.trace[1:]))
        assert fit.n_params == n_params_mixed(2, 2, (2,) * 5)


def test_recovers_class_masses():
    truth = _two_class_truth()
    ds = simulate(truth, n=3000, T=6, seed=8)
    fit = fit_mixed(ds, FitConfig(k1=2, k2=2, start=2, init=truth))
    # classes are identified by how sticky their chains are
    stick = [np.trace(fit.params.PI[:, :, u]) for u in range(2)]
    la = fit.params.la if stick[0] > stick[1] else fit.params.la[::-1]
    np.testing.assert_allclose(la, truth.la, atol=0.08)

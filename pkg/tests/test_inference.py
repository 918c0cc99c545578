import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentmarkov import BasicParams, CovLatentParams, CovManifestParams, DiffLogitGa, FitConfig, MixedParams, fit_basic
from latentmarkov.basic import n_params_basic
from latentmarkov.cov_latent import n_params_cov_latent
from latentmarkov.cov_manifest import n_params_cov_manifest
from latentmarkov.errors import ConfigError
from latentmarkov.inference import (
    SelectionTable,
    align_labels,
    bootstrap_se,
    information_criteria,
    numerical_information,
    observed_loglik,
    pack_params,
    permute_params,
    score,
    simulate,
    unpack_params,
)
from latentmarkov.mixed import n_params_mixed


def _psi(rng, cats, k):
    Psi = np.zeros((len(cats), max(cats), k))
    for j, c in enumerate(cats):
        Psi[j, :c] = rng.dirichlet(np.ones(c), size=k).T
    return Psi


def _random_params(rng, variant, k=3, cats=(2, 3), p=2, homogeneous=False, T=4):
    if variant == "basic":
        PI = rng.dirichlet(np.ones(k), size=k) if homogeneous else np.stack(
            [rng.dirichlet(np.ones(k), size=k) for _ in range(T - 1)])
        return BasicParams(rng.dirichlet(np.ones(k)), PI, _psi(rng, cats, k), cats)
    if variant == "cov-latent":
        return CovLatentParams(rng.normal(size=(1 + p, k - 1)), rng.normal(size=(k, 1 + p, k - 1)), _psi(rng, cats, k), cats)
    if variant == "difflogit":
        G0 = rng.normal(size=(k, k))
        np.fill_diagonal(G0, 0)
        G1 = rng.normal(size=(k, p))
        G1[0] = 0
        return CovLatentParams(rng.normal(size=(1 + p, k - 1)), DiffLogitGa(G0, G1), _psi(rng, cats, k), cats, "difflogit")
    if variant == "cov-manifest":
        c = 4
        return CovManifestParams(np.sort(rng.normal(size=c - 1))[::-1] * 2, np.concatenate([[0.0], rng.normal(size=k - 1)]),
                                 rng.normal(size=p), rng.dirichlet(np.ones(k), size=k))
    k1 = 2
    return MixedParams(rng.dirichlet(np.ones(k1)), rng.dirichlet(np.ones(k), size=k1).T,
                       np.stack([rng.dirichlet(np.ones(k), size=k) for _ in range(k1)], axis=2), _psi(rng, cats, k), cats)


VARIANTS = ["basic", "cov-latent", "difflogit", "cov-manifest", "mixed"]


def _flat(p):
    return np.concatenate([np.ravel(np.asarray(getattr(p, f) if f != "Ga" or not isinstance(p.Ga, DiffLogitGa)
                                               else p.Ga.pack())) for f in p.__dataclass_fields__ if f not in ("categories", "param")])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), variant=st.sampled_from(VARIANTS), k=st.integers(1, 4))
def test_pack_unpack_round_trip(seed, variant, k):
    rng = np.random.default_rng(seed)
    p = _random_params(rng, variant, k=k)
    theta, names, flags = pack_params(p)
    assert len(names) == len(theta) and not np.any(flags)
    q = unpack_params(theta, p)
    np.testing.assert_allclose(_flat(q), _flat(p), atol=1e-12)
    np.testing.assert_allclose(pack_params(q)[0], theta, atol=1e-12)


def test_uniform_simplices_pack_to_zero():
    k, cats = 3, (2, 4)
    Psi = np.zeros((2, 4, k))
    Psi[0, :2], Psi[1, :4] = 0.5, 0.25
    p = BasicParams(np.full(k, 1 / 3), np.full((k, k), 1 / 3), Psi, cats)
    np.testing.assert_array_equal(pack_params(p)[0], 0.0)


def test_boundary_clamped_and_flagged():
    p = BasicParams(np.array([1.0, 0.0]), np.eye(2), np.array([[[1.0, 0.0], [0.0, 1.0]]]), (2,))
    theta, _, flags = pack_params(p)
    assert flags.any() and np.max(np.abs(theta)) == 50.0


def test_length_equals_np_small(rng):
    cats, k, p = (2, 3), 3, 2
    assert len(pack_params(_random_params(rng, "basic", k, cats))[0]) == n_params_basic(k, 4, cats, False)
    assert len(pack_params(_random_params(rng, "basic", k, cats, homogeneous=True))[0]) == n_params_basic(k, 4, cats, True)
    assert len(pack_params(_random_params(rng, "cov-latent", k, cats, p))[0]) == n_params_cov_latent(k, p, p, cats)
    assert len(pack_params(_random_params(rng, "difflogit", k, cats, p))[0]) == n_params_cov_latent(k, p, p, cats, "difflogit")
    assert len(pack_params(_random_params(rng, "cov-manifest", k, cats, p))[0]) == n_params_cov_manifest(k, 4, p)
    assert len(pack_params(_random_params(rng, "mixed", k, cats))[0]) == n_params_mixed(2, k, cats)


def test_length_equals_np_at_printed_dimensions(rng):
    cl = CovLatentParams(np.zeros((7, 4)), np.zeros((5, 7, 4)), _psi(rng, (5,), 5), (5,))
    assert len(pack_params(cl)[0]) == 188
    cm = CovManifestParams(np.array([2.0, 1.0, 0.0, -1.0]), np.linspace(0, 3, 10), np.zeros(6), np.full((10, 10), 0.1))
    assert len(pack_params(cm)[0]) == 109
    mx = MixedParams(np.full(2, 0.5), np.full((2, 2), 0.5), np.full((2, 2, 2), 0.5), np.full((10, 2, 2), 0.5), (2,) * 10)
    assert len(pack_params(mx)[0]) == 27


def _covariates(rng, variant, n, T, p):
    if variant in ("cov-latent", "difflogit", "cov-manifest"):
        return dict(X1=rng.normal(size=(n, p)), X2=rng.normal(size=(n, T - 1, p)))
    return {}


@pytest.mark.parametrize("variant", VARIANTS + ["basic-hom"])
def test_score_matches_finite_differences(rng, variant):
    hom = variant == "basic-hom"
    v = "basic" if hom else variant
    p = _random_params(rng, v, k=2, cats=(2, 3), p=1, homogeneous=hom)
    n, T = 25, 4
    ds = simulate(p, n=n, T=T, seed=1, **_covariates(rng, v, n, T, 1))
    theta = pack_params(p)[0]
    g = score(p, ds)
    h = 1e-6
    fd = np.array([(observed_loglik(unpack_params(theta + h * e, p), ds)
                    - observed_loglik(unpack_params(theta - h * e, p), ds)) / (2 * h) for e in np.eye(len(theta))])
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6 * np.abs(fd).max())


def test_k1_information_is_multinomial(rng):
    c, n, T = 4, 300, 3
    S = rng.integers(0, c, size=(n, T))
    from latentmarkov import Dataset

    ds = Dataset(S, np.ones(n, int), categories=(c,))
    fit = fit_basic(ds, FitConfig(k=1))
    rep = numerical_information(fit, ds)
    p = fit.params.Psi[0, :, 0]
    N = n * T
    J = N * (np.diag(p[1:]) - np.outer(p[1:], p[1:]))
    np.testing.assert_allclose(rep.info, J, rtol=1e-4, atol=1e-4 * np.abs(J).max())
    np.testing.assert_allclose(rep.info, rep.info.T, rtol=1e-6)
    nat = dict(zip(rep.natural_names, rep.se_natural))
    for y in range(c):
        assert nat[f"Psi[1,{y},1]"] == pytest.approx(np.sqrt(p[y] * (1 - p[y]) / N), rel=1e-3)


def test_simulate_k1_frequencies_within_binomial_error():
    p0 = np.array([0.5, 0.3, 0.2])
    params = BasicParams(np.ones(1), np.ones((1, 1)), p0[None, :, None], (3,))
    n = 5000
    ds = simulate(params, n=n, T=1, seed=123, collapse_units=False)
    f = np.bincount(ds.S[:, 0, 0], minlength=3) / n
    assert np.all(np.abs(f - p0) < 3 * np.sqrt(p0 * (1 - p0) / n))


def test_simulate_transition_frequencies():
    PI = np.array([[0.7, 0.2, 0.1], [0.25, 0.5, 0.25], [0.05, 0.15, 0.8]])
    params = BasicParams(np.full(3, 1 / 3), PI, np.full((1, 2, 3), 0.5), (2,))
    _, U = simulate(params, n=25000, T=5, seed=4, collapse_units=False, return_states=True)
    C = np.zeros((3, 3))
    np.add.at(C, (U[:, :-1].ravel(), U[:, 1:].ravel()), 1)
    assert C.sum() == 1e5
    np.testing.assert_allclose(C / C.sum(axis=1, keepdims=True), PI, atol=0.01)


def test_simulate_deterministic_model():
    params = BasicParams(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [1.0, 0.0]]),
                         np.array([[[1.0, 0.0], [0.0, 1.0]]]), (2,))
    ds = simulate(params, n=5, T=4, seed=0, collapse_units=False)
    np.testing.assert_array_equal(ds.S[:, :, 0], np.tile([0, 1, 0, 1], (5, 1)))


def test_simulate_fit_recovers_truth():
    from conftest import truth_basic

    truth = truth_basic()
    ds = simulate(truth, n=5000, T=5, seed=21)
    fit = fit_basic(ds, FitConfig(k=2, homogeneous=True))
    p = align_labels(fit.params, truth)
    rep = numerical_information(fit.__class__(**{**fit.__dict__, "params": p}), ds)
    est = dict(zip(rep.natural_names, _natural(p)))
    tru = dict(zip(rep.natural_names, _natural(truth)))
    se = dict(zip(rep.natural_names, rep.se_natural))
    for nm in rep.natural_names:
        assert abs(est[nm] - tru[nm]) < 3 * se[nm] + 1e-12, nm


def _natural(p):
    from latentmarkov.inference import natural_vector

    return natural_vector(p)[0]


@pytest.fixture(scope="module")
def small_fit():
    from conftest import truth_basic

    ds = simulate(truth_basic(), n=300, T=4, seed=2)
    return ds, fit_basic(ds, FitConfig(k=2, homogeneous=True))


def test_bootstrap_is_deterministic_across_threads(small_fit):
    ds, fit = small_fit
    a = bootstrap_se(fit, ds, B=8, seed=5, threads=1)
    b = bootstrap_se(fit, ds, B=8, seed=5, threads=3)
    c = bootstrap_se(fit, ds, B=8, seed=6, threads=1)
    assert a.to_json() == b.to_json()
    assert not np.array_equal(a.se, c.se)
    assert np.all(a.se >= 0)


def test_bootstrap_rejects_nonpositive_B(small_fit):
    ds, fit = small_fit
    for B in (0, -3):
        with pytest.raises(ConfigError, match="B must be positive"):
            bootstrap_se(fit, ds, B=B)


def test_bootstrap_degenerate_model_has_zero_se():
    params = BasicParams(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [1.0, 0.0]]),
                         np.array([[[1.0, 0.0], [0.0, 1.0]]]), (2,))
    ds = simulate(params, n=50, T=4, seed=0)
    fit = fit_basic(ds, FitConfig(k=2, homogeneous=True, start=2, init=params))
    rep = bootstrap_se(fit, ds, B=5, seed=1)
    np.testing.assert_array_equal(rep.se, 0.0)
    np.testing.assert_array_equal(rep.se_natural, 0.0)


def test_permutation_alignment_recovers_labels(rng):
    p = _random_params(rng, "basic", k=3, cats=(4, 4), homogeneous=True)
    q = permute_params(p, [2, 0, 1])
    r = align_labels(q, p)
    np.testing.assert_allclose(r.Psi, p.Psi, atol=1e-15)
    np.testing.assert_allclose(r.PI, p.PI, atol=1e-15)


def test_information_criteria_printed_values():
    aic, bic = information_criteria(-62427, 188, 7074)
    assert round(bic) == 126520 and abs(aic - 125230) <= 2
    aic, bic = information_criteria(-62579, 109, 7074)
    assert abs(aic - 125376) <= 2 and abs(bic - 126124) <= 3
    _, bic = information_criteria(-18347, 27, 4800)
    assert abs(bic - 36923) <= 3


def test_selection_table_rows_and_outputs():
    t = SelectionTable("basic", 1000)
    t.add_row(1, -1500.0, 3)
    t.add_row(2, -1400.0, 8)
    t.add_row(3, -1398.0, 15)
    t.add_row(4, None, None, converged=False, error="boom")
    assert t.rows[1]["AIC"] == pytest.approx(2816.0)
    assert t.rows[1]["BIC"] == pytest.approx(2800.0 + np.log(1000) * 8)
    assert t.best_aic == 2 and t.best_bic == 2
    d = json.loads(t.to_json())
    assert [r["min_BIC"] for r in d["rows"]] == [False, True, False, False]
    lines = t.to_csv().splitlines()
    assert lines[0].startswith("k,loglik,np,AIC,BIC") and len(lines) == 5
    assert lines[4].endswith("boom")


def test_se_report_serializations(small_fit):
    ds, fit = small_fit
    rep = numerical_information(fit, ds)
    d = json.loads(rep.to_json())
    assert d["method"] == "numerical" and len(d["se"]) == fit.n_params
    rows = rep.to_csv().splitlines()
    assert rows[0] == "scale,parameter,se"
    assert len(rows) == 1 + fit.n_params + len(rep.natural_names)
    assert np.all(rep.se > 0)

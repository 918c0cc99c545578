import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from latentmarkov.errors import NumericalError, ParameterizationError
from latentmarkov.prob import (
    global_logit_cells,
    global_logit_probs,
    is_simplex,
    make_rng,
    multinomial_logit,
    multinomial_logit_inverse,
    normalize_rows,
    random_simplex,
    spawn_seeds,
    stationary_distribution,
)


def test_stationary_two_state_closed_form():
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(stationary_distribution(P), [2 / 3, 1 / 3], atol=1e-12)


def test_stationary_matches_eigenvector_oracle(rng):
    for _ in range(20):
        k = int(rng.integers(2, 6))
        P = rng.dirichlet(np.ones(k), size=k)
        w, V = np.linalg.eig(P.T)
        v = np.real(V[:, np.argmin(np.abs(w - 1))])
        v = v / v.sum()
        pi = stationary_distribution(P)
        np.testing.assert_allclose(pi, v, atol=1e-10)
        assert np.abs(pi @ P - pi).max() < 1e-10


def test_stationary_identity_is_uniform():
    np.testing.assert_allclose(stationary_distribution(np.eye(2)), [0.5, 0.5])


def test_stationary_doubly_stochastic_is_uniform():
    P = np.array([[0.2, 0.5, 0.3], [0.5, 0.3, 0.2], [0.3, 0.2, 0.5]])
    np.testing.assert_allclose(stationary_distribution(P), np.full(3, 1 / 3), atol=1e-12)


def test_stationary_rejects_non_stochastic():
    with pytest.raises(NumericalError):
        stationary_distribution(np.array([[2.0, 0.0], [0.0, 3.0]]))


def test_multinomial_logit_examples():
    np.testing.assert_allclose(multinomial_logit(np.zeros(2)), np.full(3, 1 / 3))
    # reference is the first state (index 0)
    np.testing.assert_allclose(multinomial_logit([np.log(2.0)], reference=0), [1 / 3, 2 / 3])
    np.testing.assert_allclose(multinomial_logit([np.log(2.0)], reference=1), [2 / 3, 1 / 3])


def test_multinomial_logit_round_trip_mass_probabilities():
    p = np.array([0.2175, 0.7825])
    eta = multinomial_logit_inverse(p)
    np.testing.assert_allclose(eta, [np.log(0.7825 / 0.2175)], rtol=1e-12)
    np.testing.assert_allclose(multinomial_logit(eta), p, atol=1e-12)


def test_multinomial_logit_large_eta_no_overflow():
    p = multinomial_logit([1000.0, -1000.0, 0.0])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p, [0, 1, 0, 0], atol=1e-300)


def test_multinomial_logit_k1():
    np.testing.assert_allclose(multinomial_logit(np.zeros(0)), [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.integers(0, 6))
def test_multinomial_logit_inverse_round_trip(eta, ref):
    ref = ref % (len(eta) + 1)
    p = multinomial_logit(eta, reference=ref)
    assert is_simplex(p, atol=1e-12)
    np.testing.assert_allclose(multinomial_logit_inverse(p, reference=ref), eta, atol=1e-8)


def test_global_logit_binary_reduces_to_logit():
    np.testing.assert_allclose(global_logit_probs([0.0], 0.0), [0.5, 0.5])
    np.testing.assert_allclose(global_logit_probs([0.7], 0.3), [1 - expit(1.0), expit(1.0)])


def test_global_logit_cutpoints_from_printed_output():
    mu = np.array([8.284, 4.543, 0.747, -3.573])
    phi = global_logit_probs(mu, 0.0)
    surv = expit(mu)
    expected = np.array([1 - surv[0], surv[0] - surv[1], surv[1] - surv[2], surv[2] - surv[3], surv[3]])
    np.testing.assert_allclose(phi, expected, atol=1e-14)
    # partial sums reproduce the cumulative logits
    tail = np.cumsum(phi[::-1])[::-1][1:]
    np.testing.assert_allclose(logit(tail), mu, atol=1e-10)


def test_global_logit_large_shift_concentrates_on_top():
    phi = global_logit_probs([1.0, 0.0, -1.0], 30.0)
    assert phi[-1] > 1 - 1e-12


def test_global_logit_non_monotone_raises():
    with pytest.raises(ParameterizationError):
        global_logit_probs([0.0, 1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=1, max_size=5, unique=True), st.floats(-5, 5))
def test_global_logit_cells_match_differences(cuts, shift):
    mu = np.sort(np.array(cuts))[::-1]
    if np.any(np.diff(mu) > -1e-3):
        return
    phi = global_logit_probs(mu, shift)
    cells = global_logit_cells(mu, np.array(shift))
    np.testing.assert_allclose(cells, phi, atol=1e-12)
    assert abs(cells.sum() - 1) < 1e-12


def test_random_simplex_properties():
    np.testing.assert_allclose(random_simplex(1, make_rng(0)), [1.0])
    a = random_simplex(3, make_rng(42))
    b = random_simplex(3, make_rng(42))
    np.testing.assert_array_equal(a, b)
    rng = make_rng(1)
    first = np.array([random_simplex(2, rng)[0] for _ in range(100_000)])
    assert abs(first.mean() - 0.5) < 0.01


def test_make_rng_is_pcg64_and_spawn_is_deterministic():
    assert isinstance(make_rng(3).bit_generator, np.random.PCG64)
    s1 = [s.generate_state(1)[0] for s in spawn_seeds(9, 4)]
    s2 = [s.generate_state(1)[0] for s in spawn_seeds(9, 4)]
    assert s1 == s2 and len(set(s1)) == 4


def test_normalize_rows_empty_rows_become_uniform():
    out, empty = normalize_rows(np.array([[1.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.25, 0.75], [0.5, 0.5]])
    np.testing.assert_array_equal(empty, [False, True])


# printed 10-state transition matrix (rows rounded to 4 decimals) and the
# printed initial probabilities of the stationary-start model
_PRINTED_PI = """
0.8965 0.0040 0.0111 0.0257 0.0000 0.0019 0.0083 0.0056 0.0384 0.0084
0.0006 0.8356 0.0000 0.0033 0.0299 0.0146 0.1150 0.0000 0.0010 0.0000
0.0371 0.0000 0.7998 0.0641 0.0000 0.0000 0.0003 0.0745 0.0103 0.0138
0.0439 0.0056 0.0618 0.7700 0.0000 0.0031 0.0261 0.0393 0.0272 0.0229
0.0001 0.1474 0.0000 0.0002 0.8308 0.0171 0.0042 0.0000 0.0001 0.0000
0.0250 0.1922 0.0001 0.0507 0.0792 0.5893 0.0582 0.0000 0.0050 0.0004
0.0011 0.0244 0.0000 0.0024 0.0034 0.0047 0.8691 0.0000 0.0688 0.0262
0.1073 0.0000 0.1046 0.0998 0.0000 0.0000 0.0001 0.6591 0.0184 0.0105
0.0483 0.0099 0.0004 0.0052 0.0002 0.0014 0.0358 0.0004 0.8911 0.0074
0.1247 0.0266 0.0317 0.0789 0.0000 0.0000 0.2421 0.0098 0.3337 0.1524
"""
_PRINTED_PIV = [0.2219, 0.0932, 0.0465, 0.0644, 0.0256, 0.0094, 0.2180, 0.0220, 0.2849, 0.0142]


def test_stationary_reproduces_printed_initial_probabilities():
    P = np.array([[float(v) for v in line.split()] for line in _PRINTED_PI.strip().splitlines()])
    P /= P.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(stationary_distribution(P), _PRINTED_PIV, atol=5e-4)

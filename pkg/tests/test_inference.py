import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssvae.inference import (
    ImpossibleObservationError,
    backward_kernels,
    enumerate_posterior,
    filter_forward,
    smoothing_from_backward,
    tv_distance,
)
from ssvae.models import build_finite_ssm, finite_ssm_from_tables, theta_dim

from conftest import random_model


def test_uninformative_model_keeps_uniform_filters():
    # state-independent emissions: filter stays at the uniform prior
    m = finite_ssm_from_tables(
        [[0.5, 0.5], [0.5, 0.5]], [[0.7, 0.3], [0.7, 0.3]], [0.5, 0.5]
    )
    y = np.array([0, 1, 0, 0])
    res = filter_forward(m, y)
    assert np.allclose(res.filters, 0.5)
    expected = sum(np.log(0.7 if s == 0 else 0.3) for s in y)
    assert res.loglik == pytest.approx(expected, abs=1e-12)


def test_identity_emissions_give_point_mass_filters():
    m = finite_ssm_from_tables(
        [[0.6, 0.4], [0.3, 0.7]], [[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]
    )
    y = np.array([1, 0, 0, 1])
    res = filter_forward(m, y)
    for t, s in enumerate(y):
        assert res.filters[t, s] == pytest.approx(1.0)


def test_loglik_matches_path_enumeration_oracle():
    rng = np.random.default_rng(41)
    m = random_model(rng, K=3, V=2)
    y = rng.integers(0, 2, 5)
    res = filter_forward(m, y)
    oracle = enumerate_posterior(m, y)
    assert res.loglik == pytest.approx(oracle.log_normalizer, abs=1e-10)
    assert res.loglik == pytest.approx(res.step_logliks.sum(), abs=1e-12)


def test_iid_chain_backward_rows_equal_filter():
    pi = np.array([0.3, 0.7])
    m = finite_ssm_from_tables(np.tile(pi, (2, 1)), [[0.8, 0.2], [0.4, 0.6]], pi)
    y = np.array([0, 1, 1])
    res = filter_forward(m, y)
    for t in range(2):
        for j in range(2):
            assert np.allclose(res.backward[t][j], res.filters[t])


def test_single_state_backward_is_one():
    m = finite_ssm_from_tables([[1.0]], [[0.5, 0.5]], [1.0])
    res = filter_forward(m, np.array([0, 1, 0]))
    assert np.allclose(res.backward, 1.0)


def test_backward_factorization_reproduces_posterior():
    rng = np.random.default_rng(43)
    m = random_model(rng, K=3, V=3)
    y = rng.integers(0, 3, 5)
    res = filter_forward(m, y)
    sm = smoothing_from_backward(res)
    oracle = enumerate_posterior(m, y)
    assert np.max(np.abs(sm.probs - oracle.probs)) < 1e-10
    assert tv_distance(sm.probs, oracle.probs) < 1e-10


def test_smoothing_at_horizon_zero_is_the_filter():
    rng = np.random.default_rng(47)
    m = random_model(rng)
    res = filter_forward(m, np.array([1]))
    sm = smoothing_from_backward(res)
    assert np.allclose(sm.probs, res.filters[0])


def test_permutation_transition_concentrates_posterior():
    # deterministic cycling dynamics: at most K paths can carry mass
    m = finite_ssm_from_tables([[0.0, 1.0], [1.0, 0.0]], [[0.6, 0.4], [0.4, 0.6]], [0.5, 0.5])
    y = np.array([0, 1, 0, 1])
    sm = smoothing_from_backward(filter_forward(m, y))
    assert np.sum(sm.probs > 1e-12) <= 2


def test_enumerate_posterior_trivial_cases():
    m = finite_ssm_from_tables([[1.0]], [[0.5, 0.5]], [1.0])
    post = enumerate_posterior(m, np.array([0, 1]))
    assert post.probs.tolist() == [1.0]
    mu = build_finite_ssm(np.zeros(theta_dim(2, 2)), 2, 2)
    post = enumerate_posterior(mu, np.array([0, 1, 1]))
    assert np.allclose(post.probs, 1.0 / 8)


def test_normalizer_agrees_with_filter_loglik():
    rng = np.random.default_rng(53)
    for _ in range(20):
        m = random_model(rng)
        T = int(rng.integers(0, 5))
        y = rng.integers(0, m.V, T + 1)
        assert filter_forward(m, y).loglik == pytest.approx(
            enumerate_posterior(m, y).log_normalizer, abs=1e-10
        )


def test_impossible_observation_raises():
    m = finite_ssm_from_tables([[1.0]], [[1.0, 0.0]], [1.0])
    with pytest.raises(ImpossibleObservationError):
        filter_forward(m, np.array([0, 1]))


def test_degenerate_backward_row_is_flagged_uniform():
    # filter sits on state 0 but no transition from state 0 reaches state 1
    m = finite_ssm_from_tables([[1.0, 0.0], [0.5, 0.5]], [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
    res = filter_forward(m, np.array([0, 0]))
    assert res.degenerate_rows  # some row needed the uniform fallback
    t, j = res.degenerate_rows[0]
    assert np.allclose(res.backward[t][j], 0.5)


def test_backward_kernels_standalone_matches_result():
    rng = np.random.default_rng(59)
    m = random_model(rng)
    y = rng.integers(0, m.V, 4)
    res = filter_forward(m, y)
    again = backward_kernels(m, res.filters)
    assert np.allclose(again, res.backward)


def test_inference_result_invariants_on_random_suite():
    rng = np.random.default_rng(61)
    for _ in range(50):
        m = random_model(rng)
        T = int(rng.integers(0, 6))
        y = rng.integers(0, m.V, T + 1)
        res = filter_forward(m, y)
        assert np.max(np.abs(res.filters.sum(axis=1) - 1.0)) < 1e-12
        if T:
            assert np.max(np.abs(res.backward.sum(axis=2) - 1.0)) < 1e-12


def test_tv_distance_examples():
    assert tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance([0.7, 0.3], [0.4, 0.6]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        tv_distance([1.0], [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_tv_distance_is_a_metric(k, s1, s2, s3):
    r = np.random.default_rng([s1, s2, s3])
    p, q, w = r.dirichlet(np.ones(k)), r.dirichlet(np.ones(k)), r.dirichlet(np.ones(k))
    assert tv_distance(p, q) == tv_distance(q, p)
    assert tv_distance(p, q) <= tv_distance(p, w) + tv_distance(w, q) + 1e-12
    assert 0.0 <= tv_distance(p, q) <= 1.0
    assert tv_distance(p, p) == 0.0

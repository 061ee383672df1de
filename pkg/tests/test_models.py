import json

import numpy as np
import pytest

from ssvae.models import (
    Dataset,
    EnumerationTooLargeError,
    FiniteFamily,
    FiniteSSM,
    FunctionalARModel,
    ParameterShapeError,
    all_sequences,
    build_finite_ssm,
    exact_sequence_law,
    finite_ssm_from_tables,
    row_logits,
    sample_sequences,
    sequence_index,
    softmax_rows,
    theta_dim,
)

from conftest import random_model


def test_zero_theta_gives_uniform_tables():
    m = build_finite_ssm(np.zeros(theta_dim(2, 2)), 2, 2)
    assert np.allclose(m.transition, 0.5)
    assert np.allclose(m.emission, 0.5)
    assert np.allclose(m.initial, 0.5)


def test_single_state_transition_is_one():
    for V in (1, 2, 4):
        m = build_finite_ssm(np.zeros(theta_dim(1, V)), 1, V)
        assert m.transition.tolist() == [[1.0]]


def test_random_tables_are_row_stochastic():
    rng = np.random.default_rng(3)
    m = build_finite_ssm(rng.normal(size=theta_dim(3, 2)), 3, 2)
    for table in (m.transition, m.emission, m.initial[None, :]):
        assert np.all(table > 0)
        assert np.max(np.abs(table.sum(axis=1) - 1.0)) < 1e-12


def test_theta_dimension_mismatch_raises():
    with pytest.raises(ParameterShapeError):
        build_finite_ssm(np.zeros(4), 2, 2)


def test_softmax_round_trip():
    row = np.array([0.2, 0.5, 0.3])
    assert np.allclose(softmax_rows(row_logits(row)[None, :])[0], row)


def test_chart_is_continuous_in_theta():
    # finite differences at 10 random points stay O(delta)
    rng = np.random.default_rng(11)
    K, V = 3, 3
    delta = 1e-6
    for _ in range(10):
        theta = rng.uniform(-2, 2, theta_dim(K, V))
        m0 = build_finite_ssm(theta, K, V)
        i = int(rng.integers(theta.size))
        theta2 = theta.copy()
        theta2[i] += delta
        m1 = build_finite_ssm(theta2, K, V)
        for a, b in ((m0.transition, m1.transition), (m0.emission, m1.emission), (m0.initial, m1.initial)):
            assert np.max(np.abs(a - b)) < delta  # softmax entries are 1-Lipschitz per logit


def test_clipping_keeps_theta_in_box():
    m = build_finite_ssm(np.full(theta_dim(2, 2), 100.0), 2, 2, clip_radius=10.0)
    assert np.all(np.abs(m.theta) <= 10.0)


def test_deterministic_emission_forces_symbol_zero():
    m = finite_ssm_from_tables([[1.0]], [[1.0, 0.0]], [1.0])
    ds = sample_sequences(m, 20, 5, seed=0)
    assert np.all(ds.sequences == 0)


def test_empirical_frequency_matches_exact_marginal():
    m = build_finite_ssm(np.zeros(theta_dim(2, 2)), 2, 2)
    # marginal of symbol 0 at T=0 by direct matrix product
    exact = float(m.initial @ m.emission[:, 0])
    n = 100_000
    ds = sample_sequences(m, n, 0, seed=5)
    freq = float(np.mean(ds.sequences[:, 0] == 0))
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(freq - exact) < 3 * se


def test_sampling_is_deterministic_given_seed():
    rng = np.random.default_rng(7)
    m = random_model(rng)
    a = sample_sequences(m, 50, 4, seed=99)
    b = sample_sequences(m, 50, 4, seed=99)
    assert np.array_equal(a.sequences, b.sequences)


def test_sampling_rejects_bad_counts():
    m = finite_ssm_from_tables([[1.0]], [[1.0]], [1.0])
    with pytest.raises(ValueError):
        sample_sequences(m, 0, 3, seed=0)
    with pytest.raises(ValueError):
        sample_sequences(m, 3, -1, seed=0)


def test_exact_law_point_mass_for_deterministic_model():
    m = finite_ssm_from_tables([[1.0]], [[0.0, 1.0]], [1.0])
    law = exact_sequence_law(m, 3)
    idx = sequence_index(np.array([1, 1, 1, 1]), 2)
    assert law[idx] == pytest.approx(1.0, abs=1e-12)
    assert law.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_law_uniform_two_state():
    m = build_finite_ssm(np.zeros(theta_dim(2, 2)), 2, 2)
    law = exact_sequence_law(m, 1)
    assert np.allclose(law, 0.25, atol=1e-12)


def test_exact_law_matches_path_enumeration():
    rng = np.random.default_rng(13)
    m = random_model(rng, K=3, V=2)
    T = 3
    law = exact_sequence_law(m, T)
    # oracle: sum the joint over all latent paths for each sequence
    from itertools import product

    for idx, y in enumerate(all_sequences(2, T)):
        total = 0.0
        for path in product(range(3), repeat=T + 1):
            p = m.initial[path[0]] * m.emission[path[0], y[0]]
            for t in range(1, T + 1):
                p *= m.transition[path[t - 1], path[t]] * m.emission[path[t], y[t]]
            total += p
        assert law[idx] == pytest.approx(total, abs=1e-10)
    assert law.sum() == pytest.approx(1.0, abs=1e-10)


def test_exact_law_sums_to_one_on_random_models():
    rng = np.random.default_rng(17)
    for _ in range(20):
        m = random_model(rng)
        T = int(rng.integers(0, 5))
        assert exact_sequence_law(m, T).sum() == pytest.approx(1.0, abs=1e-10)


def test_enumeration_cap(monkeypatch):
    m = build_finite_ssm(np.zeros(theta_dim(2, 3)), 2, 3)
    with pytest.raises(EnumerationTooLargeError):
        exact_sequence_law(m, 20)
    monkeypatch.setenv("SSVAE_ENUM_CAP", "10")
    with pytest.raises(EnumerationTooLargeError):
        exact_sequence_law(m, 2)


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    m = random_model(rng)
    path = tmp_path / "model.json"
    m.save(path)
    m2 = FiniteSSM.load(path)
    assert np.allclose(m.transition, m2.transition)
    assert np.allclose(m2.theta, m.theta)


def test_dataset_json_round_trip(tmp_path):
    rng = np.random.default_rng(29)
    m = random_model(rng)
    ds = sample_sequences(m, 10, 3, seed=4)
    path = tmp_path / "dataset.json"
    ds.save(path)
    ds2 = Dataset.load(path)
    assert ds2.n == 10 and ds2.T == 3 and ds2.V == m.V
    assert np.array_equal(ds.sequences, ds2.sequences)
    raw = json.loads(path.read_text())
    assert set(raw) >= {"n", "T", "V", "seed", "sequences"}


def test_dataset_validates_symbols():
    with pytest.raises(ValueError):
        Dataset(n=1, T=1, sequences=np.array([[0, 5]]), V=2)


def test_family_box_and_projection():
    rng = np.random.default_rng(31)
    fam = FiniteFamily(2, 2, rng.normal(size=theta_dim(2, 2)), 0.5)
    theta = fam.sample_theta(rng)
    assert np.all(theta >= fam.lo) and np.all(theta <= fam.hi)
    far = fam.center + 10.0
    assert np.allclose(fam.project(far), fam.hi)
    assert fam.diameter == pytest.approx(np.linalg.norm(fam.hi - fam.lo))


def test_functional_ar_model_bounds_and_sampling():
    ar = FunctionalARModel(
        amp=0.8, slope=1.0, shift=0.1, noise_sd=0.5, noise_sd_low=0.1, noise_sd_high=1.0,
        emit_amp=1.0, emit_slope=0.7, emit_shift=0.0, emit_sd=0.3,
    )
    assert ar.mean_range == (-0.8, 0.8)
    (m_lo, m_hi), (p_lo, p_hi) = ar.transition_envelope()
    assert m_hi == pytest.approx(0.8) and p_lo == pytest.approx(1.0) and p_hi == pytest.approx(100.0)
    a = sample_sequences(ar, 16, 5, seed=2)
    b = sample_sequences(ar, 16, 5, seed=2)
    assert np.array_equal(a.sequences, b.sequences)
    with pytest.raises(ValueError):
        FunctionalARModel(
            amp=1, slope=1, shift=0, noise_sd=2.0, noise_sd_low=0.1, noise_sd_high=1.0,
            emit_amp=1, emit_slope=1, emit_shift=0, emit_sd=0.3,
        )

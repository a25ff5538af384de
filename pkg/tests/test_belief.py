import numpy as np
import pytest

from hecta.belief import (InconsistentObservation, TinyModel, belief_update, brute_force_posterior,
                          dumps_model, filter_history, loads_model, random_model, sample_history)


def test_tiger_like_update():
    T = np.eye(2)
    O = np.array([[0.85, 0.15], [0.15, 0.85]])
    m = TinyModel(T, O, ("left", "right"))
    b = belief_update([0.5, 0.5], 0, 0, m)
    assert b == pytest.approx([0.85, 0.15], abs=1e-15)
    b = belief_update(b, 0, 0, m)
    assert b[0] == pytest.approx(0.85 ** 2 / (0.85 ** 2 + 0.15 ** 2))


def test_filter_matches_brute_force():
    rng = np.random.default_rng(0)
    for i in range(30):
        m = random_model(rng, int(rng.integers(2, 5)), 2, 3, sparsity=0.3 if i % 2 else 0.0)
        b0 = rng.random(m.n_states)
        b0 /= b0.sum()
        h = sample_history(rng, m, b0, int(rng.integers(0, 6)))
        f = filter_history(h, m, b0)
        assert np.max(np.abs(f - brute_force_posterior(h, m, b0))) <= 1e-10
        assert abs(f.sum() - 1) <= 1e-12


def test_zero_probability_observation():
    m = TinyModel(np.eye(2), np.array([[1.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(InconsistentObservation):
        belief_update([0.5, 0.5], 0, 1, m)
    with pytest.raises(InconsistentObservation):
        brute_force_posterior([(0, 1)], m, np.array([0.5, 0.5]))


def test_validation():
    with pytest.raises(ValueError):
        TinyModel(np.array([[0.5, 0.6], [0.5, 0.5]]), np.eye(2))
    with pytest.raises(ValueError):
        TinyModel(np.eye(2), np.eye(3))
    m = TinyModel(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        belief_update([0.7, 0.7], 0, 0, m)
    with pytest.raises(ValueError):
        brute_force_posterior([(0, 0)] * 30, m, np.array([0.5, 0.5]))


def test_text_roundtrip():
    m = random_model(np.random.default_rng(2), 3, 2, 2)
    m2 = loads_model(dumps_model(m))
    assert np.array_equal(m.T, m2.T) and np.array_equal(m.O, m2.O) and m.states == m2.states
    with pytest.raises(ValueError):
        loads_model("nonsense")


def test_deterministic_models_keep_point_masses():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        T = np.eye(n)[rng.integers(0, n, size=(2, n))]
        O = np.tile(np.eye(n), (2, 1, 1))
        m = TinyModel(T, O)
        b0 = np.eye(n)[rng.integers(n)]
        for a, o in sample_history(rng, m, b0, 6):
            b0 = belief_update(b0, a, o, m)
            assert sorted(b0) == [0.0] * (n - 1) + [1.0]

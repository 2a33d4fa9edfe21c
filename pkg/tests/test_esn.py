import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rppi.esn import (EsnModel, EsnParams, ReservoirError, build_reservoir, load_model, readout,
                      save_model, step)
from rppi.numerics import SeededRng, SparseMatrix


def duffing_params():
    return EsnParams(state_dim=400, input_dim=1, leak_rate=0.59, density=0.48,
                     spectral_radius=0.89, input_range=2.0, activation="tanh")


def test_params_validation():
    with pytest.raises(ValueError):
        EsnParams(10, leak_rate=0.0)
    with pytest.raises(ValueError):
        EsnParams(10, density=1.5)
    with pytest.raises(ValueError):
        EsnParams(10, spectral_radius=1.2)
    with pytest.raises(ValueError):
        EsnParams(10, input_range=0.0)
    with pytest.raises(ValueError):
        EsnParams(10, activation="relu")
    with pytest.raises(ValueError):
        EsnParams(10, input_dim=2, input_scale=(1.0,))


def test_duffing_reservoir_invariants():
    p = duffing_params()
    model = build_reservoir(p, SeededRng(0, 0))
    rho = np.max(np.abs(np.linalg.eigvals(model.w_res.to_dense())))
    assert 0.99 * 0.89 <= rho <= 1.01 * 0.89
    assert abs(model.w_res.nnz - 0.48 * 400 ** 2) <= 1
    assert np.all(np.abs(model.w_in) <= 2.0)
    assert model.w_in.shape == (400, 1)


def test_dense_small_reservoir_hits_target_radius():
    model = build_reservoir(EsnParams(3, 1, 1.0, 1.0, 0.5, 1.0), SeededRng(1, 0))
    assert model.w_res.nnz == 9
    assert_allclose(np.max(np.abs(np.linalg.eigvals(model.w_res.to_dense()))), 0.5, atol=1e-6)


def test_empty_reservoir():
    model = build_reservoir(EsnParams(5, 1, 1.0, 0.0, 0.0, 1.0), SeededRng(1, 0))
    assert model.w_res.nnz == 0
    assert_array_equal(model.w_res_dense, np.zeros((5, 5)))


def test_zero_radius_reservoir_with_positive_target_fails():
    with pytest.raises(ReservoirError):
        build_reservoir(EsnParams(5, 1, 1.0, 0.0, 0.5, 1.0), SeededRng(1, 0))


def test_build_reservoir_is_pure_in_seed():
    p = EsnParams(30, 2, 0.5, 0.2, 0.9, 1.0)
    a = build_reservoir(p, SeededRng(11, 0))
    b = build_reservoir(p, SeededRng(11, 0))
    assert_array_equal(a.w_res.to_dense(), b.w_res.to_dense())
    assert_array_equal(a.w_in, b.w_in)


def test_step_trivial_cases():
    model = build_reservoir(EsnParams(10, 1, 0.5, 0.3, 0.8, 1.0), SeededRng(0, 0))
    assert_array_equal(step(model, np.zeros(10), [0.0]), np.zeros(10))
    one = EsnModel(SparseMatrix.from_dense(np.eye(1)), np.eye(1),
                   EsnParams(1, 1, 1.0, 1.0, 1.0, 1.0, "identity"))
    assert_allclose(step(one, [1.0], [1.0]), [2.0])
    with pytest.raises(ValueError):
        step(model, np.zeros(10), [0.0, 1.0])


def test_step_matches_dense_oracle():
    rng = np.random.default_rng(5)
    p = EsnParams(40, 2, 0.3, 0.25, 0.9, 1.5)
    model = build_reservoir(p, SeededRng(2, 0))
    W, Win = model.w_res.to_dense(), model.w_in
    for _ in range(20):
        x = rng.uniform(-1, 1, 40)
        u = rng.standard_normal(2)
        ref = 0.7 * x + 0.3 * np.tanh(W @ x + Win @ u)
        assert_allclose(step(model, x, u), ref, rtol=1e-12, atol=1e-12)


def test_input_normalization_is_applied_before_input_weights():
    p = EsnParams(20, 2, 0.4, 0.3, 0.8, 1.0, input_center=(10.0, 10.0), input_scale=(2.0, 4.0))
    model = build_reservoir(p, SeededRng(4, 0))
    x = np.random.default_rng(0).uniform(-1, 1, 20)
    u = np.array([11.0, 6.0])
    ref = 0.6 * x + 0.4 * np.tanh(model.w_res.to_dense() @ x + model.w_in @ ((u - 10.0) / [2.0, 4.0]))
    assert_allclose(step(model, x, u), ref, rtol=1e-12, atol=1e-12)


def test_step_batch_matches_step():
    model = build_reservoir(EsnParams(30, 1, 0.6, 0.3, 0.9, 2.0), SeededRng(3, 0))
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (7, 30))
    u = rng.standard_normal((7, 1))
    batch = model.step_batch(x, u)
    for k in range(7):
        assert_allclose(batch[k], step(model, x[k], u[k]), rtol=1e-12, atol=1e-14)
    single = model.step_batch(x.astype(np.float32), u)
    assert single.dtype == np.float32
    assert_allclose(single, batch, atol=1e-5)


def test_state_stays_in_unit_box():
    model = build_reservoir(EsnParams(50, 1, 0.3, 0.3, 0.9, 2.0), SeededRng(6, 0))
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 50)
    for _ in range(300):
        x = step(model, x, rng.uniform(-20, 20, 1))
        assert np.all(np.abs(x) <= 1.0)


def test_echo_state_contraction():
    # same inputs, different starts: after washout the gap shrinks on average
    model = build_reservoir(EsnParams(50, 1, 0.5, 0.2, 0.8, 1.0), SeededRng(8, 0))
    rng = np.random.default_rng(3)
    non_increasing = 0
    for _ in range(100):
        u = rng.uniform(-1, 1, (120, 1))
        a, b = rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50)
        gaps = []
        for t in range(120):
            a, b = step(model, a, u[t]), step(model, b, u[t])
            gaps.append(np.linalg.norm(a - b))
        gaps = np.array(gaps[50:])
        non_increasing += np.mean(np.diff(gaps) <= 1e-15) > 0.5 and gaps[-1] <= gaps[0]
    assert non_increasing >= 90


def test_readout():
    assert_array_equal(readout(np.zeros((4, 2)), np.ones(4)), np.zeros(2))
    w = np.zeros((3, 1))
    w[0, 0] = 1.0
    assert_allclose(readout(w, [0.7, 0.2, -0.1]), [0.7])
    rng = np.random.default_rng(0)
    W, x = rng.standard_normal((6, 3)), rng.standard_normal(6)
    assert_allclose(readout(W, x), W.T @ x, rtol=1e-12)
    with pytest.raises(ValueError):
        readout(W, np.zeros(5))


def test_save_load_round_trip(tmp_path):
    p = EsnParams(25, 2, 0.4, 0.3, 0.7, 1.2, input_center=(1.0, -2.0), input_scale=(3.0, 0.5))
    model = build_reservoir(p, SeededRng(9, 0))
    path = tmp_path / "model.txt"
    save_model(model, path)
    back = load_model(path)
    assert back.params == model.params
    assert_array_equal(back.w_res.to_dense(), model.w_res.to_dense())
    assert_array_equal(back.w_in, model.w_in)
    assert path.read_text().startswith("rppi-esn 1\n")


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("something else\n")
    with pytest.raises(ValueError):
        load_model(path)

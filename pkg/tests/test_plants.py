import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rppi.plants import (DuffingParams, FourTankParams, Plant, duffing_energy, duffing_output,
                         duffing_step, fourtank_derivative, fourtank_output, fourtank_step)

MAIN = DuffingParams(m=1.1, k=1.1, k_nl=0.9, c=0.9, dt=0.1)


def test_duffing_equilibrium_and_hand_step():
    assert_array_equal(duffing_step(MAIN, [0.0, 0.0], [0.0]), [0.0, 0.0])
    unit = DuffingParams(1.0, 1.0, 1.0, 1.0, 0.1)
    assert_allclose(duffing_step(unit, [1.0, 0.0], [0.0]), [1.0, -0.2], atol=1e-15)


def test_duffing_forced_step():
    z = duffing_step(MAIN, [0.5, -0.3], [2.0])
    acc = (-1.1 * 0.5 - 0.9 * -0.3 - 0.9 * 0.5 ** 3 + 2.0) / 1.1
    assert_allclose(z, [0.5 + 0.1 * -0.3, -0.3 + 0.1 * acc], rtol=1e-15)


def test_duffing_free_response_decays():
    z = np.array([1.0, 0.0])
    energies = [duffing_energy(MAIN, z)]
    for _ in range(400):
        z = duffing_step(MAIN, z, [0.0])
        energies.append(duffing_energy(MAIN, z))
        assert np.all(np.abs(z) < 2.0)
    energies = np.array(energies)
    assert energies[-1] < 0.01 * energies[0]
    for i in range(0, 400, 10):
        assert energies[i + 10] <= energies[i] * (1 + 1e-2)


def test_duffing_output():
    assert_array_equal(duffing_output([1.0, -0.2]), [1.0])
    assert_array_equal(duffing_output([0.0, 5.0]), [0.0])
    z = np.random.default_rng(0).standard_normal(2)
    assert_array_equal(duffing_output(z), z[:1])


def test_param_validation():
    with pytest.raises(ValueError):
        DuffingParams(m=0.0)
    with pytest.raises(ValueError):
        FourTankParams(b=(1.2, 0.5))
    with pytest.raises(ValueError):
        FourTankParams(A=(1.0, 1.0, 1.0))


def test_fourtank_empty_equilibrium():
    p = FourTankParams()
    assert_array_equal(fourtank_step(p, np.zeros(4), [0.0, 0.0]), np.zeros(4))


def test_fourtank_steady_state_residual():
    p = FourTankParams()
    z = np.zeros(4)
    for _ in range(100_000):
        z = fourtank_step(p, z, [10.0, 10.0])
    assert np.max(np.abs(fourtank_derivative(p, z, [10.0, 10.0]))) < 1e-6
    # closed form: each outflow equals its inflow
    b1, b2 = p.b
    q3 = (1 - b2) * 10.0 / p.a[2]
    q4 = (1 - b1) * 10.0 / p.a[3]
    q1 = (p.a[2] * q3 + b1 * 10.0) / p.a[0]
    q2 = (p.a[3] * q4 + b2 * 10.0) / p.a[1]
    assert_allclose(z, np.array([q1, q2, q3, q4]) ** 2 / (2 * 981.0), rtol=1e-6)


def test_fourtank_main_parameters_bounded_and_nonnegative():
    p = FourTankParams()
    rng = np.random.default_rng(0)
    z = np.array([12.0, 12.0, 1.0, 1.0])
    for _ in range(1000):
        z = fourtank_step(p, z, rng.uniform(8, 12, 2))
        assert np.all(z >= 0) and np.all(z < 100)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 50.0), min_size=4, max_size=4),
       st.lists(st.floats(0.0, 30.0), min_size=2, max_size=2))
def test_fourtank_levels_never_negative(z, u):
    p = FourTankParams(dt=5.0)
    z = np.array(z)
    for _ in range(20):
        z = fourtank_step(p, z, u)
        assert np.all(z >= 0)


def test_fourtank_output():
    assert_array_equal(fourtank_output([13.0, 13.0, 2.0, 2.0]), [13.0, 13.0])
    assert_array_equal(fourtank_output(np.zeros(4)), [0.0, 0.0])


def test_plant_wrapper():
    plant = Plant(MAIN, [0.0, 0.0])
    assert (plant.kind, plant.input_dim, plant.output_dim, plant.dt) == ("duffing", 1, 1, 0.1)
    assert_array_equal(plant.step(plant.z0, [1.0]), duffing_step(MAIN, [0, 0], [1.0]))
    tank = Plant(FourTankParams(), [12, 12, 1, 1])
    assert (tank.input_dim, tank.output_dim) == (2, 2)
    with pytest.raises(ValueError):
        Plant(FourTankParams(), [1.0, 2.0])
    with pytest.raises(TypeError):
        Plant(object(), [0.0])

import numpy as np
import pytest

from heatnet._src.physics import (
    lmtd_chen,
    lmtd_with_grad,
    pipe_outlet_temperature,
    pipe_pressure_drop,
    pressure_drop_with_grad,
    radiator_heat,
    thermal_resistance,
)
from heatnet._src.utils import SimulationError, positive_part, smooth_abs
from heatnet.network import ConsumerSpec, GlobalParams

PARAMS = GlobalParams()
rng = np.random.default_rng(42)  # Global rng


def test_pressure_drop_reference_value():
    dp = pipe_pressure_drop(0.005, 0.1, 100.0, PARAMS)
    assert dp == pytest.approx(4499.0, rel=2e-2)


def test_pressure_drop_is_odd_and_scales_with_length():
    dp = pipe_pressure_drop(0.005, 0.1, 100.0, PARAMS)
    assert pipe_pressure_drop(-0.005, 0.1, 100.0, PARAMS) == pytest.approx(-dp)
    assert pipe_pressure_drop(0.005, 0.1, 200.0, PARAMS) == pytest.approx(2 * dp)
    assert pipe_pressure_drop(0.0, 0.1, 100.0, PARAMS) == 0.0
    # Thinner pipes lose more pressure, dp ~ d^-4.75
    ratio = pipe_pressure_drop(0.005, 0.05, 100.0, PARAMS) / dp
    assert ratio == pytest.approx(2**4.75)


def test_pressure_drop_rejects_non_positive_diameters():
    with pytest.raises(ValueError):
        pipe_pressure_drop(0.005, 0.0, 100.0, PARAMS)


@pytest.mark.parametrize("q_eps", [0.0, 1e-9])
def test_pressure_drop_derivatives(q_eps):
    q = rng.choice([-1.0, 1.0], 5) * rng.uniform(1e-3, 1e-2, 5)
    d = rng.uniform(0.05, 0.2, 5)
    L = rng.uniform(50, 200, 5)
    h = 1e-7
    _, dp_dq, dp_dd = pressure_drop_with_grad(q, d, L, PARAMS, q_eps)
    fd_q = (
        pressure_drop_with_grad(q + h, d, L, PARAMS, q_eps)[0]
        - pressure_drop_with_grad(q - h, d, L, PARAMS, q_eps)[0]
    ) / (2 * h)
    fd_d = (
        pressure_drop_with_grad(q, d + h, L, PARAMS, q_eps)[0]
        - pressure_drop_with_grad(q, d - h, L, PARAMS, q_eps)[0]
    ) / (2 * h)
    assert np.allclose(dp_dq, fd_q, rtol=1e-5)
    assert np.allclose(dp_dd, fd_d, rtol=1e-5)


def test_thermal_resistance_reference_value():
    assert thermal_resistance(0.1, PARAMS) == pytest.approx(2.062, abs=1e-3)


def test_thermal_resistance_rejects_shallow_pipes():
    # 4 h / r_insul = 1.143 m
    with pytest.raises(SimulationError):
        thermal_resistance(1.2, PARAMS)


def test_outlet_temperature():
    theta = pipe_outlet_temperature(50.0, 0.005, 0.1, 100.0, PARAMS)
    assert theta == pytest.approx(49.88, abs=1e-2)
    # Direction does not matter, only |q|
    assert pipe_outlet_temperature(50.0, -0.005, 0.1, 100.0, PARAMS) == pytest.approx(theta)
    # Slow water cools more
    assert pipe_outlet_temperature(50.0, 0.0005, 0.1, 100.0, PARAMS) < theta
    assert pipe_outlet_temperature(0.0, 0.005, 0.1, 100.0, PARAMS) == 0.0
    with pytest.raises(ValueError):
        pipe_outlet_temperature(-1.0, 0.005, 0.1, 100.0, PARAMS)


def test_lmtd_chen():
    assert lmtd_chen(30.0, 20.0) == pytest.approx(24.66, abs=1e-2)
    assert lmtd_chen(20.0, 30.0) == pytest.approx(lmtd_chen(30.0, 20.0))
    # Equal differences give the difference itself
    assert lmtd_chen(25.0, 25.0) == pytest.approx(25.0)
    # Chen's formula stays close to the exact logarithmic mean
    exact = (30.0 - 20.0) / np.log(30.0 / 20.0)
    assert lmtd_chen(30.0, 20.0) == pytest.approx(exact, rel=1e-3)
    with pytest.raises(ValueError):
        lmtd_chen(30.0, 0.0)


def test_lmtd_derivatives():
    dA = rng.uniform(5, 50, 4)
    dB = rng.uniform(5, 50, 4)
    h = 1e-6
    _, g_A, g_B = lmtd_with_grad(dA, dB)
    fd_A = (lmtd_with_grad(dA + h, dB)[0] - lmtd_with_grad(dA - h, dB)[0]) / (2 * h)
    fd_B = (lmtd_with_grad(dA, dB + h)[0] - lmtd_with_grad(dA, dB - h)[0]) / (2 * h)
    assert np.allclose(g_A, fd_A, rtol=1e-6)
    assert np.allclose(g_B, fd_B, rtol=1e-6)


def test_radiator_heat():
    spec = ConsumerSpec(demand=15e3, xi=200.0, n_exp=1.2, theta_house=10.0)
    assert radiator_heat(40.0, 30.0, spec) == pytest.approx(9.365e3, rel=1e-3)
    with pytest.raises(ValueError):
        radiator_heat(30.0, 40.0, spec)
    with pytest.raises(ValueError):
        radiator_heat(40.0, 5.0, spec)


def test_smoothing_helpers():
    q = np.array([-1.0, 0.0, 1.0])
    value, grad = smooth_abs(q, 1e-9)
    assert np.allclose(value, np.abs(q))
    assert np.allclose(grad, [-1.0, 0.0, 1.0])
    plus, slope = positive_part(q, 1e-9)
    assert np.allclose(plus, [0.0, 0.0, 1.0])
    assert np.allclose(slope, [0.0, 0.5, 1.0])

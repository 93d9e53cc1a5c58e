"""Pipe, heat loss and radiator correlations, with the derivatives used by the Newton solver and the adjoint."""
from __future__ import annotations

import numpy as np

from heatnet._src.utils import SimulationError

BLASIUS_COEFFICIENT = 0.3164
SINGULAR_LOSS_FACTOR = 100.0 / 70.0  # 30 % of the total drop is singular
HOURS_PER_YEAR = 8760.0


def _momentum_coefficient(params) -> float:
    # Blasius and Darcy-Weisbach folded into dp = C * L * d^-4.75 * |q|^0.75 * q
    rho, mu = params.rho, params.mu
    return (
        SINGULAR_LOSS_FACTOR
        * 8.0
        * rho
        / np.pi**2
        * BLASIUS_COEFFICIENT
        * (4.0 * rho / (np.pi * mu)) ** (-0.25)
    )


def pressure_drop_with_grad(q, d, L, params, q_eps: float):
    q, d, L = np.asarray(q, float), np.asarray(d, float), np.asarray(L, float)
    s = np.sqrt(q * q + q_eps * q_eps)
    coeff = _momentum_coefficient(params) * L * d ** (-4.75)
    s75 = s**0.75
    dp = coeff * s75 * q
    # d/dq (s^0.75 q) = s^0.75 (1 + 0.75 q^2 / s^2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(s > 0, q * q / np.where(s > 0, s * s, 1.0), 0.0)
    dp_dq = coeff * s75 * (1.0 + 0.75 * ratio)
    dp_dd = -4.75 * dp / d
    return dp, dp_dq, dp_dd


def thermal_resistance_with_grad(d, params):
    d = np.asarray(d, float)
    arg = 4.0 * params.h_depth / (params.r_insul * d)
    U = np.log(arg) / (2.0 * np.pi * params.lambda_g) + np.log(params.r_insul) / (
        2.0 * np.pi * params.lambda_i
    )
    dU_dd = -1.0 / (2.0 * np.pi * params.lambda_g * d)
    return U, dU_dd


def outlet_factor_with_grad(q, d, L, params, q_eps: float):
    """Ratio theta_out/theta_in = exp(-L / (rho cp |q| U)) and its derivatives."""
    q, L = np.asarray(q, float), np.asarray(L, float)
    s = np.sqrt(q * q + q_eps * q_eps)
    U, dU_dd = thermal_resistance_with_grad(d, params)
    a = L / (params.rho * params.cp * s * U)
    factor = np.exp(-a)
    da_dq = -a * q / (s * s)
    da_dd = -a * dU_dd / U
    return factor, -factor * da_dq, -factor * da_dd


def lmtd_with_grad(dA, dB):
    dA, dB = np.asarray(dA, float), np.asarray(dB, float)
    prod = 0.5 * dA * dB * (dA + dB)
    value = np.cbrt(prod)
    # Guard the cube-root derivative away from zero
    denom = 3.0 * np.maximum(value * value, 1e-12)
    d_dA = 0.5 * dB * (2.0 * dA + dB) / denom
    d_dB = 0.5 * dA * (dA + 2.0 * dB) / denom
    return value, d_dA, d_dB


def check_buried_pipe_diameter(d, params):
    limit = 4.0 * params.h_depth / params.r_insul
    if np.any(np.asarray(d) >= limit):
        raise SimulationError(
            f"Diameter {np.max(d)} m invalidates the buried pipe heat loss formula (must be below 4h/r = {limit:.4f} m)."
        )


# Public, validated scalar/array API
def pipe_pressure_drop(q, d, L, params, q_eps: float = 0.0):
    """Pressure drop over a pipe, Pa.

    Darcy-Weisbach with the Blasius friction factor ``f = 0.3164 Re^(-1/4)``, scaled by 100/70 to account for singular losses. The sign follows the flow ``q``.

    Args:
        q: Volumetric flow, m^3/s.
        d: Inner diameter, m.
        L: Length, m.
        params (GlobalParams): Fluid properties.
        q_eps (float): Smoothing of ``|q|`` around zero flow. Defaults to 0.

    Returns:
        Pressure drop ``p_tail - p_head``.
    """
    if np.any(np.asarray(d) <= 0):
        raise ValueError("Pipe diameters must be strictly positive.")
    dp, _, _ = pressure_drop_with_grad(q, d, L, params, q_eps)
    return dp


def thermal_resistance(d, params):
    """Thermal resistance per unit length of a buried insulated pipe, m K / W."""
    if np.any(np.asarray(d) <= 0):
        raise ValueError("Pipe diameters must be strictly positive.")
    check_buried_pipe_diameter(d, params)
    U, _ = thermal_resistance_with_grad(d, params)
    return U


def pipe_outlet_temperature(theta_in, q, d, L, params, q_eps: float = 1e-9):
    """Exit temperature above ambient of a pipe with inlet temperature ``theta_in``."""
    if np.any(np.asarray(theta_in) < 0):
        raise ValueError("Inlet temperatures must be non-negative.")
    if np.any(np.asarray(d) <= 0):
        raise ValueError("Pipe diameters must be strictly positive.")
    check_buried_pipe_diameter(d, params)
    factor, _, _ = outlet_factor_with_grad(q, d, L, params, q_eps)
    return np.asarray(theta_in, float) * factor


def lmtd_chen(dA, dB):
    """Chen's approximation of the logarithmic mean temperature difference."""
    if np.any(np.asarray(dA) <= 0) or np.any(np.asarray(dB) <= 0):
        raise ValueError("Temperature differences must be strictly positive.")
    value, _, _ = lmtd_with_grad(dA, dB)
    return value


def radiator_heat(theta_feed, theta_ret, spec):
    """Heat delivered by a radiator, W: ``xi * LMTD^n_exp``."""
    if not np.all(np.asarray(theta_feed) > np.asarray(theta_ret)) or not np.all(
        np.asarray(theta_ret) > spec.theta_house
    ):
        raise ValueError(
            "Radiator temperatures must satisfy theta_feed > theta_ret > theta_house."
        )
    lmtd = lmtd_chen(
        np.asarray(theta_feed) - spec.theta_house,
        np.asarray(theta_ret) - spec.theta_house,
    )
    return spec.xi * lmtd**spec.n_exp

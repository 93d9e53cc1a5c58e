from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from heatnet._src.physics import HOURS_PER_YEAR
from heatnet.network import DesignVector, Network, StateVector

logger = logging.getLogger("heatnet")

COST_COMPONENTS = ("pipe_capex", "heat_capex", "heat_opex", "pump_opex")
DEFAULT_SIGMOID_SLOPE = 400.0  # 1/m


class NPVFactors(NamedTuple):
    f_CAP: float
    f_OP: float


class FunctionalValue(NamedTuple):
    value: float
    grad_state: StateVector
    grad_design: DesignVector


@dataclass
class CostBreakdown:
    """Cost components of a design. OPEX components are per year and only NPV-weighted in ``total_npv``."""

    pipe_capex: float
    heat_capex: float
    heat_opex_annualized: float
    pump_opex_annualized: float
    total_npv: float
    f_CAP: float
    f_OP: float
    horizon: float

    @property
    def total_annualized(self) -> float:
        if self.horizon == 0:
            return float("nan")
        return self.total_npv / self.horizon

    @property
    def heat_cost(self) -> float:
        """NPV of all heat related costs (capacity and energy)."""
        return self.f_CAP * self.heat_capex + self.f_OP * self.heat_opex_annualized

    def to_dict(self) -> dict:
        return cost_report(self)


def npv_factors(A: float, e_a: float, e_i: float, mode: str = "printed") -> NPVFactors:
    """Net-present-value multipliers for capital and yearly operating costs over a horizon of ``A`` years.

    With ``mode="printed"`` the factors are ``f_CAP = (1+e_a)^A`` and
    ``f_OP = (1 - (1+e_a)^A (1+e_i)^A) / (1 - (1+e_a)(1+e_i))``, falling back to
    ``f_OP = A`` when the denominator vanishes. With ``mode="discounted"`` capital is
    paid upfront (``f_CAP = 1``) and yearly costs grow with ``e_i`` while being
    discounted with ``e_a``.

    Args:
        A (float): Investment horizon, years.
        e_a (float): Interest rate.
        e_i (float): Price increase rate.
        mode (str): ``"printed"`` or ``"discounted"``.

    Returns:
        The pair ``(f_CAP, f_OP)``.
    """
    if A < 0:
        raise ValueError(f"Invalid horizon A={A}. Must be non-negative.")
    if mode == "printed":
        f_cap = (1.0 + e_a) ** A
        denom = 1.0 - (1.0 + e_a) * (1.0 + e_i)
        if np.isclose(denom, 0.0, atol=1e-14):
            f_op = float(A)
        else:
            f_op = (1.0 - (1.0 + e_a) ** A * (1.0 + e_i) ** A) / denom
    elif mode == "discounted":
        f_cap = 1.0
        ratio = (1.0 + e_i) / (1.0 + e_a)
        if np.isclose(ratio, 1.0, rtol=0.0, atol=1e-14):
            f_op = float(A)
        else:
            f_op = (1.0 - ratio**A) / (1.0 - ratio)
    else:
        raise ValueError("Invalid mode. Allowed values are 'printed' and 'discounted'.")
    return NPVFactors(float(f_cap), float(f_op))


def network_npv_factors(network: Network) -> NPVFactors:
    p = network.params
    return npv_factors(p.horizon, p.e_a, p.e_i, p.npv_mode)


def sigmoid_fixed_cost(d, k: float, d_min: float, p0: float, form: str = "sigmoid"):
    """Smooth replacement of the fixed installation cost ``p0`` (EUR/m) of a pipe with diameter ``d``.

    ``form="sigmoid"`` returns ``p0 / (1 + exp(-k (d - d_min)))``, close to zero for
    ``d << d_min`` and close to ``p0`` for ``d >> d_min``. ``form="printed"`` returns
    ``p0 (1 / (1 + exp(-k (d - d_min))) - 1)``, which is non-positive.
    """
    if k <= 0:
        raise ValueError(f"Invalid slope k={k}. Must be strictly positive.")
    s = expit(k * (np.asarray(d, float) - d_min))
    if form == "sigmoid":
        return p0 * s
    if form == "printed":
        return p0 * (s - 1.0)
    raise ValueError("Invalid form. Allowed values are 'sigmoid' and 'printed'.")


def _sigmoid_slope(d, k, d_min, p0):
    s = expit(k * (np.asarray(d, float) - d_min))
    return p0 * k * s * (1.0 - s)


def _fixed_cost_per_meter(
    network: Network,
    d: np.ndarray,
    mode: str,
    k: float,
    relaxed_mask: Optional[np.ndarray],
):
    p = network.params
    if mode == "raw":
        value = np.where(d > 0, p.p0, 0.0)
        slope = np.zeros_like(d)
    elif mode == "penalized":
        value = sigmoid_fixed_cost(d, k, p.d_min, p.p0, form=p.sigmoid_form)
        slope = _sigmoid_slope(d, k, p.d_min, p.p0)
    else:
        raise ValueError("Invalid mode. Allowed values are 'raw' and 'penalized'.")
    if relaxed_mask is not None:
        # Existence relaxed to phi = d / D_max
        value = np.where(relaxed_mask, p.p0 * d / p.D_max, value)
        slope = np.where(relaxed_mask, p.p0 / p.D_max, slope)
    return value, slope


def pipe_capex(
    design: DesignVector,
    network: Network,
    mode: str = "raw",
    k: float = DEFAULT_SIGMOID_SLOPE,
    relaxed_mask: Optional[np.ndarray] = None,
) -> float:
    """Investment cost of all pipes, EUR: ``sum (p1 d + p0_effective(d)) L`` over feed and return pipes.

    Args:
        design (DesignVector): Pipe diameters.
        network (Network): Superstructure.
        mode (str): ``"raw"`` charges ``p0`` on every existing pipe (``d > 0``), ``"penalized"`` charges the sigmoid fixed cost with slope ``k``.
        k (float): Sigmoid slope, 1/m. Only used when ``mode == "penalized"``.
        relaxed_mask (np.ndarray or None): Boolean mask over pipes whose existence is relaxed, these are charged ``p0 d / D_max``.
    """
    d = np.asarray(design.d, float)
    fixed, _ = _fixed_cost_per_meter(network, d, mode, k, relaxed_mask)
    return float(np.sum((network.params.p1 * d + fixed) * network.pipe_lengths))


def pipe_capex_grad(
    design: DesignVector,
    network: Network,
    mode: str = "raw",
    k: float = DEFAULT_SIGMOID_SLOPE,
    relaxed_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    d = np.asarray(design.d, float)
    _, slope = _fixed_cost_per_meter(network, d, mode, k, relaxed_mask)
    return (network.params.p1 + slope) * network.pipe_lengths


def _producer_terms(state: StateVector, network: Network):
    arcs = network.arc_edges
    q = state.q[arcs]
    feed = network.heads[arcs]
    ret = network.tails[arcs]
    Theta = np.array([s.Theta for s in network.producers.values()])
    lift = state.p[feed] - state.p[ret]
    return q, Theta - state.theta[ret], lift, feed, ret


def _price(network: Network, name: str) -> np.ndarray:
    return np.array([getattr(s, name) for s in network.producers.values()])


def _heat_coefficient(network: Network, component: str) -> float:
    p = network.params
    if component == "heat_capex":
        # W -> kW for the EUR/kW capacity price
        return p.rho * p.cp / (p.F_cap * p.eta_pr) / 1000.0
    return p.rho * p.cp / p.eta_pr * HOURS_PER_YEAR / 1000.0


def heat_capex(state: StateVector, network: Network) -> float:
    """Capacity cost of heat production, EUR."""
    q, dtheta, _, _, _ = _producer_terms(state, network)
    c = _heat_coefficient(network, "heat_capex")
    return float(c * np.sum(_price(network, "C_hC") * q * dtheta))


def heat_opex(state: StateVector, network: Network) -> float:
    """Yearly cost of the produced heat, EUR/year."""
    q, dtheta, _, _, _ = _producer_terms(state, network)
    c = _heat_coefficient(network, "heat_opex")
    return float(c * np.sum(_price(network, "C_hO") * q * dtheta))


def pump_opex(state: StateVector, network: Network) -> float:
    """Yearly electricity cost of the producer pumps, EUR/year."""
    q, _, lift, _, _ = _producer_terms(state, network)
    negative = (lift < 0) & (q > 0)
    if np.any(negative):
        ids = [network.producer_ids[i] for i in np.flatnonzero(negative)]
        logger.warning(
            f"Negative pump lift at producers {ids}, their pumping cost is set to zero."
        )
    c = HOURS_PER_YEAR / network.params.eta_pump / 1000.0
    return float(c * np.sum(_price(network, "C_pO") * np.maximum(lift, 0.0) * q))


def total_cost(
    design: DesignVector,
    state: StateVector,
    network: Network,
    mode: str = "raw",
    k: float = DEFAULT_SIGMOID_SLOPE,
    relaxed_mask: Optional[np.ndarray] = None,
) -> CostBreakdown:
    """Net present value of the four cost components of a simulated design."""
    f = network_npv_factors(network)
    pipe = pipe_capex(design, network, mode=mode, k=k, relaxed_mask=relaxed_mask)
    h_cap = heat_capex(state, network)
    h_op = heat_opex(state, network)
    p_op = pump_opex(state, network)
    total = f.f_CAP * (pipe + h_cap) + f.f_OP * (h_op + p_op)
    return CostBreakdown(
        pipe_capex=pipe,
        heat_capex=h_cap,
        heat_opex_annualized=h_op,
        pump_opex_annualized=p_op,
        total_npv=float(total),
        f_CAP=f.f_CAP,
        f_OP=f.f_OP,
        horizon=float(network.params.horizon),
    )


def _zero_state_like(state: StateVector) -> StateVector:
    return StateVector(
        np.zeros_like(state.q),
        np.zeros_like(state.p),
        np.zeros_like(state.theta),
        np.zeros_like(state.theta_exit),
    )


def cost_sensitivities(
    network: Network,
    design: DesignVector,
    state: StateVector,
    component: str = "total_cost",
    mode: str = "raw",
    k: float = DEFAULT_SIGMOID_SLOPE,
    relaxed_mask: Optional[np.ndarray] = None,
) -> FunctionalValue:
    """Value and partial derivatives (state and explicit design) of a cost component.

    ``component`` is one of ``"pipe_capex"``, ``"heat_capex"``, ``"heat_opex"``,
    ``"pump_opex"`` (unweighted, OPEX per year) or ``"total_cost"`` (NPV).
    """
    if component == "total_cost":
        f = network_npv_factors(network)
        weights = {
            "pipe_capex": f.f_CAP,
            "heat_capex": f.f_CAP,
            "heat_opex": f.f_OP,
            "pump_opex": f.f_OP,
        }
    elif component in COST_COMPONENTS:
        weights = {component: 1.0}
    else:
        raise ValueError(
            f"Unknown cost component {component!r}. Allowed values are {COST_COMPONENTS + ('total_cost',)}."
        )

    g_state = _zero_state_like(state)
    g_d = np.zeros_like(design.d, dtype=float)
    value = 0.0
    q, dtheta, lift, feed, ret = _producer_terms(state, network)
    arcs = network.arc_edges
    for name, w in weights.items():
        if name == "pipe_capex":
            value += w * pipe_capex(design, network, mode, k, relaxed_mask)
            g_d += w * pipe_capex_grad(design, network, mode, k, relaxed_mask)
        elif name in ("heat_capex", "heat_opex"):
            price = _price(network, "C_hC" if name == "heat_capex" else "C_hO")
            c = w * _heat_coefficient(network, name) * price
            value += float(np.sum(c * q * dtheta))
            np.add.at(g_state.q, arcs, c * dtheta)
            np.add.at(g_state.theta, ret, -c * q)
        else:
            c = w * HOURS_PER_YEAR / network.params.eta_pump / 1000.0
            c = c * _price(network, "C_pO")
            pos = lift > 0
            value += float(np.sum(c * np.maximum(lift, 0.0) * q))
            np.add.at(g_state.q, arcs, c * np.maximum(lift, 0.0))
            np.add.at(g_state.p, feed, np.where(pos, c * q, 0.0))
            np.add.at(g_state.p, ret, np.where(pos, -c * q, 0.0))
    g_design = DesignVector(g_d, np.zeros_like(design.gamma, dtype=float))
    return FunctionalValue(float(value), g_state, g_design)


def cost_report(breakdown: CostBreakdown) -> dict:
    return {
        "components": {
            "pipe_capex": breakdown.pipe_capex,
            "heat_capex": breakdown.heat_capex,
            "heat_opex_annualized": breakdown.heat_opex_annualized,
            "pump_opex_annualized": breakdown.pump_opex_annualized,
        },
        "factors": {"f_CAP": breakdown.f_CAP, "f_OP": breakdown.f_OP},
        "horizon": breakdown.horizon,
        "total_npv": breakdown.total_npv,
        "total_annualized": breakdown.total_annualized,
    }

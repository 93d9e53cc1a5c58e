import numpy as np
import pytest

from heatnet.costing import (
    cost_sensitivities,
    heat_capex,
    heat_opex,
    npv_factors,
    pipe_capex,
    pump_opex,
    sigmoid_fixed_cost,
    total_cost,
)
from heatnet.datasets import SuperstructureBuilder
from heatnet.network import ConsumerSpec, GlobalParams, ProducerSpec, StateVector

PARAMS = GlobalParams()
RHO_CP = PARAMS.rho * PARAMS.cp


def make_line_network(params=None):
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    consumer = builder.add_consumer((100.0, 0.0), ConsumerSpec(demand=15e3))
    builder.add_pipe(producer, consumer)
    return builder.build(params)


def producer_state(network, q_arc, theta_return, lift=0.0):
    # Only the producer arc and its end nodes are set
    state = StateVector(
        np.zeros(network.num_edges),
        np.zeros(network.num_nodes),
        np.zeros(network.num_nodes),
        np.zeros(network.num_edges),
    )
    arc = network.arc_edges[0]
    state.q[arc] = q_arc
    state.theta[network.tails[arc]] = theta_return
    state.p[network.heads[arc]] = lift
    return state


def test_npv_factors():
    f = npv_factors(30, 0.04, 0.04)
    assert f.f_CAP == pytest.approx(3.2434, abs=1e-4)
    assert f.f_OP == pytest.approx(116.66, abs=1e-2)


def test_npv_factors_edge_cases():
    assert npv_factors(0, 0.04, 0.04) == (1.0, 0.0)
    # Vanishing denominator falls back to the horizon
    assert npv_factors(30, 0.0, 0.0).f_OP == pytest.approx(30.0)
    f = npv_factors(30, 0.04, 0.04, mode="discounted")
    assert f.f_CAP == 1.0
    assert f.f_OP == pytest.approx(30.0)
    with pytest.raises(ValueError):
        npv_factors(-1, 0.04, 0.04)
    with pytest.raises(ValueError):
        npv_factors(30, 0.04, 0.04, mode="wrong")


def test_sigmoid_fixed_cost():
    p = PARAMS
    assert sigmoid_fixed_cost(p.d_min, 400.0, p.d_min, p.p0) == pytest.approx(p.p0 / 2)
    assert sigmoid_fixed_cost(p.D_max, 400.0, p.d_min, p.p0) == pytest.approx(p.p0, rel=1e-6)
    assert sigmoid_fixed_cost(0.0, 400.0, p.d_min, p.p0) < 1e-2 * p.p0
    printed = sigmoid_fixed_cost(p.d_min, 400.0, p.d_min, p.p0, form="printed")
    assert printed == pytest.approx(-p.p0 / 2)
    with pytest.raises(ValueError):
        sigmoid_fixed_cost(0.1, 0.0, p.d_min, p.p0)


def test_pipe_capex():
    network = make_line_network()
    design = network.design_from_pairs([0.1])
    # Feed and return pipe, 49903 EUR each
    assert pipe_capex(design, network) == pytest.approx(2 * 49903.0, rel=1e-4)
    removed = network.design_from_pairs([0.0])
    assert pipe_capex(removed, network) == 0.0
    penalized = pipe_capex(design, network, mode="penalized", k=100.0)
    assert penalized < pipe_capex(design, network)
    assert penalized == pytest.approx(pipe_capex(design, network), rel=1e-3)
    relaxed = pipe_capex(design, network, relaxed_mask=np.ones(network.num_pipes, dtype=bool))
    expected = 2 * 100.0 * (PARAMS.p1 * 0.1 + PARAMS.p0 * 0.1 / PARAMS.D_max)
    assert relaxed == pytest.approx(expected)


def test_heat_and_pump_costs():
    network = make_line_network()
    q = 1e5 / (RHO_CP * 30.0)  # 100 kW at a 30 K drop
    state = producer_state(network, q, theta_return=30.0)
    assert heat_capex(state, network) == pytest.approx(269360.0, rel=1e-4)
    assert heat_opex(state, network) == pytest.approx(58400.0, rel=1e-4)
    assert pump_opex(state, network) == 0.0

    state = producer_state(network, 0.01, theta_return=30.0, lift=1e5)
    assert pump_opex(state, network) == pytest.approx(1376.6, abs=0.1)


def test_negative_lift_is_not_charged(caplog):
    network = make_line_network()
    state = producer_state(network, 0.01, theta_return=30.0, lift=-1e4)
    assert pump_opex(state, network) == 0.0
    assert "Negative pump lift" in caplog.text


def test_total_cost_combines_components():
    network = make_line_network()
    design = network.design_from_pairs([0.1])
    state = producer_state(network, 1e5 / (RHO_CP * 30.0), theta_return=30.0, lift=1e5)
    cost = total_cost(design, state, network)
    f = npv_factors(30, 0.04, 0.04)
    expected = f.f_CAP * (cost.pipe_capex + cost.heat_capex) + f.f_OP * (
        cost.heat_opex_annualized + cost.pump_opex_annualized
    )
    assert cost.total_npv == pytest.approx(expected)
    assert cost.total_annualized == pytest.approx(cost.total_npv / 30.0)
    assert set(cost.to_dict()["components"]) == {
        "pipe_capex",
        "heat_capex",
        "heat_opex_annualized",
        "pump_opex_annualized",
    }


def test_discounted_mode_changes_weights():
    network = make_line_network(GlobalParams(npv_mode="discounted"))
    design = network.design_from_pairs([0.1])
    state = producer_state(network, 1e-3, theta_return=30.0)
    cost = total_cost(design, state, network)
    assert cost.f_CAP == 1.0
    assert cost.f_OP == pytest.approx(30.0)


@pytest.mark.parametrize("component", ["pipe_capex", "heat_capex", "heat_opex", "pump_opex", "total_cost"])
@pytest.mark.parametrize("mode", ["raw", "penalized"])
def test_cost_sensitivities_match_finite_differences(component, mode):
    network = make_line_network()
    design = network.design_from_pairs([0.05])
    state = producer_state(network, 2e-3, theta_return=25.0, lift=3e4)
    state.p[network.tails[network.arc_edges[0]]] = 1e3
    fv = cost_sensitivities(network, design, state, component=component, mode=mode, k=100.0)

    def value(d=None, q=None, theta=None, p=None):
        trial = StateVector(state.q.copy(), state.p.copy(), state.theta.copy(), state.theta_exit.copy())
        trial_design = network.design_from_pairs([0.05])
        if d is not None:
            trial_design.d[0] = d
        if q is not None:
            trial.q[network.arc_edges[0]] = q
        if theta is not None:
            trial.theta[network.tails[network.arc_edges[0]]] = theta
        if p is not None:
            trial.p[network.heads[network.arc_edges[0]]] = p
        return cost_sensitivities(network, trial_design, trial, component=component, mode=mode, k=100.0).value

    arc = network.arc_edges[0]
    feed, ret = network.heads[arc], network.tails[arc]
    h = 1e-7
    assert fv.grad_design.d[0] == pytest.approx((value(d=0.05 + h) - value(d=0.05 - h)) / (2 * h), rel=1e-5)
    h = 1e-9
    assert fv.grad_state.q[arc] == pytest.approx(
        (value(q=2e-3 + h) - value(q=2e-3 - h)) / (2 * h), rel=1e-5, abs=1e-6
    )
    h = 1e-4
    assert fv.grad_state.theta[ret] == pytest.approx(
        (value(theta=25.0 + h) - value(theta=25.0 - h)) / (2 * h), rel=1e-5, abs=1e-6
    )
    h = 1e-2
    assert fv.grad_state.p[feed] == pytest.approx(
        (value(p=3e4 + h) - value(p=3e4 - h)) / (2 * h), rel=1e-5, abs=1e-6
    )


def test_cost_sensitivities_unknown_component():
    network = make_line_network()
    design = network.design_from_pairs([0.1])
    state = producer_state(network, 1e-3, theta_return=30.0)
    with pytest.raises(ValueError):
        cost_sensitivities(network, design, state, component="unknown")

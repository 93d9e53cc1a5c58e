import numpy as np
import pytest
from scipy.optimize import brentq

from heatnet._src.physics import lmtd_chen, pipe_pressure_drop, thermal_resistance
from heatnet._src.utils import AdjointError, DisconnectedConsumerError, SimulationError
from heatnet.costing import total_cost
from heatnet.datasets import (
    CircularCaseSpec,
    SuperstructureBuilder,
    TwoProducerCaseSpec,
    build_circular,
    build_two_producer,
)
from heatnet.models import slack_supplied
from heatnet.network import ConsumerSpec, ProducerSpec, uniform_design
from heatnet.simulator import (
    SolverSettings,
    adjoint_gradient,
    edge_table,
    evaluate_design,
    producer_shares,
    required_supply_temperature,
    solve_state,
)

DEMAND = 15e3
THETA = 60.0
LENGTH = 100.0
DIAMETER = 0.1
# Feed pipe, return pipe, heating system and producer arc of the line network
FEED, RETURN, HEATING, ARC = 0, 1, 2, 3


def make_line_network():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=THETA))
    consumer = builder.add_consumer((LENGTH, 0.0), ConsumerSpec(DEMAND))
    builder.add_pipe(producer, consumer)
    return builder.build()


def make_two_producer_network():
    builder = SuperstructureBuilder()
    left = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=THETA))
    consumer = builder.add_consumer((LENGTH, 0.0), ConsumerSpec(DEMAND))
    right = builder.add_producer((2 * LENGTH, 0.0), ProducerSpec(Theta=THETA))
    builder.add_pipe(left, consumer)
    builder.add_pipe(right, consumer)
    return builder.build()


def line_oracle(network):
    """Flow, consumer supply and return temperature of the line network, solved by scalar root finding."""
    params = network.params
    rho_cp = params.rho * params.cp
    spec = network.consumers[1]
    U = thermal_resistance(DIAMETER, params)
    driving = (spec.demand / spec.xi) ** (1.0 / spec.n_exp)

    def supply(q):
        return THETA * np.exp(-LENGTH / (rho_cp * q * U))

    def ret(q):
        dA = supply(q) - spec.theta_house
        b = brentq(lambda b: lmtd_chen(dA, b) - driving, 1e-9, dA * (1 - 1e-12), xtol=1e-14)
        return spec.theta_house + b

    q = brentq(lambda q: rho_cp * q * (supply(q) - ret(q)) - spec.demand, 1e-4, 1e-2, xtol=1e-16)
    return q, supply(q), ret(q)


def test_line_network_matches_oracle():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    sim = solve_state(network, design)
    assert sim.converged
    assert sim.residual_norm <= 1e-8
    state = sim.state

    q, theta_supply, theta_return = line_oracle(network)
    assert np.allclose(state.q, q, rtol=1e-5)
    idx = network.node_index
    Pf, Cf, Pr, Cr = idx[0], idx[1], idx[2], idx[3]
    assert state.theta[Cf] == pytest.approx(theta_supply, rel=1e-5)
    assert state.theta_exit[HEATING] == pytest.approx(theta_return, rel=1e-5)
    assert state.theta[Pf] == pytest.approx(THETA)
    params = network.params
    U = thermal_resistance(DIAMETER, params)
    cooled = theta_return * np.exp(-LENGTH / (params.rho * params.cp * q * U))
    assert state.theta[Pr] == pytest.approx(cooled, rel=1e-5)

    dp = pipe_pressure_drop(q, DIAMETER, LENGTH, params)
    setpoint = SolverSettings().dp_setpoint
    assert state.p[Pr] == pytest.approx(0.0, abs=1e-6)
    assert state.p[Cr] == pytest.approx(dp, rel=1e-5)
    assert state.p[Cf] == pytest.approx(dp + setpoint, rel=1e-5)
    assert state.p[Pf] == pytest.approx(2 * dp + setpoint, rel=1e-5)


def test_heat_balance_of_line_network():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    state = solve_state(network, design).state
    params = network.params
    rho_cp = params.rho * params.cp
    idx = network.node_index
    delivered = rho_cp * state.q[HEATING] * (state.theta[idx[1]] - state.theta_exit[HEATING])
    assert delivered == pytest.approx(DEMAND, rel=1e-6)
    produced = rho_cp * state.q[ARC] * (THETA - state.theta[idx[2]])
    # Production covers the demand and the losses of both pipes
    assert produced > DEMAND


def test_evaluate_design_prices_the_state():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    evaluation = evaluate_design(network, design)
    assert evaluation.cost is not None
    expected = total_cost(design, evaluation.sim.state, network)
    assert evaluation.cost.total_npv == pytest.approx(expected.total_npv)
    assert evaluation.cost.pipe_capex == pytest.approx(2 * 49903.0, rel=1e-4)
    assert evaluation.cost.pump_opex_annualized > 0


@pytest.mark.parametrize("d_pair", [0.0, 5e-5])
def test_isolated_consumer_is_reported(d_pair):
    network = make_line_network()
    with pytest.raises(DisconnectedConsumerError) as err:
        solve_state(network, network.design_from_pairs([d_pair]))
    assert err.value.consumers == [1]


def test_invalid_designs():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    design.d[0] = np.nan
    with pytest.raises(ValueError):
        solve_state(network, design)
    with pytest.raises(SimulationError):
        solve_state(network, network.design_from_pairs([1.2]))


def test_non_convergence_is_reported():
    network = make_line_network()
    settings = SolverSettings(tol=1e-30, max_iter=1)
    evaluation = evaluate_design(network, network.design_from_pairs([DIAMETER]), settings)
    assert not evaluation.sim.converged
    assert evaluation.cost is None
    with pytest.raises(AdjointError):
        adjoint_gradient(network, network.design_from_pairs([DIAMETER]), sim=evaluation.sim)


def test_warm_start_converges_immediately():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    sim = solve_state(network, design)
    warm = solve_state(network, design, x0=sim.state)
    assert warm.converged
    assert warm.iterations <= 1


def test_adjoint_matches_finite_differences():
    network = make_line_network()
    settings = SolverSettings(tol=1e-10)
    design = network.design_from_pairs([DIAMETER])
    grad, value = adjoint_gradient(network, design, "total_cost", settings, return_value=True)
    assert value == pytest.approx(evaluate_design(network, design, settings).cost.total_npv)

    h = 1e-5
    for i in (FEED, RETURN):
        plus, minus = design.copy(), design.copy()
        plus.d[i] += h
        minus.d[i] -= h
        fd = (
            evaluate_design(network, plus, settings).cost.total_npv
            - evaluate_design(network, minus, settings).cost.total_npv
        ) / (2 * h)
        assert grad.d[i] == pytest.approx(fd, rel=1e-3)
    # A single producer is the slack producer, its inflow is not a free variable
    assert np.allclose(grad.gamma, 0.0)


def test_adjoint_of_explicit_functionals():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    grad = adjoint_gradient(network, design, "pipe_capex")
    assert np.allclose(grad.d, network.params.p1 * LENGTH)
    grad = adjoint_gradient(network, design, "constant", value=3.0)
    assert np.allclose(grad.d, 0.0)
    with pytest.raises(ValueError):
        adjoint_gradient(network, design, "unknown")


def test_two_producers_share_the_supply():
    network = make_two_producer_network()
    design = network.design_from_pairs([DIAMETER, DIAMETER])
    sim = solve_state(network, design)
    assert sim.converged
    # The second producer injects its prescribed inflow
    arc_right = network.arc_edges[1]
    assert sim.state.q[arc_right] == pytest.approx(design.gamma[1], rel=1e-6)
    shares = producer_shares(network, sim.state)
    assert shares.shape == (1, 2)
    assert shares.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.all(shares > 0.1)


def test_single_producer_supplies_everything():
    network = make_line_network()
    sim = solve_state(network, network.design_from_pairs([DIAMETER]))
    assert np.allclose(producer_shares(network, sim.state), [[1.0]])


def test_edge_table():
    network = make_line_network()
    design = network.design_from_pairs([DIAMETER])
    sim = solve_state(network, design)
    rows = edge_table(network, design, sim.state)
    assert len(rows) == network.num_edges
    assert set(rows[0]) == {"id", "kind", "d", "q", "dp", "theta_in", "theta_out"}
    assert rows[FEED]["kind"] == "pipe-feed"
    assert rows[FEED]["d"] == DIAMETER
    assert rows[HEATING]["dp"] == pytest.approx(SolverSettings().dp_setpoint, rel=1e-6)
    assert rows[FEED]["theta_out"] < rows[FEED]["theta_in"]


def test_required_supply_temperature():
    spec = ConsumerSpec(DEMAND)
    expected = spec.theta_house + 1.1 * (DEMAND / spec.xi) ** (1 / spec.n_exp)
    assert required_supply_temperature(spec) == pytest.approx(expected)
    assert required_supply_temperature(ConsumerSpec(0.0)) == pytest.approx(spec.theta_house)
    # The linear radiator is calibrated at the nominal point and needs it
    with pytest.raises(ValueError):
        required_supply_temperature(spec, radiator="linear")
    assert required_supply_temperature(spec, radiator="linear", Theta_nominal=THETA) > spec.theta_house


def test_solver_settings():
    with pytest.raises(ValueError):
        SolverSettings(radiator="wrong")
    with pytest.raises(ValueError):
        SolverSettings(backtrack_factor=1.0)
    with pytest.raises(ValueError):
        SolverSettings.from_dict({"tolerance": 1e-6})
    assert SolverSettings.from_dict({"tol": 1e-6}).tol == 1e-6


def make_symmetric_network():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=THETA))
    for x in (-LENGTH, LENGTH):
        consumer = builder.add_consumer((x, 0.0), ConsumerSpec(DEMAND))
        builder.add_pipe(producer, consumer)
    return builder.build()


def directional_fd(network, design, direction, settings, h=1e-5):
    plus, minus = design.copy(), design.copy()
    plus.d += h * direction
    minus.d -= h * direction
    return (
        evaluate_design(network, plus, settings).cost.total_npv
        - evaluate_design(network, minus, settings).cost.total_npv
    ) / (2 * h)


def check_random_directions(network, design, settings, n_directions=20, rel=1e-4):
    rng = np.random.default_rng(42)
    grad = adjoint_gradient(network, design, "total_cost", settings)
    for _ in range(n_directions):
        direction = rng.standard_normal(network.num_pipes)
        direction /= np.linalg.norm(direction)
        fd = directional_fd(network, design, direction, settings)
        assert grad.d @ direction == pytest.approx(fd, rel=rel, abs=1e-6 * np.abs(grad.d).sum())


def test_adjoint_along_random_directions():
    network = make_line_network()
    settings = SolverSettings(tol=1e-10)
    check_random_directions(network, network.design_from_pairs([DIAMETER]), settings)


def test_critical_consumer_is_a_soft_minimum():
    network = make_symmetric_network()
    design = network.design_from_pairs([DIAMETER, DIAMETER])
    settings = SolverSettings()
    sim = solve_state(network, design, settings)
    assert sim.converged
    rows = edge_table(network, design, sim.state)
    valves = np.array([rows[e]["dp"] for e in network.hs_edges])
    # Two tied consumers share the setpoint
    expected = settings.dp_setpoint + settings.dp_softmin * np.log(2.0)
    assert np.allclose(valves, expected, rtol=1e-6)

    hard = SolverSettings(dp_softmin=0.0)
    sim = solve_state(network, design, hard)
    rows = edge_table(network, design, sim.state)
    valves = np.array([rows[e]["dp"] for e in network.hs_edges])
    assert np.allclose(valves, hard.dp_setpoint, rtol=1e-6)


def test_adjoint_is_smooth_across_tied_consumers():
    network = make_symmetric_network()
    settings = SolverSettings(tol=1e-10)
    check_random_directions(network, network.design_from_pairs([DIAMETER, DIAMETER]), settings)


def test_adjoint_of_the_producer_inflow():
    builder = SuperstructureBuilder()
    left = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=THETA))
    consumer = builder.add_consumer((LENGTH, 0.0), ConsumerSpec(DEMAND))
    right = builder.add_producer((2 * LENGTH, 0.0), ProducerSpec(Theta=THETA, C_hO=0.08))
    builder.add_pipe(left, consumer)
    builder.add_pipe(right, consumer)
    network = builder.build()
    settings = SolverSettings(tol=1e-10)
    design = network.design_from_pairs([DIAMETER, DIAMETER])
    grad = adjoint_gradient(network, design, "total_cost", settings)
    # The left producer is the slack producer
    assert grad.gamma[0] == pytest.approx(0.0, abs=1e-12)

    h = 1e-4 * design.gamma[1]
    plus, minus = design.copy(), design.copy()
    plus.gamma[1] += h
    minus.gamma[1] -= h
    fd = (
        evaluate_design(network, plus, settings).cost.total_npv
        - evaluate_design(network, minus, settings).cost.total_npv
    ) / (2 * h)
    # Supply moves to the dearer producer
    assert fd > 0
    assert grad.gamma[1] == pytest.approx(fd, rel=1e-4)


def test_circular_case_delivers_every_demand():
    network = build_circular(CircularCaseSpec(segments=0))
    design = uniform_design(network, DIAMETER)
    sim = solve_state(network, design)
    assert sim.converged
    state = sim.state
    params = network.params
    hs = np.asarray(network.hs_edges)
    delivered = (
        params.rho * params.cp * state.q[hs] * (state.theta[network.tails[hs]] - state.theta_exit[hs])
    )
    demand = np.array([network.consumers[c].demand for c in network.consumer_ids])
    assert np.allclose(delivered, demand, rtol=1e-6)


def test_adjoint_on_the_circular_case():
    network = build_circular(CircularCaseSpec(segments=0))
    rng = np.random.default_rng(42)
    design = network.design_from_pairs(rng.uniform(0.05, 0.15, network.n_candidate_pipes))
    check_random_directions(network, design, SolverSettings(tol=1e-10))


def test_two_producer_case_with_slack_supply():
    network = build_two_producer(TwoProducerCaseSpec(size=1))
    design = slack_supplied(uniform_design(network, 0.5 * network.params.D_max))
    sim = solve_state(network, design)
    assert sim.converged
    arc_right = network.arc_edges[1]
    assert sim.state.q[arc_right] == pytest.approx(0.0, abs=1e-9)


def test_consumer_without_demand():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=THETA))
    consumer = builder.add_consumer((LENGTH, 0.0), ConsumerSpec(0.0))
    builder.add_pipe(producer, consumer)
    network = builder.build()
    settings = SolverSettings()
    sim = solve_state(network, network.design_from_pairs([DIAMETER]), settings)
    assert sim.converged
    state = sim.state
    assert state.q[HEATING] == pytest.approx(settings.q_min, rel=1e-6)
    feed = network.tails[HEATING]
    assert state.theta_exit[HEATING] == pytest.approx(state.theta[feed], abs=1e-6)


def test_dp_softmin_validation():
    with pytest.raises(ValueError):
        SolverSettings(dp_softmin=-1.0)
    assert SolverSettings(dp_softmin=0.0).dp_softmin == 0.0

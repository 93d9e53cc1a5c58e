from pathlib import Path
from shutil import rmtree

import numpy as np
import pytest

from heatnet._src.nlp import InnerSettings, SizingProblem, minimize_augmented_lagrangian
from heatnet._src.utils import (
    DisconnectedConsumerError,
    InfeasibleDesignError,
    NotOptimizedError,
)
from heatnet.datasets import SuperstructureBuilder, TwoProducerCaseSpec, build_two_producer
from heatnet.models import (
    FminlpConfig,
    OptResult,
    PenalizedNLP,
    PnlpConfig,
    optimize_fminlp,
    optimize_pnlp,
    optimize_pnlp_multistart,
    repair_topology,
    slack_supplied,
    threshold_topology,
)
from heatnet.network import ConsumerSpec, ProducerSpec, uniform_design
from heatnet.simulator import SolverSettings, evaluate_design

DEMAND = 15e3
FAST = PnlpConfig(k_schedule=(50.0, 200.0), max_outer=4, max_inner=100)


def make_chain_network():
    # Pairs: producer-near (100 m), near-far (100 m), producer-far (200 m)
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    near = builder.add_consumer((100.0, 0.0), ConsumerSpec(DEMAND))
    far = builder.add_consumer((200.0, 0.0), ConsumerSpec(DEMAND))
    builder.add_pipe(producer, near)
    builder.add_pipe(near, far)
    builder.add_pipe(producer, far)
    return builder.build()


def _make_tmp_path(name: str):
    return Path(__file__).parent / f"tmp/{name}.bin"


def _cleanup():
    rmtree(Path(__file__).parent / "tmp")


def test_config_validation():
    with pytest.raises(ValueError):
        PnlpConfig(k_schedule=())
    with pytest.raises(ValueError):
        PnlpConfig(k_schedule=(100.0, 50.0))
    with pytest.raises(ValueError):
        PnlpConfig(d_init=-0.1)
    with pytest.raises(ValueError):
        PnlpConfig.from_dict({"slopes": [1.0]})
    config = PnlpConfig.from_dict({"k_schedule": [10, 20]})
    assert config.k_schedule == (10.0, 20.0)
    assert PnlpConfig.from_dict(config.to_dict()) == config


def test_lower_bound_must_stay_below_d_min():
    network = make_chain_network()
    with pytest.raises(ValueError):
        optimize_pnlp(network, PnlpConfig(d_lower=0.05))


def test_threshold_topology():
    network = make_chain_network()
    design = network.design_from_pairs([0.1, 0.01, 0.05])
    discrete = threshold_topology(network, design)
    assert np.allclose(network.pair_values(discrete.d), [0.1, 0.0, 0.05])
    with pytest.raises(DisconnectedConsumerError):
        threshold_topology(network, network.design_from_pairs([0.1, 0.01, 0.01]))


def test_repair_topology_restores_the_largest_removed_pair():
    network = make_chain_network()
    design = network.design_from_pairs([0.1, 0.015, 0.01])
    repaired, restored = repair_topology(network, design)
    assert restored == [1]
    assert np.allclose(network.pair_values(repaired.d), [0.1, network.params.d_min, 0.0])
    # Nothing to restore
    _, restored = repair_topology(network, network.design_from_pairs([0.1, 0.1, 0.0]))
    assert restored == []


def test_optimize_pnlp_returns_a_priced_discrete_design():
    network = make_chain_network()
    result = optimize_pnlp(network, FAST)
    assert isinstance(result, OptResult)
    assert result.method == "pnlp"
    d_pairs = network.pair_values(result.design.d)
    installed = d_pairs > 0
    assert np.all(d_pairs[installed] >= network.params.d_min)
    assert np.all(d_pairs <= network.params.D_max)
    assert network.disconnected_consumers(installed) == []
    network.check_design(result.design, atol=1e-9)
    evaluation = evaluate_design(network, result.design)
    assert result.total_npv == pytest.approx(evaluation.cost.total_npv, rel=1e-9)
    assert len(result.info["stages"]) == len(FAST.k_schedule)
    assert result.history[-1][1] == pytest.approx(result.total_npv)
    assert result.info["total_pipe_length"] == pytest.approx(network.total_pipe_length(result.design))


def test_unreachable_consumer_is_infeasible():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    near = builder.add_consumer((100.0, 0.0), ConsumerSpec(DEMAND))
    builder.add_consumer((500.0, 0.0), ConsumerSpec(DEMAND))
    builder.add_pipe(producer, near)
    with pytest.raises(InfeasibleDesignError):
        optimize_pnlp(builder.build(), FAST)


def test_penalized_nlp_save_load():
    network = make_chain_network()
    model = PenalizedNLP(FAST)
    assert not model.is_optimized
    with pytest.raises(NotOptimizedError):
        model.design_
    model.optimize(network)
    assert model.is_optimized
    assert model.method == "pnlp"

    tmp_path = _make_tmp_path("pnlp")
    model.save(tmp_path)
    restored = PenalizedNLP.load(tmp_path)
    assert np.allclose(restored.design_.d, model.design_.d)
    assert restored.result_.total_npv == pytest.approx(model.result_.total_npv)

    result_path = _make_tmp_path("pnlp_result")
    model.result_.save(result_path)
    assert OptResult.load(result_path).total_npv == pytest.approx(model.result_.total_npv)
    _cleanup()


def test_multistart_keeps_the_cheapest_run():
    network = make_chain_network()
    with pytest.raises(ValueError):
        optimize_pnlp_multistart(network, FAST, n_starts=0)
    result = optimize_pnlp_multistart(network, FAST, n_starts=2, rng_seed=0)
    costs = result.info["multistart_costs"]
    assert len(costs) == 2
    assert result.total_npv == pytest.approx(np.nanmin(costs))


def make_line_network(demand=DEMAND):
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    consumer = builder.add_consumer((100.0, 0.0), ConsumerSpec(demand))
    builder.add_pipe(producer, consumer)
    return builder.build()


def test_slack_supplied():
    network = build_two_producer(TwoProducerCaseSpec(size=1))
    design = uniform_design(network, 0.1)
    supplied = slack_supplied(design)
    assert np.all(supplied.gamma == 0.0)
    assert np.array_equal(supplied.d, design.d)
    # The input is left untouched
    assert np.all(design.gamma > 0)


def test_two_producer_case_end_to_end():
    network = build_two_producer(TwoProducerCaseSpec(size=1))
    result = optimize_pnlp(network, FAST)
    assert result.info["start"] in ("uniform", "slack_supplied")
    installed = network.pair_values(result.design.d) > 0
    assert network.disconnected_consumers(installed) == []
    network.check_design(result.design, atol=1e-9)
    assert np.all(result.design.gamma >= 0)
    evaluation = evaluate_design(network, result.design)
    assert evaluation.cost is not None
    assert result.total_npv == pytest.approx(evaluation.cost.total_npv, rel=1e-9)


def test_single_pipe_sizing_matches_a_diameter_sweep():
    network = make_line_network()
    params = network.params
    sweep = np.linspace(params.d_min, 0.3, 281)
    costs = np.array(
        [evaluate_design(network, network.design_from_pairs([d])).cost.total_npv for d in sweep]
    )
    d_best, cost_best = sweep[np.argmin(costs)], costs.min()

    settings = SolverSettings()
    problem = SizingProblem(network, variable_pairs=np.array([0]), lower=params.d_min, settings=settings)
    z = problem.to_variables(uniform_design(network, 0.1))
    problem.calibrate(z)
    al = minimize_augmented_lagrangian(
        problem.evaluate, z, problem.bounds, problem.n_constraints, InnerSettings()
    )
    sized = problem.design(al.x)
    d_sized = network.pair_values(sized.d)[0]
    assert abs(d_sized - d_best) <= 2e-3
    cost_sized = evaluate_design(network, sized).cost.total_npv
    assert cost_sized <= cost_best * (1 + 1e-5)

    # The penalized run prices a thresholded design, never cheaper than the sweep
    result = optimize_pnlp(network, FAST)
    assert result.total_npv >= cost_best * (1 - 1e-4)
    assert result.total_npv <= cost_best * 1.05


def test_restart_from_the_combinatorial_optimum():
    network = make_chain_network()
    fminlp = optimize_fminlp(network, FminlpConfig(max_nodes=20, max_outer=4, max_inner=100))
    result = optimize_pnlp(network, FAST, init=fminlp.design)
    assert result.info["start"] == "given"
    assert result.total_npv == pytest.approx(fminlp.total_npv, rel=1e-2)


def test_zero_demand_builds_nothing():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    near = builder.add_consumer((100.0, 0.0), ConsumerSpec(0.0))
    far = builder.add_consumer((200.0, 0.0), ConsumerSpec(0.0))
    builder.add_pipe(producer, near)
    builder.add_pipe(near, far)
    builder.add_pipe(producer, far)
    network = builder.build()
    result = optimize_pnlp(network, FAST)
    assert np.all(result.design.d == 0.0)
    assert result.info["total_pipe_length"] == 0.0
    assert result.cost.pipe_capex == 0.0


def test_optimize_pnlp_is_deterministic():
    network = make_chain_network()
    first = optimize_pnlp(network, FAST)
    second = optimize_pnlp(network, FAST)
    assert np.array_equal(first.design.d, second.design.d)
    assert np.array_equal(first.design.gamma, second.design.gamma)
    assert first.history == second.history
    assert first.total_npv == second.total_npv


def test_best_cost_never_increases():
    network = make_chain_network()
    result = optimize_pnlp(network, PnlpConfig(k_schedule=(25.0, 50.0, 100.0, 200.0), max_outer=4, max_inner=100))
    best = [cost for _, cost in result.history]
    assert len(best) > 0
    assert np.all(np.diff(best) <= 0)
    iterations = [it for it, _ in result.history]
    assert np.all(np.diff(iterations) >= 0)

import numpy as np
import pytest

from heatnet.datasets import (
    CircularCaseSpec,
    TwoProducerCaseSpec,
    build_case,
    build_circular,
    build_two_producer,
    candidate_pipe_count,
    circular_sequence,
    gen_circular,
    gen_two_producer,
    house_class,
    radiator_coefficient,
    two_producer_pipe_count,
)
from heatnet.network import network_to_dict
from heatnet.simulator import required_supply_temperature


@pytest.mark.parametrize("segments", [0, 1, 10, 90])
def test_circular_case_size(segments):
    network = build_circular(CircularCaseSpec(segments=segments))
    assert network.n_candidate_pipes == candidate_pipe_count(segments) == 5 * segments + 13
    # Two houses per sector
    assert len(network.consumer_ids) == 2 * (segments + 3)
    assert len(network.producer_ids) == 1
    assert network.meta["case_id"] == f"circular-s{segments:03d}"
    # Every candidate pipe installed connects all houses
    installed = np.ones(network.n_candidate_pipes, dtype=bool)
    assert network.disconnected_consumers(installed) == []


def test_circular_pipe_count_for_the_largest_case():
    assert candidate_pipe_count(190) == 963


def test_circular_case_is_deterministic():
    assert gen_circular(segments=3) == gen_circular(CircularCaseSpec(segments=3))
    assert gen_circular(segments=3) != gen_circular(segments=4)


def test_circular_inner_ring_keeps_spacing():
    network = build_circular(CircularCaseSpec(segments=90))
    lengths = network.pair_lengths
    assert np.all(lengths > 0)
    radii = network.meta["ring_radii"]
    assert radii[0] > CircularCaseSpec().base_radius


def test_circular_spec_validation():
    with pytest.raises(ValueError):
        CircularCaseSpec(segments=-1)


def test_circular_sequence():
    cases = list(circular_sequence(0, 20, 10))
    assert [case.segments for case in cases] == [0, 10, 20]
    assert [case.network.n_candidate_pipes for case in cases] == [13, 63, 113]
    with pytest.raises(ValueError):
        list(circular_sequence(0, 20, 0))
    with pytest.raises(ValueError):
        list(circular_sequence(10, 0, 5))


@pytest.mark.parametrize("size, n_pipes", [(1, 138), (2, 298), (3, 618)])
def test_two_producer_case_size(size, n_pipes):
    assert two_producer_pipe_count(size) == n_pipes
    network = build_two_producer(TwoProducerCaseSpec(size=size))
    assert network.n_candidate_pipes == n_pipes
    assert len(network.producer_ids) == 2
    installed = np.ones(n_pipes, dtype=bool)
    assert network.disconnected_consumers(installed) == []


def test_two_producer_size_validation():
    with pytest.raises(ValueError):
        TwoProducerCaseSpec(size=4)
    with pytest.raises(ValueError):
        two_producer_pipe_count(0)


def test_two_producer_houses():
    network = build_two_producer(TwoProducerCaseSpec(size=1))
    classes = network.meta["house_classes"]
    assert set(classes.values()) == {"modern", "old"}
    assert len(classes) == len(network.consumer_ids)
    for node_id, kind in classes.items():
        position = network.node(int(node_id)).position
        assert house_class(position) == kind
        # Modern houses are served by 52 degC feed water, old ones need 60 degC
        feed = 52.0 if kind == "modern" else 60.0
        spec = network.consumers[int(node_id)]
        # Temperatures are measured above ambient
        assert required_supply_temperature(spec) == pytest.approx(feed - network.params.T_ambient)


def test_radiator_coefficient():
    assert radiator_coefficient(15e3, 52.0) == pytest.approx(262.8, rel=1e-3)
    assert radiator_coefficient(15e3, 60.0) == pytest.approx(201.0, rel=1e-3)
    with pytest.raises(ValueError):
        radiator_coefficient(15e3, 20.0)


def test_case_documents_round_trip():
    doc = gen_two_producer(size=1)
    assert doc["schema"] == "heatnet-case/1"
    network = build_case(doc)
    assert network_to_dict(network) == doc

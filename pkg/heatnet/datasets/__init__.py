from heatnet.datasets.circular import (
    Case,
    CircularCaseSpec,
    build_circular,
    candidate_pipe_count,
    circular_sequence,
    gen_circular,
)
from heatnet.datasets.misc import SuperstructureBuilder
from heatnet.datasets.two_producer import (
    TwoProducerCaseSpec,
    build_two_producer,
    gen_two_producer,
    house_class,
    radiator_coefficient,
    two_producer_pipe_count,
)
from heatnet.network import Network, network_from_dict


def build_case(doc: dict) -> Network:
    """Validate a case document and return it as a :class:`~heatnet.network.Network`."""
    return network_from_dict(doc)

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

from heatnet.datasets.misc import SuperstructureBuilder, add_ring_sectors, ring_radii
from heatnet.network import ConsumerSpec, GlobalParams, Network, ProducerSpec, network_to_dict


def candidate_pipe_count(segments: int) -> int:
    """Number of candidate pipe connections of the circular case with ``segments`` added segments."""
    return 5 * segments + 13


@dataclass(frozen=True)
class CircularCaseSpec:
    """Single-producer circular benchmark case.

    A central producer feeds houses arranged on concentric rings. The base case has
    three angular sectors; every added segment adds one sector with two houses and
    five candidate pipe connections.

    Args:
        segments (int): Number of added segments ``s``. The case has ``5 s + 13`` candidate pipes.
        demand (float): Heat demand of every house, W.
        xi (float): Radiator coefficient of every house, W/K^n_exp.
        n_exp (float): Radiator exponent of every house.
        base_radius (float): Radius of the inner ring, m.
        ring_step (float): Distance between consecutive rings, m.
        min_spacing (float): Smallest distance between neighbouring junctions on the inner ring, m.
        producer (ProducerSpec): Supply temperature and prices of the central producer.
        params (GlobalParams): Physical and economic constants of the case.
    """

    segments: int = 0
    demand: float = 15e3
    xi: float = 200.0
    n_exp: float = 1.2
    base_radius: float = 50.0
    ring_step: float = 30.0
    min_spacing: float = 20.0
    producer: ProducerSpec = field(default_factory=lambda: ProducerSpec(Theta=60.0))
    params: GlobalParams = field(default_factory=GlobalParams)

    def __post_init__(self):
        if self.segments < 0:
            raise ValueError(f"Invalid segments={self.segments}. Must be non-negative.")

    @property
    def n_sectors(self) -> int:
        return self.segments + 3

    @property
    def case_id(self) -> str:
        return f"circular-s{self.segments:03d}"


def build_circular(spec: CircularCaseSpec) -> Network:
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), spec.producer)
    house = ConsumerSpec(spec.demand, spec.xi, spec.n_exp)
    radii = ring_radii(spec.n_sectors, spec.base_radius, spec.ring_step, spec.min_spacing)
    sectors = add_ring_sectors(builder, spec.n_sectors, radii, lambda pos: house)
    for sector in sectors:
        builder.add_pipe(producer, sector.junction)
    meta = {
        "generator": "circular",
        "case_id": spec.case_id,
        "segments": spec.segments,
        "n_candidate_pipes": builder.n_candidate_pipes,
        "ring_radii": list(radii),
        "pipe_lengths": "straight-line distance between node positions",
    }
    return builder.build(spec.params, meta)


def gen_circular(spec: Optional[CircularCaseSpec] = None, **kwargs) -> dict:
    """Case document of the circular single-producer case.

    The layout depends on ``spec`` alone, equal specs give identical documents.

    Args:
        spec (CircularCaseSpec or None): Case description. Keyword arguments build one when omitted.

    Returns:
        Validated case document (schema ``heatnet-case/1``).
    """
    if spec is None:
        spec = CircularCaseSpec(**kwargs)
    return network_to_dict(build_circular(spec))


class Case(NamedTuple):
    case_id: str
    segments: int
    network: Network


def circular_sequence(
    start: int = 0, stop: int = 190, step: int = 10, **spec_kwargs
) -> Iterator[Case]:
    """Circular cases for ``segments`` from ``start`` to ``stop`` inclusive."""
    if step <= 0:
        raise ValueError(f"Invalid step={step}. Must be strictly positive.")
    if start < 0 or stop < start:
        raise ValueError(f"Invalid range {start}:{stop}.")
    for s in range(start, stop + 1, step):
        spec = CircularCaseSpec(segments=s, **spec_kwargs)
        yield Case(spec.case_id, s, build_circular(spec))


from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from heatnet.datasets.circular import candidate_pipe_count
from heatnet.datasets.misc import (
    SuperstructureBuilder,
    add_ring_sectors,
    nearest_sector,
    ring_radii,
)
from heatnet.network import ConsumerSpec, GlobalParams, Network, ProducerSpec, network_to_dict

# Added segments of the ring layout for every size, giving 138, 298 and 618 candidate pipes
SIZE_SEGMENTS = {1: 25, 2: 57, 3: 121}

HOUSE_CLASSES = ("modern", "old")


def radiator_coefficient(
    demand: float,
    feed_temperature: float,
    T_ambient: float = 10.0,
    theta_house: float = 10.0,
    n_exp: float = 1.2,
    margin: float = 0.1,
) -> float:
    """Radiator coefficient for which ``feed_temperature`` (degC) is the lowest feed that meets ``demand``.

    Inverts the supply temperature requirement ``theta_house + (1 + margin) * (demand / xi)^(1 / n_exp)``.
    """
    driving = (feed_temperature - T_ambient - theta_house) / (1.0 + margin)
    if driving <= 0:
        raise ValueError(
            f"Invalid feed_temperature={feed_temperature}. Must exceed the house temperature."
        )
    return demand / driving**n_exp


@dataclass(frozen=True)
class TwoProducerCaseSpec:
    """Mixed-temperature case with an expensive hot producer on the left and a cheap cool producer on the right.

    Houses in the top-right quadrant are modern and can be heated with about 52 °C
    feed water, every other house is old and needs at least 60 °C.

    Args:
        size (int): ``1``, ``2`` or ``3`` for 138, 298 or 618 candidate pipes.
        demand (float): Heat demand of every house, W.
        modern_feed (float): Lowest feed temperature of a modern house, degC.
        old_feed (float): Lowest feed temperature of an old house, degC.
        n_exp (float): Radiator exponent of every house.
        left (ProducerSpec): Hot producer, 70 °C at high prices.
        right (ProducerSpec): Cool producer, 55 °C at low prices.
        params (GlobalParams): Physical and economic constants of the case.
    """

    size: int = 1
    demand: float = 15e3
    modern_feed: float = 52.0
    old_feed: float = 60.0
    n_exp: float = 1.2
    base_radius: float = 50.0
    ring_step: float = 30.0
    min_spacing: float = 20.0
    producer_offset: float = 30.0
    left: ProducerSpec = field(default_factory=lambda: ProducerSpec(Theta=60.0, C_hC=800.0, C_hO=0.08))
    right: ProducerSpec = field(default_factory=lambda: ProducerSpec(Theta=45.0, C_hC=0.0, C_hO=0.04))
    params: GlobalParams = field(default_factory=GlobalParams)

    def __post_init__(self):
        if self.size not in SIZE_SEGMENTS:
            raise ValueError(
                f"Unsupported size={self.size}. Allowed values are {sorted(SIZE_SEGMENTS)}."
            )

    @property
    def segments(self) -> int:
        return SIZE_SEGMENTS[self.size]

    @property
    def n_sectors(self) -> int:
        return self.segments + 3

    @property
    def case_id(self) -> str:
        return f"two-producer-{self.size}"

    def house(self, house_class: str) -> ConsumerSpec:
        feed = self.modern_feed if house_class == "modern" else self.old_feed
        xi = radiator_coefficient(self.demand, feed, self.params.T_ambient, n_exp=self.n_exp)
        return ConsumerSpec(self.demand, xi, self.n_exp)


def house_class(position) -> str:
    x, y = position
    return "modern" if x > 0 and y > 0 else "old"


def build_two_producer(spec: TwoProducerCaseSpec) -> Network:
    builder = SuperstructureBuilder()
    classes = {}

    def house_spec(position):
        kind = house_class(position)
        classes[builder.n_nodes] = kind
        return spec.house(kind)

    radii = ring_radii(spec.n_sectors, spec.base_radius, spec.ring_step, spec.min_spacing)
    hub = builder.add_junction((0.0, 0.0))
    sectors = add_ring_sectors(builder, spec.n_sectors, radii, house_spec)
    x_out = radii[2] + spec.producer_offset
    left = builder.add_producer((-x_out, 0.0), spec.left)
    right = builder.add_producer((x_out, 0.0), spec.right)
    # The sectors facing the producers are fed from outside instead of from the hub
    left_sector = nearest_sector(sectors, math.pi)
    right_sector = nearest_sector(sectors, 0.0)
    for sector in sectors:
        if sector is left_sector:
            builder.add_pipe(left, sector.outer_house)
        elif sector is right_sector:
            builder.add_pipe(right, sector.outer_house)
        else:
            builder.add_pipe(hub, sector.junction)
    meta = {
        "generator": "two-producer",
        "case_id": spec.case_id,
        "size": spec.size,
        "n_candidate_pipes": builder.n_candidate_pipes,
        "ring_radii": list(radii),
        "house_classes": {str(k): v for k, v in sorted(classes.items())},
        "pipe_lengths": "straight-line distance between node positions",
    }
    return builder.build(spec.params, meta)


def gen_two_producer(spec: Optional[TwoProducerCaseSpec] = None, **kwargs) -> dict:
    """Case document of the two-producer mixed-temperature case.

    Raises:
        ValueError: If ``size`` is not 1, 2 or 3.
    """
    if spec is None:
        spec = TwoProducerCaseSpec(**kwargs)
    return network_to_dict(build_two_producer(spec))


def two_producer_pipe_count(size: int) -> int:
    if size not in SIZE_SEGMENTS:
        raise ValueError(f"Unsupported size={size}. Allowed values are {sorted(SIZE_SEGMENTS)}.")
    return candidate_pipe_count(SIZE_SEGMENTS[size])

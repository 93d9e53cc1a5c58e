from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from heatnet.network import (
    ConsumerSpec,
    Edge,
    EdgeKind,
    GlobalParams,
    Network,
    Node,
    NodeKind,
    ProducerSpec,
    build_network,
)

_RETURN_KIND = {
    NodeKind.PRODUCER_FEED: NodeKind.PRODUCER_RETURN,
    NodeKind.CONSUMER_FEED: NodeKind.CONSUMER_RETURN,
    NodeKind.JUNCTION_FEED: NodeKind.JUNCTION_RETURN,
}


@dataclass
class SuperstructureBuilder:
    """Incremental builder of a mirrored superstructure.

    Only the feed side is described; every feed node gets a return twin and every
    candidate pipe a mirrored return pipe of the same length. Pipe lengths default
    to the straight-line distance between the node positions.
    """

    _kinds: list = field(default_factory=list)
    _positions: list = field(default_factory=list)
    _pipes: list = field(default_factory=list)
    _consumers: dict = field(default_factory=dict)
    _producers: dict = field(default_factory=dict)

    def _add(self, kind: NodeKind, position) -> int:
        self._kinds.append(kind)
        self._positions.append((float(position[0]), float(position[1])))
        return len(self._kinds) - 1

    def add_junction(self, position) -> int:
        return self._add(NodeKind.JUNCTION_FEED, position)

    def add_consumer(self, position, spec: ConsumerSpec) -> int:
        node = self._add(NodeKind.CONSUMER_FEED, position)
        self._consumers[node] = spec
        return node

    def add_producer(self, position, spec: ProducerSpec) -> int:
        node = self._add(NodeKind.PRODUCER_FEED, position)
        self._producers[node] = spec
        return node

    def add_pipe(self, a: int, b: int, length: Optional[float] = None) -> int:
        if length is None:
            length = math.dist(self._positions[a], self._positions[b])
        self._pipes.append((a, b, float(length)))
        return len(self._pipes) - 1

    @property
    def n_nodes(self) -> int:
        """Number of feed nodes, also the id of the next node added."""
        return len(self._kinds)

    @property
    def n_candidate_pipes(self) -> int:
        return len(self._pipes)

    def build(self, params: Optional[GlobalParams] = None, meta: Optional[dict] = None) -> Network:
        offset = len(self._kinds)
        nodes = []
        for i, (kind, pos) in enumerate(zip(self._kinds, self._positions)):
            nodes.append(Node(i, kind, pos, mirror=i + offset))
            nodes.append(Node(i + offset, _RETURN_KIND[kind], pos, mirror=i))
        edges = []
        for j, (a, b, length) in enumerate(self._pipes):
            edges.append(Edge(2 * j, a, b, EdgeKind.PIPE_FEED, length, mirror=2 * j + 1))
            edges.append(
                Edge(2 * j + 1, b + offset, a + offset, EdgeKind.PIPE_RETURN, length, mirror=2 * j)
            )
        next_id = 2 * len(self._pipes)
        for c in sorted(self._consumers):
            edges.append(Edge(next_id, c, c + offset, EdgeKind.HEATING_SYSTEM))
            next_id += 1
        for p in sorted(self._producers):
            edges.append(Edge(next_id, p + offset, p, EdgeKind.PRODUCER_ARC_FEED))
            next_id += 1
        return build_network(nodes, edges, self._consumers, self._producers, params, meta)


class RingSector:
    """Node ids of one angular sector: a junction on the inner ring and two houses further out."""

    def __init__(self, junction: int, inner_house: int, outer_house: int, angle: float):
        self.junction = junction
        self.inner_house = inner_house
        self.outer_house = outer_house
        self.angle = angle


def ring_radii(n_sectors: int, base_radius: float, ring_step: float, min_spacing: float):
    # The inner ring is widened so that neighbouring sectors keep min_spacing
    r1 = max(base_radius, n_sectors * min_spacing / (2.0 * math.pi))
    return r1, r1 + ring_step, r1 + 2.0 * ring_step


def sector_angles(n_sectors: int) -> list[float]:
    # Sectors are spread evenly, the opening of the rings is at the top
    return [math.pi / 2 + 2.0 * math.pi * (i + 0.5) / n_sectors for i in range(n_sectors)]


def add_ring_sectors(
    builder: SuperstructureBuilder,
    n_sectors: int,
    radii: tuple[float, float, float],
    house_spec,
) -> list[RingSector]:
    """Add ``n_sectors`` sectors with their radial pipes and the open ring pipes between neighbours.

    Each sector holds a junction on the inner ring and two houses on the middle and
    outer rings, joined by two radial pipes. Neighbouring junctions and neighbouring
    middle-ring houses are joined by ring pipes; the rings stay open between the last
    and the first sector. ``house_spec(position)`` returns the :class:`ConsumerSpec` of
    a house.

    Returns:
        The sectors in angular order.
    """
    if n_sectors < 2:
        raise ValueError(f"Invalid n_sectors={n_sectors}. At least two sectors are needed.")
    r1, r2, r3 = radii
    sectors = []
    for angle in sector_angles(n_sectors):
        c, s = math.cos(angle), math.sin(angle)
        j = builder.add_junction((r1 * c, r1 * s))
        pos_inner, pos_outer = (r2 * c, r2 * s), (r3 * c, r3 * s)
        h_inner = builder.add_consumer(pos_inner, house_spec(pos_inner))
        h_outer = builder.add_consumer(pos_outer, house_spec(pos_outer))
        builder.add_pipe(j, h_inner)
        builder.add_pipe(h_inner, h_outer)
        sectors.append(RingSector(j, h_inner, h_outer, angle))
    for a, b in zip(sectors[:-1], sectors[1:]):
        builder.add_pipe(a.junction, b.junction)
        builder.add_pipe(a.inner_house, b.inner_house)
    return sectors


def nearest_sector(sectors: list[RingSector], angle: float) -> RingSector:
    def distance(sector):
        delta = (sector.angle - angle) % (2.0 * math.pi)
        return min(delta, 2.0 * math.pi - delta)

    return min(sectors, key=distance)

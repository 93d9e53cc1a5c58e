from __future__ import annotations

import dataclasses
import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import networkx as nx
import numpy as np

from heatnet._src.serialization import read_json, write_json
from heatnet._src.utils import (
    DisconnectedConsumerError,
    NetworkError,
    check_schema,
    update_dataclass_from_dict,
)

logger = logging.getLogger("heatnet")

CASE_SCHEMA = "heatnet-case/1"
DESIGN_SCHEMA = "heatnet-design/1"
NOMINAL_TEMPERATURE_DROP = 30.0  # K, used for the nominal producer flow


class NodeKind(str, enum.Enum):
    PRODUCER_FEED = "producer-feed"
    PRODUCER_RETURN = "producer-return"
    CONSUMER_FEED = "consumer-feed"
    CONSUMER_RETURN = "consumer-return"
    JUNCTION_FEED = "junction-feed"
    JUNCTION_RETURN = "junction-return"

    @property
    def is_feed(self) -> bool:
        return self in (
            NodeKind.PRODUCER_FEED,
            NodeKind.CONSUMER_FEED,
            NodeKind.JUNCTION_FEED,
        )


class EdgeKind(str, enum.Enum):
    PIPE_FEED = "pipe-feed"
    PIPE_RETURN = "pipe-return"
    HEATING_SYSTEM = "heating-system"
    PRODUCER_ARC_FEED = "producer-arc-feed"
    PRODUCER_ARC_RETURN = "producer-arc-return"

    @property
    def is_pipe(self) -> bool:
        return self in (EdgeKind.PIPE_FEED, EdgeKind.PIPE_RETURN)


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    position: tuple[float, float] = (0.0, 0.0)
    mirror: Optional[int] = None  # Twin node on the other side of the network


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    kind: EdgeKind
    length: float = 0.0  # m, pipes only
    mirror: Optional[int] = None  # Return twin of a feed pipe and vice versa


@dataclass(frozen=True)
class ConsumerSpec:
    demand: float  # Q_d, W
    xi: float = 200.0  # W/K^n_exp
    n_exp: float = 1.2
    theta_house: float = 10.0  # K above ambient

    def __post_init__(self):
        if self.demand < 0:
            raise ValueError(f"Invalid demand={self.demand}. Must be non-negative.")
        if self.xi <= 0:
            raise ValueError(f"Invalid xi={self.xi}. Must be strictly positive.")
        if self.n_exp < 1:
            raise ValueError(f"Invalid n_exp={self.n_exp}. Must be at least 1.")


@dataclass(frozen=True)
class ProducerSpec:
    Theta: float  # injection temperature, K above ambient
    C_hC: float = 800.0  # EUR/kW installed capacity
    C_hO: float = 0.06  # EUR/kWh heat
    C_pO: float = 0.11  # EUR/kWh electricity

    def __post_init__(self):
        if self.Theta <= 0:
            raise ValueError(f"Invalid Theta={self.Theta}. Must be strictly positive.")
        for name in ("C_hC", "C_hO", "C_pO"):
            if getattr(self, name) < 0:
                raise ValueError(
                    f"Invalid {name}={getattr(self, name)}. Prices must be non-negative."
                )


@dataclass(frozen=True)
class GlobalParams:
    """Physical and economic constants shared by every component of a network.

    Water properties are fixed at roughly 70 °C. Temperatures in the model are
    differences to ``T_ambient``. ``D_max`` bounds every pipe diameter and
    ``d_min`` is the smallest catalogue diameter: relaxed pipes below it are
    considered removed.
    """

    rho: float = 975.0  # kg/m^3
    cp: float = 4190.0  # J/(kg K)
    mu: float = 4.0e-4  # Pa s
    T_ambient: float = 10.0  # degC
    lambda_i: float = 0.03  # W/(m K), insulation
    lambda_g: float = 1.4  # W/(m K), ground
    r_insul: float = 1.4  # insulation to pipe diameter ratio
    h_depth: float = 0.4  # m
    horizon: float = 30.0  # years
    e_a: float = 0.04
    e_i: float = 0.04
    p1: float = 1976.3  # EUR/m^2
    p0: float = 301.4  # EUR/m
    F_cap: float = 0.33
    eta_pr: float = 0.9
    eta_pump: float = 0.7
    D_max: float = 0.4  # m
    d_min: float = 0.02  # m
    npv_mode: str = "printed"  # or "discounted"
    sigmoid_form: str = "sigmoid"  # or "printed"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, str):
                continue
            if f.name in ("e_a", "e_i", "horizon"):
                if value < 0:
                    raise ValueError(
                        f"Invalid {f.name}={value}. Must be non-negative."
                    )
            elif not value > 0:
                raise ValueError(f"Invalid {f.name}={value}. Must be strictly positive.")
        if self.r_insul <= 1:
            raise ValueError(f"Invalid r_insul={self.r_insul}. Must be larger than 1.")
        if self.d_min >= self.D_max:
            raise ValueError(
                f"Invalid d_min={self.d_min}. Must be smaller than D_max={self.D_max}."
            )
        if self.npv_mode not in ["printed", "discounted"]:
            raise ValueError(
                "Invalid npv_mode. Allowed values are 'printed' and 'discounted'."
            )
        if self.sigmoid_form not in ["sigmoid", "printed"]:
            raise ValueError(
                "Invalid sigmoid_form. Allowed values are 'sigmoid' and 'printed'."
            )

    @classmethod
    def from_dict(cls, values: dict) -> GlobalParams:
        return update_dataclass_from_dict(cls, values)


@dataclass
class DesignVector:
    """Design variables of a network.

    Attributes:
        d: Diameter of every pipe edge (feed and return) in the order of :attr:`Network.pipe_edges`, m.
        gamma: Inflow of every producer in the order of :attr:`Network.producer_ids`, m^3/s.
    """

    d: np.ndarray
    gamma: np.ndarray

    def copy(self) -> DesignVector:
        return DesignVector(self.d.copy(), self.gamma.copy())


@dataclass
class StateVector:
    """Physical state: edge flows ``q`` (m^3/s), nodal pressures ``p`` (Pa, gauge), nodal temperatures ``theta`` and edge exit temperatures ``theta_exit`` (K above ambient)."""

    q: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    theta_exit: np.ndarray

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.theta, self.theta_exit])

    @classmethod
    def from_flat(cls, x: np.ndarray, num_edges: int, num_nodes: int) -> StateVector:
        E, N = num_edges, num_nodes
        return cls(
            q=x[:E].copy(),
            p=x[E : E + N].copy(),
            theta=x[E + N : E + 2 * N].copy(),
            theta_exit=x[E + 2 * N :].copy(),
        )


class Network:
    """Validated, immutable superstructure of a district heating network.

    Do not instantiate directly, use :func:`build_network`.
    """

    def __init__(
        self,
        nodes: list[Node],
        edges: list[Edge],
        consumers: dict[int, ConsumerSpec],
        producers: dict[int, ProducerSpec],
        params: GlobalParams,
        meta: Optional[dict] = None,
    ):
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        self.consumers = dict(sorted(consumers.items()))
        self.producers = dict(sorted(producers.items()))
        self.params = params
        self.meta = dict(meta) if meta is not None else {}

        self.node_index = {n.id: i for i, n in enumerate(self.nodes)}
        self.edge_index = {e.id: i for i, e in enumerate(self.edges)}
        self.tails = _readonly([self.node_index[e.tail] for e in self.edges], int)
        self.heads = _readonly([self.node_index[e.head] for e in self.edges], int)
        self.lengths = _readonly([e.length for e in self.edges], float)

        kinds = [e.kind for e in self.edges]
        self.pipe_edges = _readonly(
            [i for i, k in enumerate(kinds) if k.is_pipe], int
        )
        pipe_pos = -np.ones(len(self.edges), dtype=int)
        pipe_pos[self.pipe_edges] = np.arange(len(self.pipe_edges))
        self.pipe_position = _readonly(pipe_pos, int)

        pairs = []
        for i in self.pipe_edges:
            e = self.edges[i]
            if e.kind == EdgeKind.PIPE_FEED:
                j = self.edge_index[e.mirror]
                pairs.append((pipe_pos[i], pipe_pos[j]))
        self.pipe_pairs = _readonly(np.asarray(pairs, dtype=int).reshape(-1, 2), int)
        pair_of_pipe = np.zeros(len(self.pipe_edges), dtype=int)
        for k, (a, b) in enumerate(self.pipe_pairs):
            pair_of_pipe[a] = k
            pair_of_pipe[b] = k
        self.pair_of_pipe = _readonly(pair_of_pipe, int)

        self.consumer_ids = tuple(self.consumers)
        self.producer_ids = tuple(self.producers)
        hs_by_consumer = {
            e.tail: i for i, e in enumerate(self.edges) if k_is(e, EdgeKind.HEATING_SYSTEM)
        }
        arc_by_producer = {
            e.head: i
            for i, e in enumerate(self.edges)
            if k_is(e, EdgeKind.PRODUCER_ARC_FEED)
        }
        self.hs_edges = _readonly([hs_by_consumer[c] for c in self.consumer_ids], int)
        self.arc_edges = _readonly(
            [arc_by_producer[p] for p in self.producer_ids], int
        )
        self.edge_role = _readonly(
            [_EDGE_ROLE[e.kind] for e in self.edges], int
        )

        self.graph = nx.DiGraph()
        for n in self.nodes:
            self.graph.add_node(n.id, kind=n.kind.value, pos=tuple(n.position))
        for i, e in enumerate(self.edges):
            self.graph.add_edge(
                e.tail, e.head, id=e.id, index=i, kind=e.kind.value, length=e.length
            )

    # Sizes
    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_pipes(self) -> int:
        return len(self.pipe_edges)

    @property
    def n_candidate_pipes(self) -> int:
        """Number of candidate pipe connections, i.e. feed/return pipe pairs."""
        return len(self.pipe_pairs)

    @property
    def total_demand(self) -> float:
        return float(sum(c.demand for c in self.consumers.values()))

    @property
    def nominal_flow(self) -> float:
        p = self.params
        return self.total_demand / (p.rho * p.cp * NOMINAL_TEMPERATURE_DROP)

    @property
    def pipe_lengths(self) -> np.ndarray:
        return self.lengths[self.pipe_edges]

    @property
    def pair_lengths(self) -> np.ndarray:
        return self.lengths[self.pipe_edges[self.pipe_pairs[:, 0]]]

    def node(self, node_id: int) -> Node:
        return self.nodes[self.node_index[node_id]]

    def edge(self, edge_id: int) -> Edge:
        return self.edges[self.edge_index[edge_id]]

    def consumer_return_node(self, consumer_id: int) -> int:
        k = self.consumer_ids.index(consumer_id)
        return self.edges[self.hs_edges[k]].head

    def producer_return_node(self, producer_id: int) -> int:
        k = self.producer_ids.index(producer_id)
        return self.edges[self.arc_edges[k]].tail

    # Design helpers
    def pair_values(self, d: np.ndarray) -> np.ndarray:
        """Collapse a per-pipe vector to one value per feed/return pair (the feed value)."""
        return np.asarray(d)[self.pipe_pairs[:, 0]]

    def design_from_pairs(
        self, d_pairs: np.ndarray, gamma: Optional[np.ndarray] = None
    ) -> DesignVector:
        d = np.zeros(self.num_pipes)
        d_pairs = np.asarray(d_pairs, dtype=float)
        d[self.pipe_pairs[:, 0]] = d_pairs
        d[self.pipe_pairs[:, 1]] = d_pairs
        if gamma is None:
            gamma = self._nominal_gamma()
        return DesignVector(d, np.asarray(gamma, dtype=float).copy())

    def _nominal_gamma(self) -> np.ndarray:
        K = len(self.producer_ids)
        return np.full(K, self.nominal_flow / K)

    def check_design(self, design: DesignVector, atol: float = 1e-12):
        if design.d.shape != (self.num_pipes,):
            raise ValueError(
                f"Invalid design: expected {self.num_pipes} pipe diameters, got shape {design.d.shape}."
            )
        if design.gamma.shape != (len(self.producer_ids),):
            raise ValueError(
                f"Invalid design: expected {len(self.producer_ids)} producer inflows, got shape {design.gamma.shape}."
            )
        if np.any(design.d < -atol) or np.any(design.d > self.params.D_max + atol):
            raise ValueError(
                f"Invalid design: diameters must lie in [0, {self.params.D_max}]."
            )
        a, b = self.pipe_pairs[:, 0], self.pipe_pairs[:, 1]
        if not np.allclose(design.d[a], design.d[b], rtol=0.0, atol=atol):
            raise ValueError("Invalid design: mirrored pipes carry different diameters.")
        if np.any(design.gamma < -atol):
            raise ValueError("Invalid design: producer inflows must be non-negative.")

    def total_pipe_length(self, design: DesignVector, d_threshold: float = 0.0):
        installed = self.pair_values(design.d) > d_threshold
        return float(np.sum(self.pair_lengths[installed]))

    # Connectivity
    def disconnected_consumers(
        self, pair_mask: np.ndarray, demanded_only: bool = True
    ) -> list[int]:
        """Consumers without a feed and return path to a producer when only the pipe pairs in ``pair_mask`` exist."""
        pair_mask = np.asarray(pair_mask, dtype=bool)
        g = nx.Graph()
        g.add_nodes_from(n.id for n in self.nodes)
        for k in np.flatnonzero(pair_mask):
            for pos in self.pipe_pairs[k]:
                e = self.edges[self.pipe_edges[pos]]
                g.add_edge(e.tail, e.head)
        reachable = set()
        for pid in self.producer_ids:
            reachable |= nx.node_connected_component(g, pid)
            reachable |= nx.node_connected_component(g, self.producer_return_node(pid))
        missing = []
        for cid, spec in self.consumers.items():
            if demanded_only and spec.demand <= 0:
                continue
            if cid not in reachable or self.consumer_return_node(cid) not in reachable:
                missing.append(cid)
        return missing

    # Serialization
    def to_dict(self) -> dict:
        return network_to_dict(self)

    def save(self, path: Union[os.PathLike, str]):
        write_json(network_to_dict(self), path)

    @classmethod
    def load(cls, path: Union[os.PathLike, str]) -> Network:
        return network_from_dict(read_json(path))

    def __repr__(self):
        return (
            f"Network(nodes={self.num_nodes}, edges={self.num_edges}, "
            f"candidate_pipes={self.n_candidate_pipes}, consumers={len(self.consumers)}, "
            f"producers={len(self.producers)})"
        )


# Role codes of edges inside the simulator
ROLE_PIPE, ROLE_HEATING_SYSTEM, ROLE_PRODUCER = 0, 1, 2
_EDGE_ROLE = {
    EdgeKind.PIPE_FEED: ROLE_PIPE,
    EdgeKind.PIPE_RETURN: ROLE_PIPE,
    EdgeKind.HEATING_SYSTEM: ROLE_HEATING_SYSTEM,
    EdgeKind.PRODUCER_ARC_FEED: ROLE_PRODUCER,
}


def k_is(edge: Edge, kind: EdgeKind) -> bool:
    return edge.kind == kind


def _readonly(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def build_network(
    nodes: list[Node],
    edges: list[Edge],
    consumers: dict[int, ConsumerSpec],
    producers: dict[int, ProducerSpec],
    params: Optional[GlobalParams] = None,
    meta: Optional[dict] = None,
) -> Network:
    """Validate a superstructure and return it as an immutable :class:`Network`.

    Args:
        nodes (list of Node): Producer, consumer and junction nodes of both the feed and the return side.
        edges (list of Edge): Pipes, heating systems and producer arcs.
        consumers (dict): Map from consumer feed node id to :class:`ConsumerSpec`.
        producers (dict): Map from producer feed node id to :class:`ProducerSpec`.
        params (GlobalParams): Physical and economic constants. Defaults to ``GlobalParams()``.
        meta (dict or None): Free-form description stored alongside the case (geometry notes, generator arguments).

    Returns:
        The validated network.

    Raises:
        NetworkError: On dangling node ids, missing or inconsistent mirror pipes, misplaced heating-system edges or missing producer stations.
    """
    if params is None:
        params = GlobalParams()
    node_by_id = {}
    for n in nodes:
        if n.id in node_by_id:
            raise NetworkError(f"Duplicate node id {n.id}.")
        node_by_id[n.id] = n
    edge_by_id = {}
    for e in edges:
        if e.id in edge_by_id:
            raise NetworkError(f"Duplicate edge id {e.id}.")
        edge_by_id[e.id] = e
        for end in (e.tail, e.head):
            if end not in node_by_id:
                raise NetworkError(f"Edge {e.id} references a dangling node {end}.")
        if e.tail == e.head:
            raise NetworkError(f"Edge {e.id} is a self loop on node {e.tail}.")

    # Stations and heating systems define the mirrors of producer and consumer nodes
    mirror = {n.id: n.mirror for n in nodes if n.mirror is not None}
    arcs = {}
    heating_systems = {}
    for e in edges:
        tail, head = node_by_id[e.tail], node_by_id[e.head]
        if e.kind == EdgeKind.PRODUCER_ARC_RETURN:
            raise NetworkError(
                f"Edge {e.id}: producer stations are modelled by a single producer-arc-feed edge from the return to the feed node."
            )
        if e.kind == EdgeKind.PRODUCER_ARC_FEED:
            if (
                tail.kind != NodeKind.PRODUCER_RETURN
                or head.kind != NodeKind.PRODUCER_FEED
            ):
                raise NetworkError(
                    f"Producer arc {e.id} must go from a producer-return to a producer-feed node."
                )
            if head.id in arcs:
                raise NetworkError(f"Producer {head.id} has more than one station arc.")
            arcs[head.id] = e
            _set_mirror(mirror, head.id, tail.id)
        elif e.kind == EdgeKind.HEATING_SYSTEM:
            if (
                tail.kind != NodeKind.CONSUMER_FEED
                or head.kind != NodeKind.CONSUMER_RETURN
            ):
                raise NetworkError(
                    f"Heating-system edge {e.id} is not between a consumer's feed/return pair."
                )
            if tail.id in heating_systems:
                raise NetworkError(
                    f"Consumer {tail.id} has more than one heating-system edge."
                )
            heating_systems[tail.id] = e
            _set_mirror(mirror, tail.id, head.id)

    if not arcs:
        raise NetworkError("The network needs at least one producer.")
    for pid in arcs:
        if pid not in producers:
            raise NetworkError(f"Missing ProducerSpec for producer node {pid}.")
    for pid in producers:
        if pid not in arcs:
            raise NetworkError(f"Producer {pid} has no station arc.")
    for cid in heating_systems:
        if cid not in consumers:
            raise NetworkError(f"Missing ConsumerSpec for consumer node {cid}.")
    for cid in consumers:
        if cid not in heating_systems:
            raise NetworkError(f"Consumer {cid} has no heating-system edge.")

    for n in nodes:
        if n.kind in (NodeKind.JUNCTION_FEED, NodeKind.CONSUMER_FEED):
            twin = mirror.get(n.id)
            if twin is None or twin not in node_by_id:
                raise NetworkError(f"Feed node {n.id} has no mirrored return node.")
            if node_by_id[twin].kind.is_feed:
                raise NetworkError(
                    f"Mirror {twin} of feed node {n.id} is not a return node."
                )
        if n.kind in (NodeKind.CONSUMER_FEED, NodeKind.CONSUMER_RETURN) and n.id not in mirror:
            raise NetworkError(f"Consumer node {n.id} has no heating-system edge.")

    for e in edges:
        if not e.kind.is_pipe:
            continue
        if not e.length > 0:
            raise NetworkError(f"Pipe {e.id} has non-positive length {e.length}.")
        feed_side = e.kind == EdgeKind.PIPE_FEED
        for end in (e.tail, e.head):
            if node_by_id[end].kind.is_feed != feed_side:
                raise NetworkError(
                    f"Pipe {e.id} of kind {e.kind.value} touches node {end} on the wrong side."
                )
        twin = edge_by_id.get(e.mirror) if e.mirror is not None else None
        if twin is None:
            raise NetworkError(f"Missing mirror pipe for pipe {e.id}.")
        if twin.mirror != e.id or twin.kind == e.kind or not twin.kind.is_pipe:
            raise NetworkError(f"Inconsistent mirror pairing between pipes {e.id} and {twin.id}.")
        if not np.isclose(twin.length, e.length):
            raise NetworkError(
                f"Mirror pipes {e.id} and {twin.id} have different lengths."
            )
        if {mirror.get(e.tail), mirror.get(e.head)} != {twin.tail, twin.head}:
            raise NetworkError(
                f"Mirror pipe {twin.id} does not connect the return twins of pipe {e.id}."
            )

    # Node mirrors are stored explicitly for every paired node
    nodes = [
        dataclasses.replace(n, mirror=mirror.get(n.id, n.mirror)) for n in nodes
    ]
    return Network(nodes, edges, consumers, producers, params, meta)


def _set_mirror(mirror: dict, a: int, b: int):
    for x, y in ((a, b), (b, a)):
        if mirror.get(x, y) != y:
            raise NetworkError(f"Node {x} is mirrored to both {mirror[x]} and {y}.")
        mirror[x] = y


def uniform_design(network: Network, d0: float) -> DesignVector:
    """Every pipe gets diameter ``d0``, the nominal flow is split equally across producers.

    Args:
        network (Network): Superstructure.
        d0 (float): Uniform diameter, m. Must lie in ``(0, D_max]``.

    Returns:
        The uniform design.
    """
    if not 0 < d0 <= network.params.D_max:
        raise ValueError(
            f"Invalid d0={d0}. Must lie in (0, {network.params.D_max}]."
        )
    return network.design_from_pairs(np.full(network.n_candidate_pipes, float(d0)))


# Case and design documents
def network_to_dict(network: Network) -> dict:
    return {
        "schema": CASE_SCHEMA,
        "meta": network.meta,
        "params": dataclasses.asdict(network.params),
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "position": [float(n.position[0]), float(n.position[1])],
                "mirror": n.mirror,
            }
            for n in network.nodes
        ],
        "edges": [
            {
                "id": e.id,
                "tail": e.tail,
                "head": e.head,
                "kind": e.kind.value,
                "length": float(e.length),
                "mirror": e.mirror,
            }
            for e in network.edges
        ],
        "consumers": {
            str(k): dataclasses.asdict(v) for k, v in network.consumers.items()
        },
        "producers": {
            str(k): dataclasses.asdict(v) for k, v in network.producers.items()
        },
    }


def network_from_dict(doc: dict) -> Network:
    check_schema(doc, CASE_SCHEMA)
    nodes = [
        Node(
            id=int(n["id"]),
            kind=NodeKind(n["kind"]),
            position=(float(n["position"][0]), float(n["position"][1])),
            mirror=None if n.get("mirror") is None else int(n["mirror"]),
        )
        for n in doc["nodes"]
    ]
    edges = [
        Edge(
            id=int(e["id"]),
            tail=int(e["tail"]),
            head=int(e["head"]),
            kind=EdgeKind(e["kind"]),
            length=float(e.get("length", 0.0)),
            mirror=None if e.get("mirror") is None else int(e["mirror"]),
        )
        for e in doc["edges"]
    ]
    consumers = {int(k): ConsumerSpec(**v) for k, v in doc["consumers"].items()}
    producers = {int(k): ProducerSpec(**v) for k, v in doc["producers"].items()}
    params = GlobalParams.from_dict(doc.get("params", {}))
    return build_network(nodes, edges, consumers, producers, params, doc.get("meta"))


def save_case(network: Union[Network, dict], path: Union[os.PathLike, str]):
    doc = network if isinstance(network, dict) else network_to_dict(network)
    write_json(doc, path)


def load_case(path: Union[os.PathLike, str]) -> Network:
    return network_from_dict(read_json(path))


def design_to_dict(network: Network, design: DesignVector) -> dict:
    return {
        "schema": DESIGN_SCHEMA,
        "d": {
            str(network.edges[i].id): float(design.d[k])
            for k, i in enumerate(network.pipe_edges)
        },
        "gamma": {
            str(pid): float(design.gamma[k])
            for k, pid in enumerate(network.producer_ids)
        },
    }


def design_from_dict(network: Network, doc: dict) -> DesignVector:
    check_schema(doc, DESIGN_SCHEMA)
    try:
        d = np.array(
            [doc["d"][str(network.edges[i].id)] for i in network.pipe_edges],
            dtype=float,
        )
        gamma = np.array(
            [doc["gamma"][str(pid)] for pid in network.producer_ids], dtype=float
        )
    except KeyError as err:
        raise ValueError(f"Design document is missing entry {err}.") from err
    design = DesignVector(d, gamma)
    network.check_design(design, atol=1e-9)
    return design


def threshold_pairs(network: Network, design: DesignVector, d_min: float) -> np.ndarray:
    """Boolean mask of pipe pairs whose feed and return diameters both reach ``d_min``."""
    a, b = network.pipe_pairs[:, 0], network.pipe_pairs[:, 1]
    return np.minimum(design.d[a], design.d[b]) >= d_min


def require_connected(network: Network, pair_mask: np.ndarray):
    missing = network.disconnected_consumers(pair_mask)
    if missing:
        raise DisconnectedConsumerError(missing)

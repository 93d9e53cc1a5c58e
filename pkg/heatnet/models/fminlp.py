from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import networkx as nx
import numpy as np
from networkx.algorithms.approximation import steiner_tree
from tqdm import tqdm

from heatnet._src.nlp import (
    DemandConstraints,
    InnerSettings,
    SizingProblem,
    minimize_augmented_lagrangian,
)
from heatnet._src.serialization import pickle_load, pickle_save
from heatnet._src.utils import (
    DisconnectedConsumerError,
    InfeasibleDesignError,
    SimulationError,
    check_is_optimized,
    smooth_abs,
    update_dataclass_from_dict,
)
from heatnet.abc import BaseOptimizer
from heatnet.costing import CostBreakdown
from heatnet.models.pnlp import repair_topology
from heatnet.models.results import OptResult
from heatnet.network import DesignVector, Network, StateVector, require_connected
from heatnet.simulator import (
    SolverSettings,
    evaluate_design,
    required_supply_temperature,
)

logger = logging.getLogger("heatnet")

__all__ = [
    "FminlpConfig",
    "MinlpFormulation",
    "ConstraintSet",
    "BnbNode",
    "StageResult",
    "big_m_constant",
    "velocity_cap",
    "pressure_drop_cap",
    "capacity_cap",
    "assemble_bigM_constraints",
    "assemble_facilitation_constraints",
    "check_facilitation",
    "ExistenceConstraints",
    "mip_init",
    "nlp_stage",
    "optimize_fminlp",
    "enumerate_topologies",
    "CombinatorialMINLP",
]


@dataclass
class FminlpConfig:
    """Configuration of the combinatorial optimizer.

    Attributes:
        max_nodes: Branch-and-bound node budget. ``0`` returns the incumbent of the staged initialization.
        max_candidate_pipes: Largest number of candidate pipe pairs accepted, ``None`` for no limit.
        leaf_enumeration: Nodes with at most this many free pairs are solved by enumerating their completions.
        gap_tol: Relative gap below which a node is pruned.
        branch_tol: Distance of a relaxed existence value to 0 or 1 under which it counts as integral.
        big_m_factor: ``M`` in multiples of the nominal mass flow at a 10 K temperature drop.
        v_min: Minimal velocity of an installed pipe, m/s.
        v_max: Absolute velocity cap, m/s.
        v_slope: Slope of the diameter dependent velocity cap, 1/s.
        v_intercept: Intercept of the diameter dependent velocity cap, m/s.
        dp_gradient_max: Largest pressure gradient along a pipe, Pa/m.
        dp_pipe_max: Largest pressure difference over a whole pipe, Pa. ``None`` leaves only the gradient cap.
        capacity_factor: Installed production capacity relative to the total demand.
        dp_hs_min: Smallest pressure drop over a heat exchanger, Pa.
        enforce_facilitation: Add the facilitation rows to every sizing problem. ``False`` only checks them at the returned design.
        d_init: Starting diameter of the staged initialization, m. ``None`` means half of ``D_max``.
        d_lower: Smallest diameter of a free pair in the relaxations, m.
        max_outer: Augmented Lagrangian multiplier updates per sizing problem.
        max_inner: L-BFGS-B iterations per subproblem.
        tol_opt: Relative decrease tolerance of L-BFGS-B.
        constraint_tol: Tolerated violation of the scaled constraints.
        enumerate_max_pairs: Largest superstructure :func:`enumerate_topologies` accepts.
    """

    max_nodes: int = 200
    max_candidate_pipes: Optional[int] = None
    leaf_enumeration: int = 3
    gap_tol: float = 1e-4
    branch_tol: float = 1e-3
    big_m_factor: float = 10.0
    v_min: float = 0.01
    v_max: float = 3.5
    v_slope: float = 18.438
    v_intercept: float = 0.2186
    dp_gradient_max: float = 200.0
    dp_pipe_max: Optional[float] = None
    capacity_factor: float = 1.5
    dp_hs_min: float = 2000.0
    enforce_facilitation: bool = True
    d_init: Optional[float] = None
    d_lower: float = 1e-3
    max_outer: int = 8
    max_inner: int = 200
    tol_opt: float = 1e-10
    constraint_tol: float = 1e-6
    enumerate_max_pairs: int = 12

    def __post_init__(self):
        if self.max_nodes < 0:
            raise ValueError(f"Invalid max_nodes={self.max_nodes}. Must be non-negative.")
        if self.leaf_enumeration < 0:
            raise ValueError(f"Invalid leaf_enumeration={self.leaf_enumeration}. Must be non-negative.")
        for name in ["big_m_factor", "v_min", "v_max", "dp_gradient_max", "capacity_factor", "dp_hs_min", "d_lower", "tol_opt", "constraint_tol"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"Invalid {name}={getattr(self, name)}. Must be strictly positive.")
        if self.dp_pipe_max is not None and self.dp_pipe_max <= 0:
            raise ValueError(f"Invalid dp_pipe_max={self.dp_pipe_max}. Must be strictly positive.")
        if not 0 <= self.gap_tol < 1 or not 0 < self.branch_tol < 0.5:
            raise ValueError("Invalid gap_tol or branch_tol.")

    @classmethod
    def from_dict(cls, values: dict) -> FminlpConfig:
        return update_dataclass_from_dict(cls, values)

    def to_dict(self) -> dict:
        return asdict(self)

    def inner_settings(self) -> InnerSettings:
        return InnerSettings(
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            ftol=self.tol_opt,
            constraint_tol=self.constraint_tol,
        )


def big_m_constant(network: Network, factor: float = 10.0) -> float:
    """Big-M bound on pipe mass flows, kg/s: ``factor`` times the nominal mass flow at a 10 K temperature drop."""
    m = factor * network.total_demand / (network.params.cp * 10.0)
    return m if m > 0 else factor


def velocity_cap(d, config: Optional[FminlpConfig] = None):
    """Velocity cap of a pipe with diameter ``d``, m/s."""
    config = FminlpConfig() if config is None else config
    return np.minimum(config.v_max, config.v_slope * np.asarray(d, float) + config.v_intercept)


def pressure_drop_cap(network: Network, config: Optional[FminlpConfig] = None) -> np.ndarray:
    """Largest pressure difference over each pipe edge, Pa.

    ``dp_gradient_max`` times the pipe length, lowered to ``dp_pipe_max`` when it is set.
    """
    config = FminlpConfig() if config is None else config
    cap = config.dp_gradient_max * network.pipe_lengths
    if config.dp_pipe_max is not None:
        cap = np.minimum(cap, config.dp_pipe_max)
    return cap


def capacity_cap(network: Network, config: Optional[FminlpConfig] = None) -> float:
    """Largest installed production capacity, W."""
    config = FminlpConfig() if config is None else config
    return config.capacity_factor * network.total_demand


@dataclass
class MinlpFormulation:
    """Variables of the combinatorial formulation at one point, per pipe edge in the order of :attr:`Network.pipe_edges`.

    Attributes:
        phi: Existence of each pipe.
        m: Mass flow, kg/s.
        v: Velocity, m/s.
        d: Diameter, m.
        M: Big-M constant, kg/s.
        state: Simulated state the flows were taken from, if any.
    """

    phi: np.ndarray
    m: np.ndarray
    v: np.ndarray
    d: np.ndarray
    M: float
    state: Optional[StateVector] = None

    @classmethod
    def from_state(
        cls,
        network: Network,
        design: DesignVector,
        state: StateVector,
        M: float,
        phi: Optional[np.ndarray] = None,
    ) -> MinlpFormulation:
        d = np.asarray(design.d, float)
        q = state.q[network.pipe_edges]
        area = 0.25 * np.pi * d * d
        v = np.divide(q, area, out=np.zeros_like(q), where=area > 0)
        if phi is None:
            phi = (d > 0).astype(float)
        return cls(np.asarray(phi, float), network.params.rho * q, v, d, M, state)


class ConstraintRow(NamedTuple):
    tag: str
    name: str
    index: int
    value: float


@dataclass
class _Block:
    tag: str
    name: str
    evaluate: Callable[[MinlpFormulation], np.ndarray]
    per_pipe: bool = False


@dataclass
class ConstraintSet:
    """Tagged inequality rows ``g(point) >= 0`` evaluated at a :class:`MinlpFormulation`.

    Values are scaled so that violations and slacks of different rows compare.
    """

    network: Network
    blocks: list[_Block] = field(default_factory=list)

    def __add__(self, other: ConstraintSet) -> ConstraintSet:
        return ConstraintSet(self.network, self.blocks + other.blocks)

    @property
    def tags(self) -> set[str]:
        return {b.tag for b in self.blocks}

    def evaluate(self, point: MinlpFormulation) -> dict[str, np.ndarray]:
        return {b.name: np.atleast_1d(b.evaluate(point)) for b in self.blocks}

    def slack(self, point: MinlpFormulation) -> np.ndarray:
        values = self.evaluate(point)
        return np.concatenate([values[b.name] for b in self.blocks])

    def rows(self, point: MinlpFormulation, installed_only: bool = True) -> list[ConstraintRow]:
        out = []
        for b in self.blocks:
            values = np.atleast_1d(b.evaluate(point))
            for i, value in enumerate(values):
                # Rows of removed pipes are decoupled from the physics
                if installed_only and b.per_pipe and point.phi[i] <= 0:
                    continue
                out.append(ConstraintRow(b.tag, b.name, i, float(value)))
        return out

    def active_rows(self, point: MinlpFormulation, tol: float = 1e-6) -> list[ConstraintRow]:
        return [r for r in self.rows(point) if r.value <= tol]

    def violated_rows(self, point: MinlpFormulation, tol: float = 1e-6) -> list[ConstraintRow]:
        return [r for r in self.rows(point) if r.value < -tol]


def assemble_bigM_constraints(network: Network, M: float) -> ConstraintSet:
    """Big-M coupling of pipe flows to pipe existence.

    Per pipe: ``m - M (1 - phi) <= v rho pi d^2 / 4 <= m + M (1 - phi)``,
    ``d <= D_max phi`` and ``|m| <= M phi``. Per feed/return pair:
    ``phi_feed = phi_return``. The flow row is kept for removed pipes, where it
    forces ``m = 0``.
    """
    if M <= 0:
        raise ValueError(f"Invalid M={M}. Must be strictly positive.")
    rho, D_max = network.params.rho, network.params.D_max
    feed, ret = network.pipe_pairs[:, 0], network.pipe_pairs[:, 1]

    def carried(p):
        return p.v * rho * 0.25 * np.pi * p.d**2

    return ConstraintSet(
        network,
        [
            _Block("bigM", "bigM_lower", lambda p: (carried(p) - p.m + p.M * (1 - p.phi)) / p.M, True),
            _Block("bigM", "bigM_upper", lambda p: (p.m + p.M * (1 - p.phi) - carried(p)) / p.M, True),
            _Block("bigM", "existence", lambda p: (D_max * p.phi - p.d) / D_max, True),
            _Block("bigM", "flow_existence", lambda p: (p.M * p.phi - np.abs(p.m)) / p.M),
            _Block("bigM", "mirror", lambda p: -np.abs(p.phi[feed] - p.phi[ret])),
        ],
    )


def assemble_facilitation_constraints(
    network: Network, config: Optional[FminlpConfig] = None, t_scale: float = 10.0
) -> ConstraintSet:
    """Velocity, pressure drop, capacity and heat exchanger rows that guide the combinatorial solve.

    Per pipe: ``|v| <= v_max``, ``|v| <= v_slope d + v_intercept``,
    ``|v| >= v_min phi`` and ``|p_i - p_j| <=`` :func:`pressure_drop_cap`. Network wide: installed
    capacity ``<= capacity_factor`` times the total demand. Per demanded consumer:
    ``p_feed - p_return >= dp_hs_min`` and ``theta_feed >= theta_exit`` over the
    heating system.
    """
    config = FminlpConfig() if config is None else config
    net = network
    rho_cp = net.params.rho * net.params.cp
    t_pipe, h_pipe = net.tails[net.pipe_edges], net.heads[net.pipe_edges]
    dp_cap = pressure_drop_cap(net, config)
    demanded = np.array(
        [k for k, c in enumerate(net.consumer_ids) if net.consumers[c].demand > 0], dtype=int
    )
    hs = np.asarray(net.hs_edges, dtype=int)[demanded]
    arcs = np.asarray(net.arc_edges, dtype=int)
    Theta = np.array([s.Theta for s in net.producers.values()])
    cap = max(capacity_cap(net, config), 1e-12)

    def state_of(p: MinlpFormulation) -> StateVector:
        if p.state is None:
            raise ValueError("Facilitation rows need a simulated state.")
        return p.state

    def capacity(p):
        s = state_of(p)
        produced = np.sum(rho_cp * s.q[arcs] * (Theta - s.theta[net.tails[arcs]]))
        return np.array([1.0 - produced / cap])

    return ConstraintSet(
        net,
        [
            _Block("facilitation", "velocity_max", lambda p: 1.0 - np.abs(p.v) / config.v_max, True),
            _Block(
                "facilitation",
                "velocity_diameter",
                lambda p: (config.v_slope * p.d + config.v_intercept - np.abs(p.v)) / config.v_max,
                True,
            ),
            _Block("facilitation", "velocity_min", lambda p: (np.abs(p.v) - config.v_min * p.phi) / config.v_min, True),
            _Block(
                "facilitation",
                "pipe_pressure_drop",
                lambda p: np.where(
                    p.phi > 0,
                    1.0 - np.abs(state_of(p).p[t_pipe] - state_of(p).p[h_pipe]) / dp_cap,
                    1.0,
                ),
                True,
            ),
            _Block("facilitation", "capacity", capacity),
            _Block(
                "facilitation",
                "heat_exchanger_pressure_drop",
                lambda p: (state_of(p).p[net.tails[hs]] - state_of(p).p[net.heads[hs]]) / config.dp_hs_min - 1.0,
            ),
            _Block(
                "facilitation",
                "heat_exchanger_temperature",
                lambda p: (state_of(p).theta[net.tails[hs]] - state_of(p).theta_exit[hs]) / t_scale,
            ),
        ],
    )


def check_facilitation(
    constraints: ConstraintSet, point: MinlpFormulation, tol: float = 1e-6
) -> list[ConstraintRow]:
    """Facilitation rows active at ``point``, a warning is logged when there are any."""
    active = [r for r in constraints.active_rows(point, tol) if r.tag == "facilitation"]
    if active:
        names = sorted({r.name for r in active})
        logger.warning(
            f"{len(active)} facilitation constraints are active at the optimum ({', '.join(names)})."
        )
    return active


class FacilitationConstraints:
    """Facilitation rows as differentiable constraints of a sizing problem."""

    def __init__(
        self,
        network: Network,
        config: FminlpConfig,
        settings: SolverSettings,
        relaxed_pairs: Optional[np.ndarray] = None,
    ):
        self.network = network
        self.config = config
        self.settings = settings
        self.rows = assemble_facilitation_constraints(network, config, settings.t_scale)
        self.relaxed = (
            np.zeros(network.num_pipes, dtype=bool)
            if relaxed_pairs is None
            else np.asarray(relaxed_pairs, dtype=bool)[network.pair_of_pipe]
        )
        self.M = big_m_constant(network, config.big_m_factor)
        self._size = None

    def _point(self, design: DesignVector, state: StateVector) -> MinlpFormulation:
        d = design.d
        D_max = self.network.params.D_max
        phi = np.where(self.relaxed, d / D_max, (d >= self.settings.d_eps).astype(float))
        point = MinlpFormulation.from_state(self.network, design, state, self.M, phi)
        point.v = np.where(d >= self.settings.d_eps, point.v, 0.0)
        return point

    @property
    def size(self) -> int:
        if self._size is None:
            n = self.network
            n_hs = sum(1 for c in n.consumer_ids if n.consumers[c].demand > 0)
            self._size = 4 * n.num_pipes + 1 + 2 * n_hs
        return self._size

    def values(self, design: DesignVector, state: StateVector) -> np.ndarray:
        return self.rows.slack(self._point(design, state))

    def weighted_grad(self, design: DesignVector, state: StateVector, w: np.ndarray):
        net, c = self.network, self.config
        P = net.num_pipes
        grad = StateVector(
            np.zeros_like(state.q),
            np.zeros_like(state.p),
            np.zeros_like(state.theta),
            np.zeros_like(state.theta_exit),
        )
        g_d = np.zeros(P)
        d = np.asarray(design.d, float)
        on = d >= self.settings.d_eps
        e = np.asarray(net.pipe_edges)
        q = state.q[e]
        s = smooth_abs(q, self.settings.q_eps)
        area = 0.25 * np.pi * np.where(on, d, 1.0) ** 2
        v = np.where(on, s.value / area, 0.0)
        dv_dq = np.where(on, s.grad / area, 0.0)
        dv_dd = np.where(on, -2.0 * v / np.where(on, d, 1.0), 0.0)
        w_vmax, w_vd, w_vmin, w_dp = w[:P], w[P : 2 * P], w[2 * P : 3 * P], w[3 * P : 4 * P]

        np.add.at(grad.q, e, -(w_vmax / c.v_max) * dv_dq)
        g_d += -(w_vmax / c.v_max) * dv_dd
        np.add.at(grad.q, e, -(w_vd / c.v_max) * dv_dq)
        g_d += (w_vd / c.v_max) * (c.v_slope * on - dv_dd)
        dphi_dd = np.where(self.relaxed, 1.0 / net.params.D_max, 0.0)
        np.add.at(grad.q, e, (w_vmin / c.v_min) * dv_dq)
        g_d += (w_vmin / c.v_min) * (dv_dd - c.v_min * dphi_dd)

        t, h = net.tails[e], net.heads[e]
        sign = np.where(on, np.sign(state.p[t] - state.p[h]), 0.0)
        dp_cap = pressure_drop_cap(net, c)
        np.add.at(grad.p, t, -w_dp * sign / dp_cap)
        np.add.at(grad.p, h, w_dp * sign / dp_cap)

        rho_cp = net.params.rho * net.params.cp
        arcs = np.asarray(net.arc_edges)
        Theta = np.array([sp.Theta for sp in net.producers.values()])
        cap = max(capacity_cap(net, c), 1e-12)
        w_cap = w[4 * P]
        ret = net.tails[arcs]
        np.add.at(grad.q, arcs, -w_cap * rho_cp * (Theta - state.theta[ret]) / cap)
        np.add.at(grad.theta, ret, w_cap * rho_cp * state.q[arcs] / cap)

        demanded = [k for k, cid in enumerate(net.consumer_ids) if net.consumers[cid].demand > 0]
        hs = np.asarray(net.hs_edges, dtype=int)[np.asarray(demanded, dtype=int)]
        n_hs = len(hs)
        w_hdp = w[4 * P + 1 : 4 * P + 1 + n_hs]
        w_ht = w[4 * P + 1 + n_hs :]
        np.add.at(grad.p, net.tails[hs], w_hdp / c.dp_hs_min)
        np.add.at(grad.p, net.heads[hs], -w_hdp / c.dp_hs_min)
        np.add.at(grad.theta, net.tails[hs], w_ht / self.settings.t_scale)
        np.add.at(grad.theta_exit, hs, -w_ht / self.settings.t_scale)
        return grad, g_d


class ExistenceConstraints:
    """Big-M flow rows ``|m| <= M phi`` of the relaxed pairs as differentiable constraints of a sizing problem.

    The existence of a relaxed pair is ``phi = d / D_max``, so a thin relaxed pipe
    can only carry a small flow. Pairs fixed to zero are removed from the
    simulation and carry no flow, pairs fixed to one are bounded by ``M`` alone.
    """

    def __init__(self, network: Network, M: float, relaxed_pairs: np.ndarray, settings: SolverSettings):
        if M <= 0:
            raise ValueError(f"Invalid M={M}. Must be strictly positive.")
        self.network = network
        self.M = M
        self.settings = settings
        relaxed = np.asarray(relaxed_pairs, dtype=bool)[network.pair_of_pipe]
        self.pipes = np.flatnonzero(relaxed)
        self.edges = np.asarray(network.pipe_edges, dtype=int)[self.pipes]

    @property
    def size(self) -> int:
        return len(self.pipes)

    def values(self, design: DesignVector, state: StateVector) -> np.ndarray:
        params = self.network.params
        phi = design.d[self.pipes] / params.D_max
        m = smooth_abs(params.rho * state.q[self.edges], params.rho * self.settings.q_eps).value
        return (self.M * phi - m) / self.M

    def weighted_grad(self, design: DesignVector, state: StateVector, w: np.ndarray):
        params = self.network.params
        grad = StateVector(
            np.zeros_like(state.q),
            np.zeros_like(state.p),
            np.zeros_like(state.theta),
            np.zeros_like(state.theta_exit),
        )
        s = smooth_abs(params.rho * state.q[self.edges], params.rho * self.settings.q_eps)
        np.add.at(grad.q, self.edges, -w * params.rho * s.grad / self.M)
        g_d = np.zeros(self.network.num_pipes)
        np.add.at(g_d, self.pipes, w / params.D_max)
        return grad, g_d


def _pipe_graph(network: Network) -> nx.Graph:
    # Feed side of the superstructure, one edge per candidate pair
    g = nx.Graph()
    g.add_nodes_from(n.id for n in network.nodes if n.kind.is_feed)
    lengths = network.pair_lengths
    for k, pos in enumerate(network.pipe_pairs[:, 0]):
        e = network.edges[network.pipe_edges[pos]]
        if g.has_edge(e.tail, e.head) and g[e.tail][e.head]["weight"] <= lengths[k]:
            continue
        g.add_edge(e.tail, e.head, weight=float(lengths[k]), pair=k)
    return g


def mip_init(network: Network, margin: float = 0.1) -> np.ndarray:
    """Tree-like initial topology of small total pipe length connecting every demanded consumer to a producer.

    Consumers are connected to a virtual source linked to every producer hot enough
    to supply all demanded consumers (all producers if none is). The Steiner tree is
    approximated by the minimum spanning tree of the metric closure of the terminals.

    Args:
        network (Network): Superstructure.
        margin (float): Supply temperature margin used to select eligible producers.

    Returns:
        Boolean mask over pipe pairs.

    Raises:
        DisconnectedConsumerError: If a demanded consumer cannot be reached even with every candidate pipe installed.
    """
    require_connected(network, np.ones(network.n_candidate_pipes, dtype=bool))
    demanded = [c for c in network.consumer_ids if network.consumers[c].demand > 0]
    mask = np.zeros(network.n_candidate_pipes, dtype=bool)
    if not demanded:
        return mask
    needed = max(required_supply_temperature(network.consumers[c], margin) for c in demanded)
    eligible = [p for p in network.producer_ids if network.producers[p].Theta >= needed]
    if not eligible:
        logger.warning("No producer can supply every consumer, all producers are used as roots.")
        eligible = list(network.producer_ids)

    graph = _pipe_graph(network)
    source = max(n.id for n in network.nodes) + 1
    for p in eligible:
        graph.add_edge(source, p, weight=0.0, pair=-1)
    tree = steiner_tree(graph, [source] + demanded, weight="weight", method="kou")
    for _, _, k in tree.edges(data="pair"):
        if k is not None and k >= 0:
            mask[k] = True
    return mask


class StageResult(NamedTuple):
    stage: str
    design: DesignVector
    cost: Optional[CostBreakdown]
    state: Optional[StateVector]
    converged: bool


def _stage_settings(settings: SolverSettings, stage: str) -> SolverSettings:
    if stage == "NLP1":
        return replace(settings, radiator="linear")
    if stage == "NLP2":
        return replace(settings, radiator="chen")
    raise ValueError("Invalid stage. Allowed values are 'NLP1' and 'NLP2'.")


def _sizing_constraints(network, config, settings, relaxed_pairs=None) -> list:
    constraints = [DemandConstraints(network, settings)]
    if relaxed_pairs is not None and np.any(relaxed_pairs):
        M = big_m_constant(network, config.big_m_factor)
        constraints.append(ExistenceConstraints(network, M, relaxed_pairs, settings))
    if config.enforce_facilitation:
        constraints.append(FacilitationConstraints(network, config, settings, relaxed_pairs))
    return constraints


def nlp_stage(
    network: Network,
    phi: np.ndarray,
    stage: str = "NLP2",
    config: Optional[FminlpConfig] = None,
    settings: Optional[SolverSettings] = None,
    init: Optional[DesignVector] = None,
) -> StageResult:
    """Size the pipes of the fixed topology ``phi``.

    ``"NLP1"`` uses the radiator characteristic with its exponent forced to one,
    ``"NLP2"`` the full model. Installed pairs are bounded below by ``d_min``.

    Raises:
        DisconnectedConsumerError: If ``phi`` leaves a demanded consumer without a producer.
    """
    config = FminlpConfig() if config is None else config
    settings = SolverSettings() if settings is None else settings
    stage_settings = _stage_settings(settings, stage)
    phi = np.asarray(phi, dtype=bool)
    require_connected(network, phi)
    params = network.params
    if init is None:
        d0 = 0.5 * params.D_max if config.d_init is None else config.d_init
        init = network.design_from_pairs(np.where(phi, d0, 0.0))
    problem = SizingProblem(
        network,
        variable_pairs=np.flatnonzero(phi),
        lower=params.d_min,
        settings=stage_settings,
        mode="raw",
        constraints=_sizing_constraints(network, config, stage_settings),
    )
    z = problem.to_variables(init)
    try:
        problem.calibrate(z)
        al = minimize_augmented_lagrangian(
            problem.evaluate, z, problem.bounds, problem.n_constraints, config.inner_settings()
        )
    except SimulationError as err:
        logger.warning(f"{stage} cannot start from the given design: {err}")
        return StageResult(stage, problem.design(z), None, None, False)
    design = problem.design(al.x)
    evaluation = evaluate_design(network, design, stage_settings)
    state = evaluation.sim.state if evaluation.cost is not None else None
    return StageResult(stage, design, evaluation.cost, state, al.converged and evaluation.cost is not None)


@dataclass(order=True)
class BnbNode:
    """Node of the branch-and-bound tree, ordered by its relaxation bound.

    Attributes:
        bound: Relaxation cost of the parent, replaced by the node's own once solved, EUR.
        depth: Number of fixed pairs.
        fixed: Fixed existence of pipe pairs, pair index to 0 or 1.
        status: ``"open"``, ``"pruned"``, ``"infeasible"``, ``"integral"`` or ``"branched"``.
    """

    bound: float
    order: int
    depth: int = field(compare=False, default=0)
    fixed: dict = field(compare=False, default_factory=dict)
    status: str = field(compare=False, default="open")
    warm: Optional[DesignVector] = field(compare=False, default=None, repr=False)


class _Sizer:
    """Cached NLP2 sizing of discrete topologies."""

    def __init__(self, network, config, settings):
        self.network = network
        self.config = config
        self.settings = settings
        self.cache: dict[bytes, Optional[StageResult]] = {}

    def __call__(self, phi: np.ndarray, init: Optional[DesignVector] = None) -> Optional[StageResult]:
        key = np.packbits(np.asarray(phi, dtype=bool)).tobytes()
        if key not in self.cache:
            try:
                result = nlp_stage(self.network, phi, "NLP2", self.config, self.settings, init)
            except DisconnectedConsumerError:
                result = None
            self.cache[key] = result if result is not None and result.cost is not None else None
        return self.cache[key]


def _relax(network, node: BnbNode, config, settings, warm: DesignVector):
    P = network.n_candidate_pipes
    free = np.array([k not in node.fixed for k in range(P)])
    ones = np.array([node.fixed.get(k) == 1 for k in range(P)])
    variable = np.flatnonzero(free | ones)
    lower = np.where(free[variable], config.d_lower, network.params.d_min)
    problem = SizingProblem(
        network,
        variable_pairs=variable,
        lower=lower,
        settings=settings,
        mode="raw",
        relaxed_pairs=free,
        constraints=_sizing_constraints(network, config, settings, free),
    )
    z = problem.to_variables(warm)
    problem.calibrate(z)
    al = minimize_augmented_lagrangian(
        problem.evaluate, z, problem.bounds, problem.n_constraints, config.inner_settings()
    )
    design = problem.design(al.x)
    evaluation = evaluate_design(network, design, settings)
    if evaluation.cost is None:
        return None, free
    # Relaxation cost with the fixed cost of free pairs charged as p0 d / D_max
    value = problem.objective(design, evaluation.sim.state).value
    return (design, value), free


def _fractional(network, design, free, config) -> Optional[int]:
    phi = network.pair_values(design.d) / network.params.D_max
    lo = config.d_lower / network.params.D_max
    score = np.where(free, np.minimum(phi - lo, 1.0 - phi), -np.inf)
    k = int(np.argmax(score))
    if score[k] <= config.branch_tol:
        return None
    return k


def _completions(free_idx: np.ndarray):
    for bits in itertools.product([0, 1], repeat=len(free_idx)):
        yield dict(zip(free_idx.tolist(), bits))


def optimize_fminlp(
    network: Network,
    config: Optional[FminlpConfig] = None,
    settings: Optional[SolverSettings] = None,
    show_progress: bool = False,
) -> OptResult:
    """Combinatorial topology optimization.

    Runs the staged initialization (length minimizing tree, sizing with the linear
    radiator, sizing with the full model), then a best-first branch-and-bound over
    the pair existence variables. Each node solves a relaxation where the
    existence of free pairs is ``d / D_max``, pairs fixed to one are bounded by
    ``d_min`` and pairs fixed to zero are removed. Rounding the relaxed design and
    sizing the rounded topology provides incumbents. The relaxations are
    nonconvex, so the reported gap is heuristic.

    Args:
        network (Network): Superstructure.
        config (FminlpConfig or None): Optimizer configuration.
        settings (SolverSettings or None): Simulator settings.
        show_progress (bool): Show a progress bar over the node budget.

    Returns:
        The :class:`OptResult` of the incumbent.

    Raises:
        InfeasibleDesignError: If neither the staged initialization nor the root relaxation yields a feasible design.
    """
    config = FminlpConfig() if config is None else config
    settings = SolverSettings() if settings is None else settings
    if config.max_candidate_pipes is not None and network.n_candidate_pipes > config.max_candidate_pipes:
        raise ValueError(
            f"The network has {network.n_candidate_pipes} candidate pipes, more than max_candidate_pipes={config.max_candidate_pipes}."
        )
    start_time = time.perf_counter()
    params = network.params
    sizer = _Sizer(network, config, settings)
    info = {"config": config.to_dict(), "fallbacks": []}

    # Staged initialization
    phi0 = mip_init(network, settings.supply_margin)
    info["mip_length"] = float(np.sum(network.pair_lengths[phi0]))
    nlp1 = nlp_stage(network, phi0, "NLP1", config, settings)
    if not nlp1.converged:
        info["fallbacks"].append("NLP1")
        logger.warning("NLP1 did not converge, NLP2 starts from its last design.")
    nlp2 = nlp_stage(network, phi0, "NLP2", config, settings, init=nlp1.design)
    if not nlp2.converged:
        info["fallbacks"].append("NLP2")
        logger.warning("NLP2 did not converge, falling back to the NLP1 design.")
        fallback = evaluate_design(network, nlp1.design, settings)
        if fallback.cost is not None:
            nlp2 = StageResult("NLP2", nlp1.design, fallback.cost, fallback.sim.state, False)
    info["nlp1_cost"] = None if nlp1.cost is None else nlp1.cost.total_npv
    info["nlp2_cost"] = None if nlp2.cost is None else nlp2.cost.total_npv

    incumbent: Optional[StageResult] = nlp2 if nlp2.cost is not None else None
    history: list[tuple[int, float]] = []
    if incumbent is not None:
        history.append((0, incumbent.cost.total_npv))

    def length_of(result: StageResult) -> float:
        return network.total_pipe_length(result.design)

    def offer(candidate: Optional[StageResult], n: int):
        nonlocal incumbent
        if candidate is None or candidate.cost is None:
            return
        if incumbent is None:
            better = True
        else:
            c, b = candidate.cost.total_npv, incumbent.cost.total_npv
            better = c < b - 1e-9 * abs(b) or (abs(c - b) <= 1e-9 * abs(b) and length_of(candidate) < length_of(incumbent))
        if better:
            incumbent = candidate
            history.append((n, candidate.cost.total_npv))
            logger.info(f"New incumbent at node {n}: {candidate.cost.total_npv:.6e}")

    # Branch and bound
    P = network.n_candidate_pipes
    warm_root = nlp2.design if nlp2.cost is not None else network.design_from_pairs(
        np.full(P, 0.5 * params.D_max)
    )
    counter = itertools.count()
    heap = [BnbNode(-np.inf, next(counter), 0, {}, "open", warm_root)]
    processed = 0
    root_infeasible = False
    progress = tqdm(total=config.max_nodes, desc="fMINLP nodes", unit="node", leave=False, disable=not show_progress)
    while heap and processed < config.max_nodes:
        node = heapq.heappop(heap)
        if incumbent is not None and node.bound >= incumbent.cost.total_npv * (1 - config.gap_tol):
            node.status = "pruned"
            heap.clear()
            break
        processed += 1
        progress.update(1)
        available = np.array([node.fixed.get(k, 1) == 1 for k in range(P)])
        if network.disconnected_consumers(available):
            node.status = "infeasible"
            continue
        free_idx = np.array([k for k in range(P) if k not in node.fixed], dtype=int)
        if len(free_idx) <= config.leaf_enumeration:
            for completion in _completions(free_idx):
                fixed = {**node.fixed, **completion}
                phi = np.array([fixed[k] == 1 for k in range(P)])
                if network.disconnected_consumers(phi):
                    continue
                offer(sizer(phi), processed)
            node.status = "integral"
            continue
        try:
            relaxed, free = _relax(network, node, config, settings, node.warm)
        except SimulationError as err:
            logger.debug(f"Relaxation of node {processed} cannot start: {err}")
            relaxed = None
        if relaxed is None:
            node.status = "infeasible"
            if processed == 1:
                root_infeasible = True
            continue
        design, value = relaxed
        node.bound = max(node.bound, value)
        # Rounding heuristic
        try:
            rounded, _ = repair_topology(network, design, params.d_min)
            phi = network.pair_values(rounded.d) > 0
            phi &= available
            if not network.disconnected_consumers(phi):
                offer(sizer(phi, init=rounded), processed)
        except DisconnectedConsumerError:
            pass
        if incumbent is not None and node.bound >= incumbent.cost.total_npv * (1 - config.gap_tol):
            node.status = "pruned"
            continue
        k = _fractional(network, design, free, config)
        if k is None:
            node.status = "integral"
            phi = np.array([node.fixed.get(j, 0) == 1 or (free[j] and network.pair_values(design.d)[j] >= params.d_min) for j in range(P)])
            if not network.disconnected_consumers(phi):
                offer(sizer(phi, init=design), processed)
            continue
        node.status = "branched"
        for value_k in (1, 0):
            heapq.heappush(
                heap,
                BnbNode(node.bound, next(counter), node.depth + 1, {**node.fixed, k: value_k}, "open", design),
            )
    progress.close()

    if incumbent is None:
        if root_infeasible or config.max_nodes == 0:
            raise InfeasibleDesignError("The root problem is infeasible and the staged initialization produced no design.")
        raise InfeasibleDesignError("No feasible topology was found within the node budget.")

    best_cost = incumbent.cost.total_npv
    open_bounds = [n.bound for n in heap]
    if not heap:
        gap = 0.0
    elif not np.all(np.isfinite(open_bounds)):
        # An unsolved root leaves no bound
        gap = None
    else:
        lower = min(min(open_bounds), best_cost)
        gap = max(0.0, (best_cost - lower) / abs(best_cost)) if best_cost else 0.0
    converged = not heap and incumbent is not None

    phi_final = network.pair_values(incumbent.design.d) > 0
    M = big_m_constant(network, config.big_m_factor)
    point = MinlpFormulation.from_state(network, incumbent.design, incumbent.state, M)
    bigM = assemble_bigM_constraints(network, M)
    facilitation = assemble_facilitation_constraints(network, config, settings.t_scale)
    active = check_facilitation(facilitation, point)
    info.update(
        {
            "phi": phi_final.astype(int).tolist(),
            "nodes": processed,
            "gap": gap,
            "gap_is_heuristic": True,
            "bigM_violations": len(bigM.violated_rows(point)),
            "facilitation_active": [list(r) for r in active],
            "total_pipe_length": length_of(incumbent),
        }
    )
    if not converged:
        gap_text = "unknown" if gap is None else f"{gap:.2%}"
        logger.warning(f"fMINLP stopped after {processed} nodes with {len(heap)} open nodes, heuristic gap {gap_text}.")
    return OptResult(
        design=incumbent.design,
        cost=incumbent.cost,
        converged=converged,
        outer_iterations=processed,
        history=history,
        method="fminlp",
        state=incumbent.state,
        info=info,
        wall_time=time.perf_counter() - start_time,
    )


class EnumerationResult(NamedTuple):
    best: OptResult
    table: list[dict]


def enumerate_topologies(
    network: Network,
    config: Optional[FminlpConfig] = None,
    settings: Optional[SolverSettings] = None,
    show_progress: bool = False,
) -> EnumerationResult:
    """Size every connected topology of a small superstructure and return the cheapest.

    Raises:
        ValueError: If the superstructure has more than ``config.enumerate_max_pairs`` candidate pipes.
        InfeasibleDesignError: If no topology can be sized.
    """
    config = FminlpConfig() if config is None else config
    P = network.n_candidate_pipes
    if P > config.enumerate_max_pairs:
        raise ValueError(
            f"Enumeration over {P} candidate pipes exceeds enumerate_max_pairs={config.enumerate_max_pairs}."
        )
    start_time = time.perf_counter()
    sizer = _Sizer(network, config, SolverSettings() if settings is None else settings)
    table = []
    best = None
    for bits in tqdm(list(itertools.product([0, 1], repeat=P)), desc="Topologies", leave=False, disable=not show_progress):
        phi = np.array(bits, dtype=bool)
        if network.disconnected_consumers(phi):
            continue
        result = sizer(phi)
        table.append({"phi": list(bits), "cost": None if result is None else result.cost.total_npv})
        if result is None:
            continue
        if best is None or result.cost.total_npv < best.cost.total_npv - 1e-9 * abs(best.cost.total_npv):
            best = result
    if best is None:
        raise InfeasibleDesignError("No topology of the superstructure can be sized.")
    result = OptResult(
        design=best.design,
        cost=best.cost,
        converged=True,
        outer_iterations=len(table),
        history=[(len(table), best.cost.total_npv)],
        method="enumeration",
        state=best.state,
        info={"phi": (network.pair_values(best.design.d) > 0).astype(int).tolist()},
        wall_time=time.perf_counter() - start_time,
    )
    return EnumerationResult(result, table)


class CombinatorialMINLP(BaseOptimizer):
    """Combinatorial topology optimizer with staged initialization and branch-and-bound.

    Args:
        config (FminlpConfig or None): Optimizer configuration.
        settings (SolverSettings or None): Simulator settings.
        show_progress (bool): Show progress bars.

    Attributes:
        result_: :class:`OptResult` of the last call to :func:`optimize`.
    """

    def __init__(
        self,
        config: Optional[FminlpConfig] = None,
        settings: Optional[SolverSettings] = None,
        show_progress: bool = False,
    ):
        self.config = FminlpConfig() if config is None else config
        self.settings = SolverSettings() if settings is None else settings
        self.show_progress = show_progress

    @property
    def method(self) -> str:
        return "fminlp"

    @property
    def is_optimized(self) -> bool:
        return hasattr(self, "result_")

    def optimize(self, network: Network, init: Optional[DesignVector] = None) -> CombinatorialMINLP:
        if init is not None:
            logger.warning("CombinatorialMINLP builds its own initialization, the given design is ignored.")
        self.result_ = optimize_fminlp(network, self.config, self.settings, self.show_progress)
        return self

    @property
    def design_(self) -> DesignVector:
        check_is_optimized(self, ["result_"])
        return self.result_.design

    def save(self, filename):
        """Serialize the optimizer and its result to a file.

        Args:
            filename (path-like or file-like): Save the optimizer to file.
        """
        pickle_save(self, filename)

    @classmethod
    def load(cls, filename) -> CombinatorialMINLP:
        return pickle_load(cls, filename)

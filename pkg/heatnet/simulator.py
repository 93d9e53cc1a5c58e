from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import scipy.sparse
from scipy.optimize import brentq

from heatnet._src.linalg import graph_components, sparse_lu, weighted_laplacian_solve
from heatnet._src.physics import (
    _momentum_coefficient,
    check_buried_pipe_diameter,
    lmtd_chen,
    lmtd_with_grad,
    outlet_factor_with_grad,
    pipe_outlet_temperature,
    pipe_pressure_drop,
    pressure_drop_with_grad,
    radiator_heat,
    thermal_resistance,
)
from heatnet._src.utils import (
    AdjointError,
    DisconnectedConsumerError,
    SimulationError,
    positive_part,
    update_dataclass_from_dict,
)
from heatnet.costing import CostBreakdown, FunctionalValue, cost_sensitivities, total_cost
from heatnet.network import (
    NOMINAL_TEMPERATURE_DROP,
    ROLE_HEATING_SYSTEM,
    ROLE_PIPE,
    ROLE_PRODUCER,
    ConsumerSpec,
    DesignVector,
    Network,
    StateVector,
)

logger = logging.getLogger("heatnet")

__all__ = [
    "SolverSettings",
    "SimResult",
    "solve_state",
    "adjoint_gradient",
    "pipe_pressure_drop",
    "pipe_outlet_temperature",
    "thermal_resistance",
    "lmtd_chen",
    "radiator_heat",
    "required_supply_temperature",
    "producer_shares",
    "edge_table",
    "evaluate_design",
    "DesignEvaluation",
]


@dataclass
class SolverSettings:
    """Settings of the steady-state Newton solver.

    Attributes:
        tol: Tolerance on the infinity norm of the scaled residuals.
        max_iter: Maximum number of Newton iterations.
        armijo: Sufficient decrease constant of the backtracking line search.
        backtrack_factor: Step reduction factor of the line search.
        max_backtracks: Maximum number of step reductions per iteration.
        q_eps: Smoothing of ``|q|`` around zero flow, m^3/s.
        d_eps: Pipes thinner than this are removed from the simulated network, m.
        q_min: Flow through the heating system of consumers without demand, m^3/s.
        dp_setpoint: Differential pressure the main pump keeps at the critical consumer, Pa.
        dp_softmin: Smoothing of the minimum over consumer valve pressures that defines the critical consumer, Pa. ``0`` selects the hard minimum.
        supply_margin: Relative margin on the minimal radiator driving temperature used by demand constraints.
        radiator: ``"chen"`` for the full radiator characteristic, ``"linear"`` for the exponent forced to one.
    """

    tol: float = 1e-8
    max_iter: int = 200
    armijo: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    q_eps: float = 1e-9
    d_eps: float = 1e-4
    q_min: float = 1e-7
    dp_setpoint: float = 2.5e3
    dp_softmin: float = 10.0
    supply_margin: float = 0.1
    radiator: str = "chen"
    p_scale: float = 1e4
    t_scale: float = 10.0

    def __post_init__(self):
        if self.radiator not in ["chen", "linear"]:
            raise ValueError("Invalid radiator. Allowed values are 'chen' and 'linear'.")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("Invalid tolerances: tol must be positive and max_iter >= 1.")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("Invalid backtrack_factor. Must lie in (0, 1).")
        if self.dp_softmin < 0:
            raise ValueError(f"Invalid dp_softmin={self.dp_softmin}. Must be non-negative.")

    @classmethod
    def from_dict(cls, values: dict) -> SolverSettings:
        return update_dataclass_from_dict(cls, values)


@dataclass
class SimResult:
    state: StateVector
    converged: bool
    iterations: int
    residual_norm: float
    system: Optional["_System"] = field(default=None, repr=False)

    @property
    def active_edges(self) -> np.ndarray:
        mask = np.zeros(len(self.state.q), dtype=bool)
        if self.system is not None:
            mask[self.system.edges] = True
        return mask


def required_driving_temperature(
    spec: ConsumerSpec, radiator: str = "chen", Theta_nominal: Optional[float] = None
) -> float:
    """LMTD a radiator needs to deliver its demand, K."""
    if spec.demand <= 0:
        return 0.0
    if radiator == "chen":
        return (spec.demand / spec.xi) ** (1.0 / spec.n_exp)
    # Exponent forced to one, coefficient rescaled at the nominal design point
    if Theta_nominal is None:
        raise ValueError("The linear radiator needs a nominal supply temperature.")
    dA = max(Theta_nominal - spec.theta_house, 1.0)
    dB = max(Theta_nominal - NOMINAL_TEMPERATURE_DROP - spec.theta_house, 1.0)
    xi_lin = spec.xi * lmtd_chen(dA, dB) ** (spec.n_exp - 1.0)
    return spec.demand / xi_lin


def required_supply_temperature(
    spec: ConsumerSpec, margin: float = 0.1, radiator: str = "chen", Theta_nominal=None
) -> float:
    """Lowest feed temperature above ambient at which ``spec`` can receive its demand, including ``margin``."""
    return spec.theta_house + (1.0 + margin) * required_driving_temperature(
        spec, radiator, Theta_nominal
    )


class _System:
    """Residuals and Jacobians of the steady-state equations on the active part of a network."""

    def __init__(self, network: Network, design: DesignVector, settings: SolverSettings):
        self.network = network
        self.design = design
        self.settings = settings
        params = network.params
        self.params = params

        d = np.asarray(design.d, float)
        pair_mask = (
            np.minimum(d[network.pipe_pairs[:, 0]], d[network.pipe_pairs[:, 1]])
            >= settings.d_eps
        )
        check_buried_pipe_diameter(d[d > 0], params)

        missing = network.disconnected_consumers(pair_mask, demanded_only=False)
        demanded = [c for c in missing if network.consumers[c].demand > 0]
        if demanded:
            raise DisconnectedConsumerError(
                demanded,
                f"Consumers {sorted(demanded)} are isolated: no path of pipes with d >= {settings.d_eps} m to a producer.",
            )
        edge_on = np.zeros(network.num_edges, dtype=bool)
        pipe_on = pair_mask[network.pair_of_pipe]
        edge_on[network.pipe_edges[pipe_on]] = True
        edge_on[network.arc_edges] = True
        for k, cid in enumerate(network.consumer_ids):
            if cid not in missing:
                edge_on[network.hs_edges[k]] = True

        # Components without a producer are dropped
        comps = graph_components(
            network.num_nodes, network.tails[edge_on], network.heads[edge_on]
        )
        producer_nodes = network.heads[network.arc_edges]
        live = np.isin(comps.labels, np.unique(comps.labels[producer_nodes]))
        edge_on &= live[network.tails]
        node_on = np.zeros(network.num_nodes, dtype=bool)
        node_on[network.tails[edge_on]] = True
        node_on[network.heads[edge_on]] = True

        self.edges = np.flatnonzero(edge_on)
        self.nodes = np.flatnonzero(node_on)
        self.E, self.N = len(self.edges), len(self.nodes)
        local_node = -np.ones(network.num_nodes, dtype=int)
        local_node[self.nodes] = np.arange(self.N)
        self.local_node = local_node
        self.t = local_node[network.tails[self.edges]]
        self.h = local_node[network.heads[self.edges]]
        role = network.edge_role[self.edges]

        # Pipes
        self.pipes = np.flatnonzero(role == ROLE_PIPE)
        self.pipe_pos = network.pipe_position[self.edges[self.pipes]]
        self.pipe_d = d[self.pipe_pos]
        self.pipe_L = network.lengths[self.edges[self.pipes]]

        # Heating systems
        hs_global = {e: k for k, e in enumerate(network.hs_edges)}
        hs = np.flatnonzero(role == ROLE_HEATING_SYSTEM)
        specs = [network.consumers[network.consumer_ids[hs_global[e]]] for e in self.edges[hs]]
        demand = np.array([s.demand for s in specs])
        self.hs_on = hs[demand > 0]
        self.hs_off = hs[demand <= 0]
        self.hs_demand = demand[demand > 0]
        self.hs_house = np.array([s.theta_house for s in specs])[demand > 0]
        Theta_max = max(s.Theta for s in network.producers.values())
        self.hs_lreq = np.array(
            [
                required_driving_temperature(s, settings.radiator, Theta_max)
                for s in specs
                if s.demand > 0
            ]
        )

        # Producers: one slack producer and pressure reference per component
        comps = graph_components(self.N, self.t, self.h)
        self.comp_labels = comps.labels
        arc_global = {e: k for k, e in enumerate(network.arc_edges)}
        self.arcs = np.flatnonzero(role == ROLE_PRODUCER)
        self.arc_k = np.array([arc_global[e] for e in self.edges[self.arcs]], dtype=int)
        self.arc_Theta = np.array(
            [network.producers[network.producer_ids[k]].Theta for k in self.arc_k]
        )
        arc_comp = comps.labels[self.h[self.arcs]]
        self.arc_main = np.zeros(len(self.arcs), dtype=bool)
        for c in np.unique(arc_comp):
            self.arc_main[np.flatnonzero(arc_comp == c)[0]] = True
        self.reference = self.t[self.arcs[self.arc_main]]
        # Consumers whose valve pressure the main pump of each component controls
        hs_all = np.concatenate([self.hs_on, self.hs_off])
        self.main_consumers = [
            hs_all[comps.labels[self.t[hs_all]] == arc_comp[i]]
            for i in np.flatnonzero(self.arc_main)
        ]
        self.gamma = np.asarray(design.gamma, float)[self.arc_k]

        self.q_scale = max(network.nominal_flow / max(len(network.consumers), 1), 1e-6)
        self.nx = 2 * self.E + 2 * self.N
        self._C0 = _momentum_coefficient(params)

    # Layout helpers
    def split(self, x):
        E, N = self.E, self.N
        return x[:E], x[E : E + N], x[E + N : E + 2 * N], x[E + 2 * N :]

    def globalize(self, x) -> StateVector:
        q, p, th, te = self.split(x)
        net = self.network
        state = StateVector(
            np.zeros(net.num_edges),
            np.zeros(net.num_nodes),
            np.zeros(net.num_nodes),
            np.zeros(net.num_edges),
        )
        state.q[self.edges] = q
        state.p[self.nodes] = p
        state.theta[self.nodes] = th
        state.theta_exit[self.edges] = te
        return state

    def localize(self, state: StateVector) -> np.ndarray:
        return np.concatenate(
            [
                state.q[self.edges],
                state.p[self.nodes],
                state.theta[self.nodes],
                state.theta_exit[self.edges],
            ]
        )

    def _critical(self, p, i):
        """Soft minimum of the consumer valve pressures controlled by main pump ``i``.

        Returns the heating system edges, the soft minimum and its weights (the
        derivative with respect to each valve pressure), or ``None`` when the
        component has no consumer. Ties are broken towards the lowest edge index
        when ``dp_softmin`` is zero.
        """
        cands = self.main_consumers[i]
        if len(cands) == 0:
            return None
        dp = p[self.t[cands]] - p[self.h[cands]]
        tau = self.settings.dp_softmin
        if tau <= 0:
            k = int(np.argmin(dp))
            weights = np.zeros(len(cands))
            weights[k] = 1.0
            return cands, float(dp[k]), weights
        low = float(np.min(dp))
        z = np.exp(-(dp - low) / tau)
        total = float(np.sum(z))
        return cands, low - tau * np.log(total), z / total

    # Residuals
    def residual(self, x) -> np.ndarray:
        s = self.settings
        PS, TS, QS = s.p_scale, s.t_scale, self.q_scale
        rho_cp = self.params.rho * self.params.cp
        q, p, th, te = self.split(x)
        t, h = self.t, self.h

        F_edge = np.zeros(self.E)
        P = self.pipes
        dp, _, _ = pressure_drop_with_grad(q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps)
        F_edge[P] = (p[t[P]] - p[h[P]] - dp) / PS
        H = self.hs_on
        F_edge[H] = rho_cp * q[H] * (th[t[H]] - te[H]) / self.hs_demand - 1.0
        Z = self.hs_off
        F_edge[Z] = (q[Z] - s.q_min) / QS
        A = self.arcs
        slave = A[~self.arc_main]
        F_edge[slave] = (q[slave] - self.gamma[~self.arc_main]) / QS
        for i, a in enumerate(A[self.arc_main]):
            critical = self._critical(p, i)
            if critical is None:
                F_edge[a] = (p[h[a]] - p[t[a]]) / PS
            else:
                F_edge[a] = (critical[1] - s.dp_setpoint) / PS

        F_mass = np.zeros(self.N)
        np.add.at(F_mass, h, q)
        np.add.at(F_mass, t, -q)
        F_mass /= QS
        F_mass[self.reference] = p[self.reference] / PS

        w_head, _ = positive_part(q, s.q_eps)
        w_tail, _ = positive_part(-q, s.q_eps)
        W = np.zeros(self.N)
        M = np.zeros(self.N)
        np.add.at(W, h, w_head)
        np.add.at(W, t, w_tail)
        np.add.at(M, h, w_head * te)
        np.add.at(M, t, w_tail * te)
        F_temp = (M / W - th) / TS

        F_exit = np.zeros(self.E)
        factor, _, _ = outlet_factor_with_grad(q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps)
        sq = np.sqrt(q[P] ** 2 + s.q_eps**2)
        up = 0.5 * (1.0 + q[P] / sq)
        theta_in = th[h[P]] + (th[t[P]] - th[h[P]]) * up
        F_exit[P] = (te[P] - theta_in * factor) / TS
        lm, _, _ = lmtd_with_grad(th[t[H]] - self.hs_house, te[H] - self.hs_house)
        F_exit[H] = (lm - self.hs_lreq) / TS
        F_exit[Z] = (te[Z] - th[t[Z]]) / TS
        F_exit[A] = (te[A] - self.arc_Theta) / TS
        return np.concatenate([F_edge, F_mass, F_temp, F_exit])

    def jacobian(self, x) -> scipy.sparse.csc_matrix:
        s = self.settings
        PS, TS, QS = s.p_scale, s.t_scale, self.q_scale
        rho_cp = self.params.rho * self.params.cp
        E, N = self.E, self.N
        cq, cp, ct, ce = 0, E, E + N, E + 2 * N
        rE, rM, rT, rX = 0, E, E + N, E + 2 * N
        q, p, th, te = self.split(x)
        t, h = self.t, self.h
        rows, cols, vals = [], [], []

        def put(r, c, v):
            r = np.atleast_1d(r)
            rows.append(r)
            cols.append(np.broadcast_to(np.atleast_1d(c), r.shape))
            vals.append(np.broadcast_to(np.asarray(v, float), r.shape))

        # Edge rows
        P = self.pipes
        _, dp_dq, _ = pressure_drop_with_grad(q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps)
        put(rE + P, cp + t[P], 1.0 / PS)
        put(rE + P, cp + h[P], -1.0 / PS)
        put(rE + P, cq + P, -dp_dq / PS)
        H = self.hs_on
        put(rE + H, cq + H, rho_cp * (th[t[H]] - te[H]) / self.hs_demand)
        put(rE + H, ct + t[H], rho_cp * q[H] / self.hs_demand)
        put(rE + H, ce + H, -rho_cp * q[H] / self.hs_demand)
        Z = self.hs_off
        put(rE + Z, cq + Z, 1.0 / QS)
        A = self.arcs
        slave = A[~self.arc_main]
        put(rE + slave, cq + slave, 1.0 / QS)
        for i, a in enumerate(A[self.arc_main]):
            critical = self._critical(p, i)
            if critical is None:
                put(rE + a, cp + h[a], 1.0 / PS)
                put(rE + a, cp + t[a], -1.0 / PS)
            else:
                cands, _, weights = critical
                row = np.full(len(cands), rE + a)
                put(row, cp + t[cands], weights / PS)
                put(row, cp + h[cands], -weights / PS)

        # Mass rows, the reference nodes hold the pressure level instead
        is_ref = np.zeros(N, dtype=bool)
        is_ref[self.reference] = True
        edges = np.arange(E)
        keep = ~is_ref[h]
        put(rM + h[keep], cq + edges[keep], 1.0 / QS)
        keep = ~is_ref[t]
        put(rM + t[keep], cq + edges[keep], -1.0 / QS)
        put(rM + self.reference, cp + self.reference, 1.0 / PS)

        # Mixing rows
        w_head, dw_head = positive_part(q, s.q_eps)
        w_tail, dw_tail_neg = positive_part(-q, s.q_eps)
        dw_tail = -dw_tail_neg
        W = np.zeros(N)
        M = np.zeros(N)
        np.add.at(W, h, w_head)
        np.add.at(W, t, w_tail)
        np.add.at(M, h, w_head * te)
        np.add.at(M, t, w_tail * te)
        mix = M / W
        put(rT + np.arange(N), ct + np.arange(N), -1.0 / TS)
        put(rT + h, ce + edges, w_head / W[h] / TS)
        put(rT + t, ce + edges, w_tail / W[t] / TS)
        put(rT + h, cq + edges, dw_head * (te - mix[h]) / W[h] / TS)
        put(rT + t, cq + edges, dw_tail * (te - mix[t]) / W[t] / TS)

        # Exit temperature rows
        factor, dfac_dq, _ = outlet_factor_with_grad(
            q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps
        )
        sq = np.sqrt(q[P] ** 2 + s.q_eps**2)
        up = 0.5 * (1.0 + q[P] / sq)
        theta_in = th[h[P]] + (th[t[P]] - th[h[P]]) * up
        dup_dq = 0.5 * s.q_eps**2 / sq**3
        dtin_dq = (th[t[P]] - th[h[P]]) * dup_dq
        put(rX + P, ce + P, 1.0 / TS)
        put(rX + P, ct + t[P], -up * factor / TS)
        put(rX + P, ct + h[P], -(1.0 - up) * factor / TS)
        put(rX + P, cq + P, -(dtin_dq * factor + theta_in * dfac_dq) / TS)
        _, lA, lB = lmtd_with_grad(th[t[H]] - self.hs_house, te[H] - self.hs_house)
        put(rX + H, ct + t[H], lA / TS)
        put(rX + H, ce + H, lB / TS)
        put(rX + Z, ce + Z, 1.0 / TS)
        put(rX + Z, ct + t[Z], -1.0 / TS)
        put(rX + A, ce + A, 1.0 / TS)

        J = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.nx, self.nx),
        )
        return J.tocsc()

    def design_jacobian(self, x) -> scipy.sparse.csr_matrix:
        """Partial derivatives of the residuals with respect to ``[d, gamma]`` of the full design."""
        s = self.settings
        PS, TS, QS = s.p_scale, s.t_scale, self.q_scale
        q, p, th, te = self.split(x)
        t, h = self.t, self.h
        num_pipes = self.network.num_pipes
        P = self.pipes
        _, _, dp_dd = pressure_drop_with_grad(q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps)
        factor, _, dfac_dd = outlet_factor_with_grad(
            q[P], self.pipe_d, self.pipe_L, self.params, s.q_eps
        )
        sq = np.sqrt(q[P] ** 2 + s.q_eps**2)
        up = 0.5 * (1.0 + q[P] / sq)
        theta_in = th[h[P]] + (th[t[P]] - th[h[P]]) * up
        slave = ~self.arc_main
        rX = self.E + 2 * self.N
        rows = np.concatenate([P, rX + P, self.arcs[slave]])
        cols = np.concatenate([self.pipe_pos, self.pipe_pos, num_pipes + self.arc_k[slave]])
        vals = np.concatenate(
            [-dp_dd / PS, -theta_in * dfac_dd / TS, -np.ones(int(slave.sum())) / QS]
        )
        shape = (self.nx, num_pipes + len(self.network.producer_ids))
        return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()

    # Initial guess
    def initial_guess(self) -> np.ndarray:
        s = self.settings
        params = self.params
        rho_cp = params.rho * params.cp
        E, N = self.E, self.N
        q = np.zeros(E)
        th = np.zeros(N)
        te = np.zeros(E)

        comp_Theta = {}
        for i in np.flatnonzero(self.arc_main):
            comp_Theta[self.comp_labels[self.h[self.arcs[i]]]] = self.arc_Theta[i]
        node_Theta = np.array([comp_Theta[c] for c in self.comp_labels])
        feed_side = np.array(
            [self.network.nodes[n].kind.is_feed for n in self.nodes], dtype=bool
        )

        # Heating systems: return temperature from the radiator at full supply temperature
        H = self.hs_on
        Theta_H = node_Theta[self.t[H]]
        dB = np.zeros(len(H))
        for i in range(len(H)):
            dA = Theta_H[i] - self.hs_house[i]
            L_req = self.hs_lreq[i]
            if dA <= L_req * 1.001:
                dB[i] = 0.95 * max(dA, 1e-3)
            else:
                dB[i] = brentq(lambda b: lmtd_chen(dA, b) - L_req, 1e-9 * dA, dA * (1 - 1e-12))
        te[H] = self.hs_house + dB
        q[H] = self.hs_demand / (rho_cp * np.maximum(Theta_H - te[H], 1e-3))
        Z = self.hs_off
        q[Z] = s.q_min
        te[Z] = node_Theta[self.t[Z]]

        th[feed_side] = node_Theta[feed_side]
        ret_guess = np.full(N, np.nan)
        if len(H):
            for c in np.unique(self.comp_labels):
                sel = self.comp_labels[self.t[H]] == c
                if np.any(sel):
                    ret_guess[self.comp_labels == c] = np.mean(te[H][sel])
        ret_guess = np.where(np.isnan(ret_guess), 0.5 * node_Theta, ret_guess)
        th[~feed_side] = ret_guess[~feed_side]

        # Producer arcs
        A = self.arcs
        q[A[~self.arc_main]] = self.gamma[~self.arc_main]
        hs_all = np.concatenate([H, Z])
        for i in np.flatnonzero(self.arc_main):
            c = self.comp_labels[self.h[A[i]]]
            demand = q[hs_all][self.comp_labels[self.t[hs_all]] == c].sum()
            others = A[(~self.arc_main) & (self.comp_labels[self.h[A]] == c)]
            q[A[i]] = demand - q[others].sum()
        te[A] = self.arc_Theta

        # Pipes: linearized network flows
        P = self.pipes
        injection = np.zeros(N)
        for idx in np.concatenate([A, hs_all]):
            injection[self.h[idx]] += q[idx]
            injection[self.t[idx]] -= q[idx]
        G = 1.0 / (self._C0 * self.pipe_L * self.pipe_d ** (-4.75) * self.q_scale**0.75)
        pipe_comps = graph_components(N, self.t[P], self.h[P])
        _, first = np.unique(pipe_comps.labels, return_index=True)
        p = weighted_laplacian_solve(N, self.t[P], self.h[P], G, injection, first)
        q[P] = G * (p[self.t[P]] - p[self.h[P]])
        te[P] = np.where(q[P] >= 0, th[self.t[P]], th[self.h[P]])
        return np.concatenate([q, p, th, te])


def _newton(system: _System, x0: np.ndarray):
    s = system.settings
    x = x0.copy()
    F = system.residual(x)
    norm = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while it < s.max_iter:
        if norm <= s.tol:
            return x, True, it, norm
        lu = sparse_lu(system.jacobian(x))
        if lu is None:
            logger.debug("Singular Jacobian during the Newton iterations.")
            break
        dx = lu.solve(-F)
        f0 = 0.5 * float(F @ F)
        step = 1.0
        accepted = False
        for _ in range(s.max_backtracks + 1):
            x_new = x + step * dx
            with np.errstate(all="ignore"):
                F_new = system.residual(x_new)
            f_new = 0.5 * float(F_new @ F_new)
            if np.isfinite(f_new) and f_new <= (1.0 - 2.0 * s.armijo * step) * f0:
                accepted = True
                break
            step *= s.backtrack_factor
        it += 1
        if not accepted:
            logger.debug(f"Line search failed at Newton iteration {it}.")
            break
        x, F = x_new, F_new
        norm = float(np.max(np.abs(F)))
        logger.debug(f"Newton iteration {it}: residual {norm:.3e}, step {step:.3e}")
    return x, norm <= s.tol, it, norm


def solve_state(
    network: Network,
    design: DesignVector,
    settings: Optional[SolverSettings] = None,
    x0: Optional[StateVector] = None,
) -> SimResult:
    """Steady-state thermo-hydraulic solve of ``network`` for ``design``.

    Pipes thinner than ``settings.d_eps`` are removed. Producer arcs impose their
    inflow ``gamma`` and supply temperature, except for one slack producer per
    connected component whose pump keeps ``settings.dp_setpoint`` over the valve
    of the critical consumer. The critical valve pressure is a soft minimum with
    smoothing ``settings.dp_softmin``, so it stays differentiable where two
    consumers swap roles. Every consumer valve sets the flow so that the
    radiator delivers exactly its demand.

    Args:
        network (Network): Superstructure.
        design (DesignVector): Pipe diameters and producer inflows.
        settings (SolverSettings or None): Newton settings. Defaults to ``SolverSettings()``.
        x0 (StateVector or None): Initial guess. Defaults to a linearized network solve.

    Returns:
        A :class:`SimResult`. Non-convergence is reported with ``converged=False``.

    Raises:
        DisconnectedConsumerError: If a consumer with positive demand has no path to a producer.
    """
    if settings is None:
        settings = SolverSettings()
    if design.d.shape != (network.num_pipes,) or design.gamma.shape != (
        len(network.producer_ids),
    ):
        raise ValueError("The design does not match the network dimensions.")
    if not (np.all(np.isfinite(design.d)) and np.all(np.isfinite(design.gamma))):
        raise ValueError("The design contains non-finite entries.")
    system = _System(network, design, settings)
    if x0 is None:
        start = system.initial_guess()
    else:
        start = system.localize(x0)
    with np.errstate(all="ignore"):
        x, converged, iterations, norm = _newton(system, start)
    if not converged:
        logger.debug(
            f"Simulation did not converge after {iterations} iterations (residual {norm:.3e})."
        )
    return SimResult(system.globalize(x), converged, iterations, norm, system)


# Functionals available by tag in adjoint_gradient
def _constant_functional(network, design, state, **kw) -> FunctionalValue:
    zero_state = StateVector(
        np.zeros_like(state.q),
        np.zeros_like(state.p),
        np.zeros_like(state.theta),
        np.zeros_like(state.theta_exit),
    )
    zero_design = DesignVector(np.zeros_like(design.d), np.zeros_like(design.gamma))
    return FunctionalValue(float(kw.get("value", 0.0)), zero_state, zero_design)


def _cost_functional(component):
    def functional(network, design, state, **kw) -> FunctionalValue:
        return cost_sensitivities(network, design, state, component=component, **kw)

    return functional


FUNCTIONALS: dict[str, Callable[..., FunctionalValue]] = {
    "total_cost": _cost_functional("total_cost"),
    "pipe_capex": _cost_functional("pipe_capex"),
    "heat_capex": _cost_functional("heat_capex"),
    "heat_opex": _cost_functional("heat_opex"),
    "pump_opex": _cost_functional("pump_opex"),
    "constant": _constant_functional,
}


def adjoint_gradient(
    network: Network,
    design: DesignVector,
    objective: Union[str, Callable[..., FunctionalValue]] = "total_cost",
    settings: Optional[SolverSettings] = None,
    sim: Optional[SimResult] = None,
    return_value: bool = False,
    **objective_kwargs,
):
    """Gradient of a scalar functional of the converged state with respect to the design.

    Solves one transposed linear system with the state Jacobian of the converged
    residuals (discrete adjoint) and combines it with the explicit design
    dependence of the residuals and of the functional.

    Args:
        network (Network): Superstructure.
        design (DesignVector): Design at which the gradient is evaluated.
        objective (str or callable): One of ``"total_cost"``, ``"pipe_capex"``, ``"heat_capex"``, ``"heat_opex"``, ``"pump_opex"``, ``"constant"``, or a callable ``(network, design, state, **kw) -> FunctionalValue``.
        settings (SolverSettings or None): Used when ``sim`` is not given.
        sim (SimResult or None): Converged simulation at ``design``. Solved when ``None``.
        return_value (bool): If ``True`` also return the functional value.
        **objective_kwargs: Forwarded to the functional (e.g. ``mode`` and ``k`` for cost functionals).

    Returns:
        The gradient as a :class:`DesignVector`, and the value if ``return_value`` is ``True``.

    Raises:
        AdjointError: If the state did not converge or the state Jacobian cannot be factorized.
    """
    if isinstance(objective, str):
        if objective not in FUNCTIONALS:
            raise ValueError(
                f"Unknown objective {objective!r}. Allowed values are {sorted(FUNCTIONALS)}."
            )
        functional = FUNCTIONALS[objective]
    else:
        functional = objective
    if sim is None:
        sim = solve_state(network, design, settings)
    if not sim.converged or sim.system is None:
        raise AdjointError("The adjoint needs a converged state.")
    system = sim.system
    fv = functional(network, design, sim.state, **objective_kwargs)

    x = system.localize(sim.state)
    lu = sparse_lu(system.jacobian(x))
    if lu is None:
        raise AdjointError("adjoint factorization failed")
    g_x = system.localize(fv.grad_state)
    lam = lu.solve(g_x, trans="T")
    if not np.all(np.isfinite(lam)):
        raise AdjointError("adjoint factorization failed")
    total = np.concatenate([fv.grad_design.d, fv.grad_design.gamma])
    total = total - system.design_jacobian(x).T @ lam
    P = network.num_pipes
    grad = DesignVector(np.asarray(total[:P]), np.asarray(total[P:]))
    if return_value:
        return grad, fv.value
    return grad


class DesignEvaluation(NamedTuple):
    sim: SimResult
    cost: Optional[CostBreakdown]


def evaluate_design(
    network: Network,
    design: DesignVector,
    settings: Optional[SolverSettings] = None,
    mode: str = "raw",
) -> DesignEvaluation:
    """Simulate ``design`` and price it. ``cost`` is ``None`` when the simulation does not converge."""
    sim = solve_state(network, design, settings)
    if not sim.converged:
        return DesignEvaluation(sim, None)
    return DesignEvaluation(sim, total_cost(design, sim.state, network, mode=mode))


def producer_shares(network: Network, state: StateVector) -> np.ndarray:
    """Fraction of the supply water of each consumer that originates at each producer.

    Returns:
        Array of shape ``(n_consumers, n_producers)`` in the order of :attr:`Network.consumer_ids` and :attr:`Network.producer_ids`. Rows of consumers without supply are zero.
    """
    N, K = network.num_nodes, len(network.producer_ids)
    t, h, q = network.tails, network.heads, state.q
    is_arc = np.zeros(network.num_edges, dtype=bool)
    is_arc[network.arc_edges] = True
    w_head = np.where(is_arc, 0.0, np.maximum(q, 0.0))
    w_tail = np.where(is_arc, 0.0, np.maximum(-q, 0.0))
    W = np.zeros(N)
    np.add.at(W, h, w_head)
    np.add.at(W, t, w_tail)
    source = np.zeros((N, K))
    for k, a in enumerate(network.arc_edges):
        W[h[a]] += max(q[a], 0.0)
        source[h[a], k] += max(q[a], 0.0)
    # Tracer balance: W_j c_j - sum_in w c_upstream = source_j
    rows = np.concatenate([np.arange(N), h, t])
    cols = np.concatenate([np.arange(N), t, h])
    diag = np.where(W > 0, W, 1.0)
    vals = np.concatenate([diag, -w_head, -w_tail])
    A = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsc()
    lu = sparse_lu(A)
    if lu is None:
        raise SimulationError("Tracer system for producer shares is singular.")
    conc = lu.solve(source)
    feed_nodes = [network.node_index[c] for c in network.consumer_ids]
    return np.clip(conc[feed_nodes], 0.0, 1.0)


def edge_table(network: Network, design: DesignVector, state: StateVector) -> list[dict]:
    """Per-edge rows ``(id, kind, q, dp, theta_in, theta_out, d)`` of a solved state."""
    rows = []
    d_edge = np.zeros(network.num_edges)
    d_edge[network.pipe_edges] = design.d
    for i, e in enumerate(network.edges):
        q = float(state.q[i])
        up = network.tails[i] if q >= 0 else network.heads[i]
        rows.append(
            {
                "id": e.id,
                "kind": e.kind.value,
                "d": float(d_edge[i]),
                "q": q,
                "dp": float(state.p[network.tails[i]] - state.p[network.heads[i]]),
                "theta_in": float(state.theta[up]),
                "theta_out": float(state.theta_exit[i]),
            }
        )
    return rows

"""Augmented Lagrangian driver around L-BFGS-B and the diameter sizing problem shared by the optimizers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize

from heatnet._src.utils import (
    AdjointError,
    DisconnectedConsumerError,
    SimulationError,
    check_positive,
    update_dataclass_from_dict,
)
from heatnet.costing import DEFAULT_SIGMOID_SLOPE, FunctionalValue, cost_sensitivities
from heatnet.network import DesignVector, Network, StateVector
from heatnet.simulator import (
    SimResult,
    SolverSettings,
    adjoint_gradient,
    required_driving_temperature,
    solve_state,
)

logger = logging.getLogger("heatnet")


@dataclass
class InnerSettings:
    """Settings of the augmented Lagrangian loop and of its L-BFGS-B subproblems.

    Attributes:
        max_outer: Maximum number of multiplier updates.
        max_inner: Maximum number of L-BFGS-B iterations per subproblem.
        ftol: Relative decrease tolerance of L-BFGS-B.
        gtol: Projected gradient tolerance of L-BFGS-B.
        mu0: Initial penalty weight.
        mu_growth: Penalty growth factor when the violation does not shrink enough.
        mu_max: Upper bound on the penalty weight.
        constraint_tol: Tolerated violation of the scaled inequality constraints.
    """

    max_outer: int = 8
    max_inner: int = 200
    ftol: float = 1e-10
    gtol: float = 1e-7
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e8
    constraint_tol: float = 1e-6

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("Invalid iteration limits: max_outer and max_inner must be >= 1.")
        check_positive(
            ftol=self.ftol, gtol=self.gtol, mu0=self.mu0, constraint_tol=self.constraint_tol
        )
        if self.mu_growth <= 1:
            raise ValueError(f"Invalid mu_growth={self.mu_growth}. Must be larger than 1.")

    @classmethod
    def from_dict(cls, values: dict) -> InnerSettings:
        return update_dataclass_from_dict(cls, values)


class ALResult(NamedTuple):
    x: np.ndarray
    fun: float
    constraints: np.ndarray
    multipliers: np.ndarray
    mu: float
    converged: bool
    outer_iterations: int
    inner_iterations: int


def augmented_terms(g: np.ndarray, lam: np.ndarray, mu: float):
    """Rockafellar's augmented Lagrangian term for inequalities ``g >= 0``, and its derivative in ``g``."""
    active = mu * g < lam
    value = np.where(active, -lam * g + 0.5 * mu * g * g, -0.5 * lam * lam / mu)
    slope = np.where(active, -lam + mu * g, 0.0)
    return value, slope


def minimize_augmented_lagrangian(
    evaluate: Callable,
    x0: np.ndarray,
    bounds: list[tuple[float, float]],
    n_constraints: int,
    settings: InnerSettings,
    multipliers: Optional[np.ndarray] = None,
) -> ALResult:
    """Minimize ``f(x)`` subject to ``g(x) >= 0`` and box bounds.

    ``evaluate(x, lam, mu)`` returns a tuple starting with ``(L, grad_L, g)`` for the augmented objective
    ``L = f + sum(augmented_terms(g, lam, mu))`` or ``None`` when the model cannot
    be evaluated at ``x``. Failed evaluations return a large value together with the
    last valid gradient, so the line search of L-BFGS-B rejects the step.
    """
    lam = np.zeros(n_constraints) if multipliers is None else np.asarray(multipliers, float).copy()
    mu = settings.mu0
    last = {"f": None, "grad": None}

    def fun(x):
        out = evaluate(x, lam, mu)
        if out is None:
            f_last = 0.0 if last["f"] is None else last["f"]
            grad = np.zeros_like(x) if last["grad"] is None else last["grad"]
            return 10.0 * (abs(f_last) + 1.0), grad
        f, grad = out[0], out[1]
        last["f"], last["grad"] = f, grad
        return f, grad

    x = np.asarray(x0, float).copy()
    out = evaluate(x, lam, mu)
    if out is None:
        raise SimulationError("The starting point of the optimization cannot be simulated.")
    f, g = out[0], out[2]
    violation_prev = float(np.max(np.maximum(-g, 0.0), initial=0.0))
    converged = False
    inner = 0
    outer = 0
    for outer in range(1, settings.max_outer + 1):
        res = minimize(
            fun,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": settings.max_inner, "ftol": settings.ftol, "gtol": settings.gtol},
        )
        inner += int(res.nit)
        out = evaluate(res.x, lam, mu)
        if out is None:
            logger.warning("Inner solve ended at a point that cannot be simulated, keeping the previous iterate.")
            break
        x = res.x
        f, g = out[0], out[2]
        violation = float(np.max(np.maximum(-g, 0.0), initial=0.0))
        lam = np.maximum(0.0, lam - mu * g)
        logger.debug(
            f"Outer iteration {outer}: objective {f:.6e}, violation {violation:.3e}, mu {mu:.1e}, inner status {res.status}"
        )
        if violation <= settings.constraint_tol and res.status != 1:
            converged = True
            break
        if violation > 0.25 * violation_prev:
            mu = min(mu * settings.mu_growth, settings.mu_max)
        violation_prev = violation
    return ALResult(x, float(f), g, lam, mu, converged, outer, inner)


class Evaluation(NamedTuple):
    value: float
    grad: np.ndarray
    constraints: np.ndarray
    sim: SimResult


class DemandConstraints:
    """Scaled demand constraints ``g >= 0`` of a network.

    One row per demanded consumer: the feed temperature must exceed the driving
    temperature its radiator needs by ``settings.supply_margin``. One row per
    producer: the station inflow must be non-negative.
    """

    def __init__(self, network: Network, settings: SolverSettings):
        self.network = network
        self.settings = settings
        Theta_max = max(s.Theta for s in network.producers.values())
        demanded = [c for c in network.consumer_ids if network.consumers[c].demand > 0]
        self.consumer_ids = tuple(demanded)
        self.feed_nodes = np.array([network.node_index[c] for c in demanded], dtype=int)
        self.theta_house = np.array([network.consumers[c].theta_house for c in demanded])
        l_req = np.array(
            [
                required_driving_temperature(network.consumers[c], settings.radiator, Theta_max)
                for c in demanded
            ]
        )
        self.scale = (1.0 + settings.supply_margin) * l_req
        self.arcs = np.asarray(network.arc_edges, dtype=int)
        self.q_scale = max(network.nominal_flow / max(len(network.consumers), 1), 1e-6)

    @property
    def size(self) -> int:
        return len(self.feed_nodes) + len(self.arcs)

    def values(self, design: DesignVector, state: StateVector) -> np.ndarray:
        supply = (state.theta[self.feed_nodes] - self.theta_house) / self.scale - 1.0
        return np.concatenate([supply, state.q[self.arcs] / self.q_scale])

    def weighted_grad(self, design: DesignVector, state: StateVector, w: np.ndarray):
        n = len(self.feed_nodes)
        grad = _zeros_like_state(state)
        np.add.at(grad.theta, self.feed_nodes, w[:n] / self.scale)
        np.add.at(grad.q, self.arcs, w[n:] / self.q_scale)
        return grad, np.zeros_like(design.d)


def _zeros_like_state(state: StateVector) -> StateVector:
    return StateVector(
        np.zeros_like(state.q),
        np.zeros_like(state.p),
        np.zeros_like(state.theta),
        np.zeros_like(state.theta_exit),
    )


def _axpy(a: float, x: StateVector, y: StateVector) -> StateVector:
    return StateVector(
        y.q + a * x.q,
        y.p + a * x.p,
        y.theta + a * x.theta,
        y.theta_exit + a * x.theta_exit,
    )


class SizingProblem:
    """Diameter and producer inflow sizing of a network with a fixed set of sizable pipe pairs.

    The variables are ``z = [d_pairs / D_max, gamma / nominal_flow]`` over the
    sizable pairs ``variable_pairs``. Pairs outside it keep the diameter of
    ``fixed_pairs``. The objective is the NPV ``total_cost`` in ``mode`` divided by
    ``scale``. State equations are eliminated by the simulator and gradients come
    from the adjoint.

    Args:
        network (Network): Superstructure.
        variable_pairs (np.ndarray): Indices of the sizable pipe pairs.
        lower (np.ndarray): Lower diameter bound per sizable pair, m.
        fixed_pairs (np.ndarray or None): Diameter of every pair, only read outside ``variable_pairs``. Defaults to zero.
        settings (SolverSettings): Simulator settings.
        mode (str): Pipe cost mode, ``"raw"`` or ``"penalized"``.
        k (float): Sigmoid slope of the penalized mode.
        relaxed_pairs (np.ndarray or None): Boolean mask over pairs whose fixed cost is relaxed to ``p0 d / D_max``.
        constraints (list or None): Constraint objects with ``size``, ``values`` and ``weighted_grad``. Defaults to :class:`DemandConstraints`.
    """

    def __init__(
        self,
        network: Network,
        variable_pairs: np.ndarray,
        lower: np.ndarray,
        settings: SolverSettings,
        fixed_pairs: Optional[np.ndarray] = None,
        mode: str = "raw",
        k: float = DEFAULT_SIGMOID_SLOPE,
        relaxed_pairs: Optional[np.ndarray] = None,
        constraints: Optional[list] = None,
    ):
        self.network = network
        self.settings = settings
        self.variable_pairs = np.asarray(variable_pairs, dtype=int)
        self.lower = np.broadcast_to(np.asarray(lower, float), self.variable_pairs.shape).copy()
        D_max = network.params.D_max
        if np.any(self.lower <= 0) or np.any(self.lower > D_max):
            raise ValueError(f"Invalid lower diameter bounds. Must lie in (0, {D_max}].")
        self.fixed_pairs = (
            np.zeros(network.n_candidate_pipes)
            if fixed_pairs is None
            else np.asarray(fixed_pairs, float).copy()
        )
        self.mode = mode
        self.k = k
        self.relaxed_mask = (
            None
            if relaxed_pairs is None
            else np.asarray(relaxed_pairs, dtype=bool)[network.pair_of_pipe]
        )
        self.constraints = (
            [DemandConstraints(network, settings)] if constraints is None else list(constraints)
        )
        self.gamma_scale = max(network.nominal_flow, 1e-12)
        self.scale = 1.0
        self.n_evaluations = 0
        self.n_failures = 0
        self._warm: Optional[StateVector] = None

    @property
    def n_variables(self) -> int:
        return len(self.variable_pairs) + len(self.network.producer_ids)

    @property
    def n_constraints(self) -> int:
        return sum(c.size for c in self.constraints)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        D_max = self.network.params.D_max
        pairs = [(lo / D_max, 1.0) for lo in self.lower]
        return pairs + [(0.0, 2.0)] * len(self.network.producer_ids)

    def design(self, z: np.ndarray) -> DesignVector:
        D_max = self.network.params.D_max
        n = len(self.variable_pairs)
        d_pairs = self.fixed_pairs.copy()
        d_pairs[self.variable_pairs] = np.clip(z[:n], 0.0, 1.0) * D_max
        gamma = np.maximum(z[n:], 0.0) * self.gamma_scale
        return self.network.design_from_pairs(d_pairs, gamma)

    def to_variables(self, design: DesignVector) -> np.ndarray:
        D_max = self.network.params.D_max
        d_pairs = self.network.pair_values(design.d)[self.variable_pairs]
        z_d = np.clip(d_pairs, self.lower, D_max) / D_max
        z_g = np.clip(design.gamma / self.gamma_scale, 0.0, 2.0)
        return np.concatenate([z_d, z_g])

    def _chain(self, grad: DesignVector) -> np.ndarray:
        # Per-pipe gradient to the pair and inflow variables
        D_max = self.network.params.D_max
        pairs = self.network.pipe_pairs[self.variable_pairs]
        g_d = (grad.d[pairs[:, 0]] + grad.d[pairs[:, 1]]) * D_max
        return np.concatenate([g_d, grad.gamma * self.gamma_scale])

    def simulate(self, design: DesignVector) -> Optional[SimResult]:
        try:
            sim = None
            if self._warm is not None:
                sim = solve_state(self.network, design, self.settings, x0=self._warm)
            if sim is None or not sim.converged:
                sim = solve_state(self.network, design, self.settings)
        except (DisconnectedConsumerError, SimulationError) as err:
            logger.debug(f"Design cannot be simulated: {err}")
            return None
        if not sim.converged:
            return None
        self._warm = sim.state
        return sim

    def constraint_values(self, design: DesignVector, state: StateVector) -> np.ndarray:
        if not self.constraints:
            return np.zeros(0)
        return np.concatenate([c.values(design, state) for c in self.constraints])

    def objective(self, design: DesignVector, state: StateVector) -> FunctionalValue:
        return cost_sensitivities(
            self.network,
            design,
            state,
            component="total_cost",
            mode=self.mode,
            k=self.k,
            relaxed_mask=self.relaxed_mask,
        )

    def calibrate(self, z: np.ndarray) -> float:
        """Set the objective scale to the cost at ``z``, returns the scale."""
        design = self.design(z)
        sim = self.simulate(design)
        if sim is None:
            raise SimulationError("The initial design cannot be simulated.")
        value = abs(self.objective(design, sim.state).value)
        self.scale = value if value > 0 else 1.0
        return self.scale

    def evaluate(self, z: np.ndarray, lam: np.ndarray, mu: float) -> Optional[Evaluation]:
        self.n_evaluations += 1
        design = self.design(z)
        sim = self.simulate(design)
        if sim is None:
            self.n_failures += 1
            return None
        state = sim.state
        cost = self.objective(design, state)
        g = self.constraint_values(design, state)
        terms, slope = augmented_terms(g, lam, mu)

        value = cost.value / self.scale + float(np.sum(terms))
        grad_state = _axpy(1.0 / self.scale, cost.grad_state, _zeros_like_state(state))
        grad_d = cost.grad_design.d / self.scale
        start = 0
        for c in self.constraints:
            w = slope[start : start + c.size]
            start += c.size
            if not np.any(w):
                continue
            c_state, c_d = c.weighted_grad(design, state, w)
            grad_state = _axpy(1.0, c_state, grad_state)
            grad_d = grad_d + c_d
        functional = FunctionalValue(
            value, grad_state, DesignVector(grad_d, cost.grad_design.gamma / self.scale)
        )
        try:
            grad = adjoint_gradient(
                self.network, design, lambda *args, **kw: functional, sim=sim
            )
        except AdjointError as err:
            logger.debug(f"Adjoint failed: {err}")
            self.n_failures += 1
            return None
        return Evaluation(value, self._chain(grad), g, sim)

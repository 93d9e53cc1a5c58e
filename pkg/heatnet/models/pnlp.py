from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from tqdm import tqdm

from heatnet._src.nlp import InnerSettings, SizingProblem, minimize_augmented_lagrangian
from heatnet._src.serialization import pickle_load, pickle_save
from heatnet._src.utils import (
    DisconnectedConsumerError,
    InfeasibleDesignError,
    SimulationError,
    check_is_optimized,
    update_dataclass_from_dict,
)
from heatnet.abc import BaseOptimizer
from heatnet.costing import CostBreakdown
from heatnet.models.results import OptResult
from heatnet.network import (
    DesignVector,
    Network,
    require_connected,
    threshold_pairs,
    uniform_design,
)
from heatnet.simulator import SolverSettings, evaluate_design

logger = logging.getLogger("heatnet")

__all__ = [
    "PnlpConfig",
    "threshold_topology",
    "repair_topology",
    "slack_supplied",
    "optimize_pnlp",
    "optimize_pnlp_multistart",
    "PenalizedNLP",
]


@dataclass
class PnlpConfig:
    """Configuration of the penalized relaxed optimizer.

    Attributes:
        d_init: Uniform starting diameter, m. ``None`` means half of ``D_max``.
        k_schedule: Increasing sigmoid slopes of the penalization continuation, 1/m.
        max_outer: Augmented Lagrangian multiplier updates per continuation stage.
        max_inner: L-BFGS-B iterations per subproblem.
        tol_opt: Relative decrease tolerance of L-BFGS-B.
        gtol: Projected gradient tolerance of L-BFGS-B.
        d_lower: Smallest diameter the relaxed problem may assign, m.
        mu0: Initial penalty weight of the demand constraints.
        mu_growth: Growth factor of the penalty weight.
        constraint_tol: Tolerated violation of the scaled demand constraints.
        repair: Raise pairs below ``d_min`` that are needed for connectivity to ``d_min`` instead of rejecting the stage.
    """

    d_init: Optional[float] = None
    k_schedule: tuple[float, ...] = (50.0, 100.0, 200.0, 400.0)
    max_outer: int = 8
    max_inner: int = 200
    tol_opt: float = 1e-10
    gtol: float = 1e-7
    d_lower: float = 1e-3
    mu0: float = 10.0
    mu_growth: float = 10.0
    constraint_tol: float = 1e-6
    repair: bool = True

    def __post_init__(self):
        self.k_schedule = tuple(float(k) for k in self.k_schedule)
        if len(self.k_schedule) == 0:
            raise ValueError("Invalid k_schedule. At least one slope is needed.")
        if self.k_schedule[0] <= 0 or np.any(np.diff(self.k_schedule) <= 0):
            raise ValueError("Invalid k_schedule. Slopes must be positive and strictly increasing.")
        if self.tol_opt <= 0 or self.gtol <= 0 or self.constraint_tol <= 0:
            raise ValueError("Invalid tolerances. Must be strictly positive.")
        if self.d_init is not None and self.d_init <= 0:
            raise ValueError(f"Invalid d_init={self.d_init}. Must be strictly positive.")
        if self.d_lower <= 0:
            raise ValueError(f"Invalid d_lower={self.d_lower}. Must be strictly positive.")

    @classmethod
    def from_dict(cls, values: dict) -> PnlpConfig:
        return update_dataclass_from_dict(cls, values)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["k_schedule"] = list(self.k_schedule)
        return doc

    def inner_settings(self) -> InnerSettings:
        return InnerSettings(
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            ftol=self.tol_opt,
            gtol=self.gtol,
            mu0=self.mu0,
            mu_growth=self.mu_growth,
            constraint_tol=self.constraint_tol,
        )


def threshold_topology(
    network: Network, design: DesignVector, d_min: Optional[float] = None
) -> DesignVector:
    """Turn a near-discrete design into a discrete topology.

    Pairs whose feed or return diameter is below ``d_min`` are removed together,
    the others keep their diameters.

    Args:
        network (Network): Superstructure.
        design (DesignVector): Relaxed design.
        d_min (float or None): Threshold, m. Defaults to ``network.params.d_min``.

    Returns:
        The thresholded design.

    Raises:
        DisconnectedConsumerError: If a consumer with positive demand loses its connection to every producer.
    """
    if d_min is None:
        d_min = network.params.d_min
    keep = threshold_pairs(network, design, d_min)
    require_connected(network, keep)
    d_pairs = np.where(keep, np.minimum(*design.d[network.pipe_pairs.T]), 0.0)
    return network.design_from_pairs(d_pairs, design.gamma)


def repair_topology(
    network: Network, design: DesignVector, d_min: Optional[float] = None
) -> tuple[DesignVector, list[int]]:
    """Threshold ``design`` and raise removed pairs to ``d_min`` until every demanded consumer is connected.

    Pairs are restored in order of decreasing relaxed diameter.

    Returns:
        The discrete design and the indices of the restored pairs.
    """
    if d_min is None:
        d_min = network.params.d_min
    d_pairs = np.minimum(*design.d[network.pipe_pairs.T])
    keep = d_pairs >= d_min
    restored = []
    missing = set(network.disconnected_consumers(keep))
    for k in np.argsort(-d_pairs, kind="stable"):
        if not missing:
            break
        if keep[k]:
            continue
        trial = keep.copy()
        trial[k] = True
        now = set(network.disconnected_consumers(trial))
        if len(now) < len(missing):
            keep, missing = trial, now
            restored.append(int(k))
    if missing:
        raise DisconnectedConsumerError(missing)
    d_pairs = np.where(keep, np.maximum(d_pairs, d_min), 0.0)
    return network.design_from_pairs(d_pairs, design.gamma), restored


def slack_supplied(design: DesignVector) -> DesignVector:
    """Copy of ``design`` in which every non-slack producer injects nothing.

    The slack producer of each connected part of the network then supplies the
    whole demand. :func:`optimize_pnlp` restarts from it when the equal split of
    the nominal flow cannot be simulated.
    """
    return DesignVector(design.d.copy(), np.zeros_like(design.gamma))


def _is_better(cost: float, length: float, best_cost: float, best_length: float) -> bool:
    # Equal costs within 1e-9 are broken by the shorter network
    if cost < best_cost - 1e-9 * abs(best_cost):
        return True
    return abs(cost - best_cost) <= 1e-9 * abs(best_cost) and length < best_length


def optimize_pnlp(
    network: Network,
    config: Optional[PnlpConfig] = None,
    init: Optional[DesignVector] = None,
    settings: Optional[SolverSettings] = None,
    show_progress: bool = False,
) -> OptResult:
    """Penalized relaxed topology optimization.

    For each slope ``k`` of ``config.k_schedule`` the NPV with the sigmoid fixed pipe
    cost is minimized over all pair diameters and producer inflows. The state
    equations are eliminated by the simulator, gradients come from the adjoint and
    the demand constraints enter through augmented Lagrangian terms. After each
    stage the design is thresholded at ``d_min`` and priced with the raw cost. The
    cheapest discrete design over all stages is returned. A start that cannot be
    simulated on a network with several producers is replaced by its
    :func:`slack_supplied` copy.

    Args:
        network (Network): Superstructure.
        config (PnlpConfig or None): Optimizer configuration.
        init (DesignVector or None): Starting design. Defaults to the uniform design with ``config.d_init``. Removed pairs restart at ``config.d_lower``.
        settings (SolverSettings or None): Simulator settings.
        show_progress (bool): Show a progress bar over the continuation stages.

    Returns:
        The :class:`OptResult` of the cheapest discrete design.

    Raises:
        InfeasibleDesignError: If the starting design cannot be simulated or no stage yields a connected discrete design.
    """
    config = PnlpConfig() if config is None else config
    settings = SolverSettings() if settings is None else settings
    params = network.params
    if config.d_lower < settings.d_eps or config.d_lower >= params.d_min:
        raise ValueError(
            f"Invalid d_lower={config.d_lower}. Must lie in [{settings.d_eps}, {params.d_min})."
        )
    start_time = time.perf_counter()
    init_given = init is not None
    if init is None:
        d_init = 0.5 * params.D_max if config.d_init is None else config.d_init
        init = uniform_design(network, d_init)
    else:
        network.check_design(init, atol=1e-9)

    problem = SizingProblem(
        network,
        variable_pairs=np.arange(network.n_candidate_pipes),
        lower=config.d_lower,
        settings=settings,
        mode="penalized",
        k=config.k_schedule[0],
    )
    z = problem.to_variables(init)
    start = "given" if init_given else "uniform"
    try:
        scale = problem.calibrate(z)
    except SimulationError as err:
        if len(network.producer_ids) < 2:
            raise InfeasibleDesignError(f"The starting design cannot be simulated: {err}") from err
        logger.warning(
            f"The starting design cannot be simulated ({err}), restarting with the slack producers supplying the whole demand."
        )
        init = slack_supplied(init)
        z = problem.to_variables(init)
        start = "slack_supplied"
        try:
            scale = problem.calibrate(z)
        except SimulationError as err:
            raise InfeasibleDesignError(f"The starting design cannot be simulated: {err}") from err
    inner = config.inner_settings()

    best: Optional[tuple[DesignVector, CostBreakdown, float]] = None
    best_state = None
    history: list[tuple[int, float]] = []
    stages = []
    multipliers = None
    converged = False
    inner_iterations = 0
    for stage, k in enumerate(
        tqdm(config.k_schedule, desc="pNLP continuation", unit="stage", leave=False, disable=not show_progress)
    ):
        problem.k = k
        try:
            al = minimize_augmented_lagrangian(
                problem.evaluate, z, problem.bounds, problem.n_constraints, inner, multipliers
            )
        except SimulationError as err:
            logger.warning(f"Continuation stage k={k} could not start: {err}")
            converged = False
            break
        z, multipliers = al.x, al.multipliers
        inner_iterations += al.inner_iterations
        converged = al.converged
        relaxed = problem.design(z)
        record = {
            "k": k,
            "objective": al.fun * scale,
            "converged": al.converged,
            "outer_iterations": al.outer_iterations,
            "inner_iterations": al.inner_iterations,
            "restored_pairs": [],
        }
        try:
            if config.repair:
                discrete, restored = repair_topology(network, relaxed, params.d_min)
                record["restored_pairs"] = restored
            else:
                discrete = threshold_topology(network, relaxed, params.d_min)
        except DisconnectedConsumerError as err:
            logger.warning(f"Thresholded design of stage k={k} is not connected: {err}")
            stages.append(record)
            continue
        evaluation = evaluate_design(network, discrete, settings)
        if evaluation.cost is None:
            logger.warning(f"Thresholded design of stage k={k} does not converge in simulation.")
            stages.append(record)
            continue
        length = network.total_pipe_length(discrete)
        record["discrete_cost"] = evaluation.cost.total_npv
        record["n_pairs"] = int(np.count_nonzero(network.pair_values(discrete.d)))
        stages.append(record)
        if best is None or _is_better(evaluation.cost.total_npv, length, best[1].total_npv, best[2]):
            best = (discrete, evaluation.cost, length)
            best_state = evaluation.sim.state
        history.append((inner_iterations, best[1].total_npv))
        logger.info(
            f"pNLP stage {stage + 1}/{len(config.k_schedule)} (k={k:g}): discrete cost {evaluation.cost.total_npv:.6e}, best {best[1].total_npv:.6e}"
        )

    if best is None:
        raise InfeasibleDesignError("No continuation stage produced a connected, simulable discrete design.")
    if not converged:
        logger.warning("pNLP inner solver did not converge in the last continuation stage.")
    return OptResult(
        design=best[0],
        cost=best[1],
        converged=bool(converged),
        outer_iterations=len(stages),
        history=history,
        method="pnlp",
        state=best_state,
        info={
            "config": config.to_dict(),
            "start": start,
            "stages": stages,
            "inner_iterations": inner_iterations,
            "evaluations": problem.n_evaluations,
            "failed_evaluations": problem.n_failures,
            "total_pipe_length": best[2],
        },
        wall_time=time.perf_counter() - start_time,
    )


def optimize_pnlp_multistart(
    network: Network,
    config: Optional[PnlpConfig] = None,
    n_starts: int = 4,
    rng_seed: Optional[int] = None,
    settings: Optional[SolverSettings] = None,
    show_progress: bool = False,
) -> OptResult:
    """Run :func:`optimize_pnlp` from the uniform design and ``n_starts - 1`` random diameter fields, keep the cheapest result.

    Random pair diameters are drawn uniformly in ``[d_min, D_max / 2]``. Starts that
    cannot be simulated are skipped.
    """
    if n_starts < 1:
        raise ValueError(f"Invalid n_starts={n_starts}. Must be >= 1.")
    rng = np.random.default_rng(rng_seed)
    params = network.params
    starts = [None]
    for _ in range(n_starts - 1):
        d_pairs = rng.uniform(params.d_min, 0.5 * params.D_max, network.n_candidate_pipes)
        starts.append(network.design_from_pairs(d_pairs))

    start_time = time.perf_counter()
    best = None
    costs = []
    for i, init in enumerate(tqdm(starts, desc="pNLP starts", unit="start", leave=False, disable=not show_progress)):
        try:
            result = optimize_pnlp(network, config, init=init, settings=settings)
        except InfeasibleDesignError as err:
            logger.warning(f"Start {i} skipped: {err}")
            costs.append(float("nan"))
            continue
        costs.append(result.total_npv)
        length = network.total_pipe_length(result.design)
        if best is None or _is_better(result.total_npv, length, best.total_npv, best.info["total_pipe_length"]):
            best = result
    if best is None:
        raise InfeasibleDesignError("No start of the multi-start run produced a feasible design.")
    best.info["multistart_costs"] = costs
    best.wall_time = time.perf_counter() - start_time
    return best


class PenalizedNLP(BaseOptimizer):
    """Relaxed, penalized topology optimizer.

    Args:
        config (PnlpConfig or None): Optimizer configuration.
        settings (SolverSettings or None): Simulator settings.
        n_starts (int): Number of starts, ``1`` runs the uniform start only.
        rng_seed (int or None): Seed of the random starts.
        show_progress (bool): Show progress bars.

    Attributes:
        result_: :class:`OptResult` of the last call to :func:`optimize`.
    """

    def __init__(
        self,
        config: Optional[PnlpConfig] = None,
        settings: Optional[SolverSettings] = None,
        n_starts: int = 1,
        rng_seed: Optional[int] = None,
        show_progress: bool = False,
    ):
        self.config = PnlpConfig() if config is None else config
        self.settings = SolverSettings() if settings is None else settings
        self.n_starts = n_starts
        self.rng_seed = rng_seed
        self.show_progress = show_progress

    @property
    def method(self) -> str:
        return "pnlp"

    @property
    def is_optimized(self) -> bool:
        return hasattr(self, "result_")

    def optimize(self, network: Network, init: Optional[DesignVector] = None) -> PenalizedNLP:
        if self.n_starts > 1 and init is None:
            self.result_ = optimize_pnlp_multistart(
                network, self.config, self.n_starts, self.rng_seed, self.settings, self.show_progress
            )
        else:
            self.result_ = optimize_pnlp(network, self.config, init, self.settings, self.show_progress)
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
    def load(cls, filename) -> PenalizedNLP:
        return pickle_load(cls, filename)

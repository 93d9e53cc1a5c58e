from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

from heatnet._src.serialization import pickle_load, pickle_save, write_json
from heatnet.costing import CostBreakdown, cost_report
from heatnet.network import DesignVector, Network, StateVector, design_to_dict

logger = logging.getLogger("heatnet")

RESULT_SCHEMA = "heatnet-result/1"


@dataclass
class OptResult:
    """Outcome of a topology optimization.

    Attributes:
        design: Discrete design, pipes with ``d = 0`` are not installed.
        cost: Raw-mode cost of ``design`` at its simulated state.
        converged: ``False`` if an inner solver stagnated, a node budget was exhausted or a stage fell back.
        outer_iterations: Continuation stages (pNLP) or branch-and-bound nodes (fMINLP).
        history: ``(iteration, cost)`` pairs of the best design found so far.
        method: ``"pnlp"`` or ``"fminlp"``.
        state: Simulated state of ``design``.
        info: Method specific details (stage costs, node counts, gaps, ...).
        wall_time: Elapsed time of the run, s.
    """

    design: DesignVector
    cost: CostBreakdown
    converged: bool
    outer_iterations: int
    history: list[tuple[int, float]] = field(default_factory=list)
    method: str = ""
    state: Optional[StateVector] = None
    info: dict = field(default_factory=dict)
    wall_time: float = math.nan

    @property
    def total_npv(self) -> float:
        return self.cost.total_npv

    def to_dict(self, network: Network) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "method": self.method,
            "converged": bool(self.converged),
            "outer_iterations": int(self.outer_iterations),
            "wall_time": float(self.wall_time),
            "design": design_to_dict(network, self.design),
            "cost": cost_report(self.cost),
            "history": [[int(i), float(c)] for i, c in self.history],
            "info": self.info,
        }

    def write_json(self, network: Network, path: Union[os.PathLike, str]):
        write_json(self.to_dict(network), path)

    def save(self, filename):
        """Serialize the result to a file.

        Args:
            filename (path-like or file-like): Save the result to file.
        """
        pickle_save(self, filename)

    @classmethod
    def load(cls, filename) -> OptResult:
        return pickle_load(cls, filename)

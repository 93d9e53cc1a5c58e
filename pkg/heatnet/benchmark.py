from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Union

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from heatnet._src.serialization import write_json, write_jsonl
from heatnet._src.utils import update_dataclass_from_dict
from heatnet.datasets import Case
from heatnet.models.fminlp import FminlpConfig, optimize_fminlp
from heatnet.models.pnlp import PnlpConfig, optimize_pnlp
from heatnet.network import DesignVector, Network, design_to_dict
from heatnet.simulator import SolverSettings, evaluate_design, producer_shares

logger = logging.getLogger("heatnet")

METHODS = ("pnlp", "fminlp")
SCALING_MODELS = ("exponential", "power")


def default_threads() -> int:
    return int(os.environ.get("HEATNET_THREADS", "1"))


@dataclass
class BenchmarkConfig:
    """Configuration of a benchmark run.

    Attributes:
        methods: Optimizers to run, ``"pnlp"`` and/or ``"fminlp"``.
        start: First number of added segments of the circular sequence.
        stop: Last number of added segments, inclusive.
        step: Segment increment.
        repetitions: Runs per case and method.
        threads: BLAS threads allowed inside the timed sections. Defaults to ``HEATNET_THREADS`` or 1.
        fminlp_max_n: Largest case (candidate pipes) handed to fMINLP, ``None`` for no limit.
        write_designs: Store the design of every run next to the records.
        pnlp: Keyword arguments of :class:`PnlpConfig`.
        fminlp: Keyword arguments of :class:`FminlpConfig`.
    """

    methods: tuple = ("pnlp",)
    start: int = 0
    stop: int = 190
    step: int = 10
    repetitions: int = 3
    threads: int = field(default_factory=default_threads)
    fminlp_max_n: Optional[int] = 63
    write_designs: bool = True
    pnlp: dict = field(default_factory=dict)
    fminlp: dict = field(default_factory=dict)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"Invalid method {m!r}. Allowed values are {METHODS}.")
        if self.repetitions < 1:
            raise ValueError(f"Invalid repetitions={self.repetitions}. Must be at least 1.")
        if self.threads < 1:
            raise ValueError(f"Invalid threads={self.threads}. Must be at least 1.")

    @classmethod
    def from_dict(cls, values: dict) -> BenchmarkConfig:
        return update_dataclass_from_dict(cls, values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchmarkRecord:
    case_id: str
    n: int
    method: str
    repetition: int
    wall_time: float
    converged: bool
    total_cost: Optional[float] = None
    design_file: Optional[str] = None
    nodes: Optional[int] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _optimizer(method: str, config: BenchmarkConfig, settings: SolverSettings):
    if method == "pnlp":
        pnlp_config = PnlpConfig.from_dict(config.pnlp)
        return lambda network: optimize_pnlp(network, pnlp_config, settings=settings)
    fminlp_config = FminlpConfig.from_dict(config.fminlp)
    return lambda network: optimize_fminlp(network, fminlp_config, settings)


def run_benchmark(
    cases: Iterable[Case],
    config: Optional[BenchmarkConfig] = None,
    settings: Optional[SolverSettings] = None,
    out_dir: Optional[Union[os.PathLike, str]] = None,
    show_progress: bool = False,
) -> list[BenchmarkRecord]:
    """Run every method of ``config`` on every case and record wall times.

    Only the optimize call is timed, with BLAS limited to ``config.threads``.
    A failing run is recorded with ``converged=False`` and the error message.

    Args:
        cases (iterable of Case): Benchmark cases, for instance from :func:`~heatnet.datasets.circular_sequence`.
        config (BenchmarkConfig or None): Benchmark configuration.
        settings (SolverSettings or None): Simulator settings.
        out_dir (path-like or None): Directory for design files when ``config.write_designs`` is set.
        show_progress (bool): Show a progress bar over the cases.

    Returns:
        One record per case, method and repetition.
    """
    config = BenchmarkConfig() if config is None else config
    settings = SolverSettings() if settings is None else settings
    records = []
    if not config.methods:
        return records
    optimizers = {m: _optimizer(m, config, settings) for m in config.methods}
    for case in tqdm(list(cases), desc="Benchmark", unit="case", leave=False, disable=not show_progress):
        network = case.network
        n = network.n_candidate_pipes
        for method in config.methods:
            if method == "fminlp" and config.fminlp_max_n is not None and n > config.fminlp_max_n:
                logger.info(f"Skipping fminlp on {case.case_id} (n={n} > {config.fminlp_max_n}).")
                continue
            for rep in range(config.repetitions):
                logger.info(f"Running {method} on {case.case_id} (n={n}), repetition {rep}.")
                records.append(_timed_run(optimizers[method], network, case.case_id, method, rep, config, out_dir))
    return records


def _timed_run(optimize, network, case_id, method, rep, config, out_dir) -> BenchmarkRecord:
    n = network.n_candidate_pipes
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=config.threads):
            result = optimize(network)
    except Exception as err:
        wall_time = time.perf_counter() - start
        logger.warning(f"{method} failed on {case_id}: {err}")
        return BenchmarkRecord(case_id, n, method, rep, wall_time, False, error=f"{type(err).__name__}: {err}")
    wall_time = time.perf_counter() - start
    design_file = None
    if out_dir is not None and config.write_designs:
        path = Path(out_dir) / "designs" / f"{case_id}_{method}_{rep}.json"
        write_json(design_to_dict(network, result.design), path)
        design_file = str(path.relative_to(out_dir))
    return BenchmarkRecord(
        case_id,
        n,
        method,
        rep,
        wall_time,
        bool(result.converged),
        float(result.cost.total_npv),
        design_file,
        result.info.get("nodes"),
    )


def summarize_records(records: Iterable[BenchmarkRecord]) -> list[dict]:
    """Mean wall time per case and method. A case counts as converged only if every repetition converged."""
    groups: dict[tuple, list[BenchmarkRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.n, r.case_id), []).append(r)
    rows = []
    for (method, n, case_id), group in sorted(groups.items()):
        costs = [r.total_cost for r in group if r.total_cost is not None]
        nodes = [r.nodes for r in group if r.nodes is not None]
        rows.append(
            {
                "case_id": case_id,
                "n": n,
                "method": method,
                "repetitions": len(group),
                "mean_wall_time": float(np.mean([r.wall_time for r in group])),
                "converged": all(r.converged for r in group),
                "total_cost": float(np.mean(costs)) if costs else None,
                "nodes": float(np.mean(nodes)) if nodes else None,
            }
        )
    return rows


class ScalingFit(NamedTuple):
    model: str
    a: float
    b: float
    r2: float
    n_samples: int

    def predict(self, n):
        n = np.asarray(n, dtype=float)
        if self.model == "exponential":
            return self.a * np.exp(self.b * n)
        return self.a * n**self.b

    def to_dict(self) -> dict:
        return self._asdict()


def fit_points(n, w, model: str) -> ScalingFit:
    """Fit ``w = a exp(b n)`` or ``w = a n^b`` by least squares on the logarithm of ``w``.

    The coefficient of determination is computed on the original scale, so a poor
    model family can score below zero.

    Raises:
        ValueError: With fewer than three distinct ``n`` or non-positive values.
    """
    if model not in SCALING_MODELS:
        raise ValueError(f"Invalid model {model!r}. Allowed values are {SCALING_MODELS}.")
    n = np.asarray(n, dtype=float)
    w = np.asarray(w, dtype=float)
    if n.shape != w.shape or n.ndim != 1:
        raise ValueError("n and w must be one-dimensional arrays of the same length.")
    if len(np.unique(n)) < 3:
        raise ValueError("A scaling fit needs at least three distinct problem sizes.")
    if np.any(w <= 0) or (model == "power" and np.any(n <= 0)):
        raise ValueError("Wall times and problem sizes must be strictly positive.")
    X = (n if model == "exponential" else np.log(n))[:, None]
    reg = LinearRegression().fit(X, np.log(w))
    fit = ScalingFit(model, float(np.exp(reg.intercept_)), float(reg.coef_[0]), math.nan, len(n))
    return fit._replace(r2=float(r2_score(w, fit.predict(n))))


def fit_scaling(records: Iterable[BenchmarkRecord], model: str, method: Optional[str] = None) -> ScalingFit:
    """Scaling fit of mean wall time over problem size. Cases with a non-converged run are excluded."""
    rows = [
        r
        for r in summarize_records(records)
        if r["converged"] and (method is None or r["method"] == method)
    ]
    return fit_points([r["n"] for r in rows], [r["mean_wall_time"] for r in rows], model)


_UNITS = (
    ("yr", 365.25 * 86400.0),
    ("d", 86400.0),
    ("h", 3600.0),
    ("min", 60.0),
    ("s", 1.0),
)


class Duration(NamedTuple):
    seconds: float
    value: float
    unit: str

    def __str__(self):
        return f"{self.value:.4g} {self.unit}"


def format_duration(seconds: float) -> Duration:
    for unit, scale in _UNITS:
        # Hours are kept up to two days
        if unit == "d" and seconds < 2 * 86400.0:
            continue
        if seconds >= scale or unit == "s":
            return Duration(float(seconds), float(seconds / scale), unit)


def extrapolate(fit: ScalingFit, n: float) -> Duration:
    """Wall time the fitted model predicts for a problem with ``n`` candidate pipes."""
    return format_duration(float(fit.predict(n)))


class GapReport(NamedTuple):
    """Comparison of two designs priced with the same simulator.

    ``delta`` holds ``B - A`` for every cost component and the total, ``None`` when a design is infeasible.
    """

    feasible_a: bool
    feasible_b: bool
    cost_a: Optional[dict]
    cost_b: Optional[dict]
    delta: Optional[dict]
    cheaper: Optional[str]

    def to_dict(self) -> dict:
        return self._asdict()


def _components(cost) -> dict:
    values = {
        "pipe_capex": cost.pipe_capex,
        "heat_capex": cost.heat_capex,
        "heat_opex": cost.heat_opex_annualized,
        "pump_opex": cost.pump_opex_annualized,
        "heat_cost": cost.heat_cost,
        "total_npv": cost.total_npv,
    }
    return {k: float(v) for k, v in values.items()}


def cross_evaluate(
    network: Network,
    design_a: DesignVector,
    design_b: DesignVector,
    settings: Optional[SolverSettings] = None,
    rtol: float = 1e-9,
) -> GapReport:
    """Simulate and price two designs with the same simulator and raw cost."""
    settings = SolverSettings() if settings is None else settings
    costs = []
    for design in (design_a, design_b):
        try:
            evaluation = evaluate_design(network, design, settings)
            costs.append(None if evaluation.cost is None else _components(evaluation.cost))
        except Exception as err:
            logger.warning(f"Design is infeasible on this network: {err}")
            costs.append(None)
    cost_a, cost_b = costs
    if cost_a is None or cost_b is None:
        return GapReport(cost_a is not None, cost_b is not None, cost_a, cost_b, None, None)
    delta = {k: cost_b[k] - cost_a[k] for k in cost_a}
    scale = max(abs(cost_a["total_npv"]), abs(cost_b["total_npv"]), 1.0)
    if abs(delta["total_npv"]) <= rtol * scale:
        cheaper = "tie"
    else:
        cheaper = "a" if delta["total_npv"] > 0 else "b"
    return GapReport(True, True, cost_a, cost_b, delta, cheaper)


def node_growth_ratios(records: Iterable[BenchmarkRecord], method: str = "fminlp") -> list[tuple[int, int, float]]:
    """Ratios of the mean branch-and-bound node counts of consecutive problem sizes."""
    rows = [r for r in summarize_records(records) if r["method"] == method and r["nodes"]]
    rows.sort(key=lambda r: r["n"])
    return [(a["n"], b["n"], b["nodes"] / a["nodes"]) for a, b in zip(rows[:-1], rows[1:])]


def is_super_polynomial(ratios: list[tuple[int, int, float]], threshold: float = 1.5) -> bool:
    return bool(ratios) and all(r > threshold for _, _, r in ratios)


def supply_report(network: Network, design: DesignVector, settings: Optional[SolverSettings] = None) -> dict:
    """Share of every house class demand served by every producer.

    House classes are read from the ``house_classes`` entry of the case metadata, all
    consumers form one class ``"all"`` without it.

    Returns:
        ``{house_class: {producer_id: share}}`` with shares of the class demand.
    """
    evaluation = evaluate_design(network, design, settings)
    if evaluation.cost is None:
        raise ValueError("The design does not simulate on this network.")
    shares = producer_shares(network, evaluation.sim.state)
    classes = network.meta.get("house_classes", {})
    demand = np.array([network.consumers[c].demand for c in network.consumer_ids])
    labels = np.array([classes.get(str(c), "all") for c in network.consumer_ids])
    report = {}
    for label in sorted(set(labels.tolist())):
        mask = labels == label
        total = demand[mask].sum()
        served = shares[mask].T @ demand[mask]
        report[label] = {
            str(pid): float(served[k] / total) if total > 0 else 0.0
            for k, pid in enumerate(network.producer_ids)
        }
    return report


SUMMARY_COLUMNS = ["case_id", "n", "method", "repetitions", "mean_wall_time", "converged", "total_cost", "nodes"]


def export_report(
    records: list[BenchmarkRecord],
    fits: Iterable[ScalingFit] = (),
    gaps: Optional[dict] = None,
    out_dir: Union[os.PathLike, str] = "bench",
    fit_methods: Optional[list[str]] = None,
) -> dict:
    """Write the raw records, the per-case summary, the fits and plot-ready series to ``out_dir``.

    Files: ``records.jsonl``, ``summary.csv``, ``fits.json`` and ``plot_data.json``
    (plus ``gaps.json`` when ``gaps`` is given). Identical inputs give identical files.

    Args:
        records (list of BenchmarkRecord): Benchmark records.
        fits (iterable of ScalingFit): Scaling fits to report.
        gaps (dict or None): Named :class:`GapReport` objects.
        out_dir (path-like): Output directory, created if needed.
        fit_methods (list of str or None): Method of each fit, in the order of ``fits``.

    Returns:
        Map from file kind to written path.
    """
    from heatnet._src.check_deps import check_bench_deps

    check_bench_deps()
    import pandas as pd

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    paths["records"] = out_dir / "records.jsonl"
    write_jsonl([r.to_dict() for r in records], paths["records"])

    summary = summarize_records(records)
    paths["summary"] = out_dir / "summary.csv"
    pd.DataFrame(summary, columns=SUMMARY_COLUMNS).to_csv(paths["summary"], index=False)

    fits = list(fits)
    fit_methods = [None] * len(fits) if fit_methods is None else fit_methods
    paths["fits"] = out_dir / "fits.json"
    write_json([{"method": m, **f.to_dict()} for m, f in zip(fit_methods, fits)], paths["fits"])

    series = {}
    for row in summary:
        if not row["converged"]:
            continue
        s = series.setdefault(row["method"], {"n": [], "wall_time": [], "log_n": [], "log_wall_time": []})
        s["n"].append(row["n"])
        s["wall_time"].append(row["mean_wall_time"])
        s["log_n"].append(math.log(row["n"]))
        s["log_wall_time"].append(math.log(row["mean_wall_time"]))
    plot = {"wall_time": series}
    if gaps:
        plot["cost_bars"] = {
            name: {"a": g.cost_a, "b": g.cost_b} for name, g in sorted(gaps.items()) if g.delta is not None
        }
    paths["plot_data"] = out_dir / "plot_data.json"
    write_json(plot, paths["plot_data"])

    if gaps:
        paths["gaps"] = out_dir / "gaps.json"
        write_json({name: g.to_dict() for name, g in sorted(gaps.items())}, paths["gaps"])
    return {k: str(v) for k, v in paths.items()}

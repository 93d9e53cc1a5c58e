from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from heatnet._src.serialization import dumps_json, read_json, write_json
from heatnet._src.utils import (
    DisconnectedConsumerError,
    InfeasibleDesignError,
    NetworkError,
    SimulationError,
)
from heatnet.benchmark import (
    BenchmarkConfig,
    cross_evaluate,
    export_report,
    extrapolate,
    fit_scaling,
    node_growth_ratios,
    run_benchmark,
)
from heatnet.costing import cost_report
from heatnet.datasets import (
    CircularCaseSpec,
    TwoProducerCaseSpec,
    circular_sequence,
    gen_circular,
    gen_two_producer,
)
from heatnet.models.fminlp import FminlpConfig, optimize_fminlp
from heatnet.models.pnlp import PnlpConfig, optimize_pnlp
from heatnet.network import design_from_dict, design_to_dict, load_case, save_case
from heatnet.simulator import SolverSettings, edge_table, evaluate_design

logger = logging.getLogger("heatnet")


def _settings(path: Optional[str]) -> SolverSettings:
    return SolverSettings() if path is None else SolverSettings.from_dict(read_json(path))


def _parse_sizes(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(":")]
    if len(parts) == 1:
        return parts[0], parts[0], 1
    if len(parts) == 2:
        return parts[0], parts[1], 1
    if len(parts) == 3:
        return parts[0], parts[1], parts[2]
    raise argparse.ArgumentTypeError(f"Invalid sizes {text!r}. Use start:stop:step.")


def cmd_simulate(args) -> int:
    network = load_case(args.case)
    design = design_from_dict(network, read_json(args.design))
    evaluation = evaluate_design(network, design, _settings(args.settings))
    if evaluation.cost is None:
        logger.error(
            f"The simulation did not converge (residual {evaluation.sim.residual_norm:.3e} after {evaluation.sim.iterations} iterations)."
        )
        return 1
    report = {
        "converged": True,
        "iterations": evaluation.sim.iterations,
        "residual_norm": evaluation.sim.residual_norm,
        "cost": cost_report(evaluation.cost),
    }
    sys.stdout.write(dumps_json(report))
    if args.table is not None:
        from heatnet._src.check_deps import check_bench_deps

        check_bench_deps()
        import pandas as pd

        Path(args.table).parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(edge_table(network, design, evaluation.sim.state)).to_csv(args.table, index=False)
    return 0


def cmd_optimize(args) -> int:
    network = load_case(args.case)
    settings = _settings(args.settings)
    values = {} if args.config is None else read_json(args.config)
    if args.method == "pnlp":
        init = None if args.init is None else design_from_dict(network, read_json(args.init))
        result = optimize_pnlp(network, PnlpConfig.from_dict(values), init, settings, args.progress)
    else:
        result = optimize_fminlp(network, FminlpConfig.from_dict(values), settings, args.progress)
    if args.out is not None:
        result.write_json(network, args.out)
    if args.design_out is not None:
        write_json(design_to_dict(network, result.design), args.design_out)
    sys.stdout.write(
        dumps_json(
            {
                "method": result.method,
                "converged": result.converged,
                "total_npv": result.total_npv,
                "wall_time": result.wall_time,
            }
        )
    )
    return 0


def cmd_casegen(args) -> int:
    if args.family == "circular":
        doc = gen_circular(CircularCaseSpec(segments=args.segments))
    else:
        doc = gen_two_producer(TwoProducerCaseSpec(size=args.size))
    save_case(doc, args.out)
    logger.info(f"Wrote {doc['meta']['case_id']} with {doc['meta']['n_candidate_pipes']} candidate pipes to {args.out}.")
    return 0


def cmd_bench(args) -> int:
    values = {} if args.config is None else read_json(args.config)
    start, stop, step = args.sizes
    values.update({"start": start, "stop": stop, "step": step})
    if args.methods is not None:
        values["methods"] = [m for m in args.methods.split(",") if m]
    if args.reps is not None:
        values["repetitions"] = args.reps
    config = BenchmarkConfig.from_dict(values)
    cases = circular_sequence(config.start, config.stop, config.step)
    records = run_benchmark(cases, config, _settings(args.settings), args.out, args.progress)

    fits, fit_methods = [], []
    for method in config.methods:
        for model in ("exponential", "power"):
            try:
                fit = fit_scaling(records, model, method)
            except ValueError as err:
                logger.warning(f"No {model} fit for {method}: {err}")
                continue
            fits.append(fit)
            fit_methods.append(method)
            logger.info(
                f"{method} {model} fit: a={fit.a:.4g}, b={fit.b:.4g}, R2={fit.r2:.3f}, "
                f"n=2000 -> {extrapolate(fit, 2000)}"
            )
    if "fminlp" in config.methods:
        for n0, n1, ratio in node_growth_ratios(records):
            logger.info(f"fminlp node growth {n0} -> {n1}: x{ratio:.2f}")
    paths = export_report(records, fits, None, args.out, fit_methods)
    sys.stdout.write(dumps_json(paths))
    return 0


def cmd_evaluate(args) -> int:
    if len(args.design) != 2:
        raise argparse.ArgumentTypeError("evaluate needs exactly two --design files.")
    network = load_case(args.case)
    a, b = (design_from_dict(network, read_json(p)) for p in args.design)
    report = cross_evaluate(network, a, b, _settings(args.settings))
    if args.out is not None:
        write_json(report.to_dict(), args.out)
    sys.stdout.write(dumps_json(report.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatnet", description="District heating network topology optimization.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug messages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate and price a design.")
    p.add_argument("--case", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--settings", help="JSON file with SolverSettings.")
    p.add_argument("--table", help="Write the per-edge table to this CSV file.")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="Optimize the topology of a case.")
    p.add_argument("--case", required=True)
    p.add_argument("--method", choices=["pnlp", "fminlp"], default="pnlp")
    p.add_argument("--config", help="JSON file with PnlpConfig or FminlpConfig values.")
    p.add_argument("--settings", help="JSON file with SolverSettings.")
    p.add_argument("--init", help="Starting design (pnlp only).")
    p.add_argument("--out", help="Result JSON file.")
    p.add_argument("--design-out", dest="design_out", help="Design JSON file of the result.")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("casegen", help="Generate a benchmark case.")
    family = p.add_subparsers(dest="family", required=True)
    c = family.add_parser("circular")
    c.add_argument("--segments", type=int, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_casegen)
    c = family.add_parser("two-producer")
    c.add_argument("--size", type=int, choices=[1, 2, 3], required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_casegen)

    p = sub.add_parser("bench", help="Run the scaling benchmark over the circular cases.")
    p.add_argument("--methods", help="Comma separated methods, e.g. pnlp,fminlp.")
    p.add_argument("--sizes", type=_parse_sizes, default=(0, 190, 10), help="Segments as start:stop:step, inclusive.")
    p.add_argument("--reps", type=int)
    p.add_argument("--config", help="JSON file with BenchmarkConfig values.")
    p.add_argument("--settings", help="JSON file with SolverSettings.")
    p.add_argument("--out", required=True)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("evaluate", help="Cross-evaluate two designs on one case.")
    p.add_argument("--case", required=True)
    p.add_argument("--design", action="append", required=True)
    p.add_argument("--settings", help="JSON file with SolverSettings.")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as err:
        parser.error(str(err))
    except (NetworkError, SimulationError, InfeasibleDesignError, ValueError) as err:
        if isinstance(err, DisconnectedConsumerError):
            logger.error(f"Disconnected consumers: {err.consumers}")
        logger.error(str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())

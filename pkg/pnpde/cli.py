"""Command-line experiment runner.

    pnpde run CONFIG [--out DIR] [--max-workers K] [--cells i:j,...]
    pnpde compare CONFIG [...]
    pnpde list-problems

Exit codes: 0 success, 2 configuration error, 3 solver failure (outputs of
the cells that succeeded are still written), 4 reference solution not
converged.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from logging import getLogger
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pnpde.baselines import (
    ReferenceSolution,
    check_crank_nicolson_support,
    crank_nicolson,
    reference_solution,
)
from pnpde.config import ExperimentConfig, load_config, parse_cells
from pnpde.exceptions import (
    ConfigError,
    PnpdeError,
    ReferenceNotConvergedError,
)
from pnpde.metrics import (
    convergence_slopes,
    mass_drift,
    metric_row,
    sup_error,
)
from pnpde.models import CSV_COLUMNS, Grid, MetricRow, SolveReport
from pnpde.problems import PDEProblem, eval_counts, problems_lookup
from pnpde.solver import solve_pnm
from pnpde.utils import (
    hash_sha256,
    versions,
    write_csv,
    write_field_csv,
    write_json,
)

logger = getLogger("pnpde")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_REFERENCE = 4

COMPARE_COLUMNS = (
    "n",
    "m",
    "e_inf_pnm",
    "e_inf_cn",
    "f_evals_pnm",
    "f_evals_cn",
)

Cell = Tuple[int, int]


@dataclass
class CellResult:
    """Everything one sweep cell produced."""

    cell: Cell
    report: SolveReport
    truth_field: np.ndarray
    row: MetricRow
    e_inf_cn: Optional[float] = None
    f_evals_cn: Optional[int] = None

    @property
    def sort_key(self) -> Tuple[int, int]:
        return self.row.n, self.row.m


def truth_on_grid(
    problem: PDEProblem,
    grid: Grid,
    reference: Optional[ReferenceSolution] = None,
) -> np.ndarray:
    T, X = grid.mesh()
    if problem.truth is not None:
        return np.asarray(problem.truth(T, X), dtype=float)
    if reference is None:
        raise ValueError(f"{problem.name} has no truth and no reference")
    return reference(T, X)


def solve_cell(
    config: ExperimentConfig,
    cell: Cell,
    reference: Optional[ReferenceSolution] = None,
) -> CellResult:
    """Solve one (i, j) cell on its own problem instance."""
    problem = config.build_problem()
    grid = config.grid(problem, *cell)
    report = solve_pnm(
        problem,
        grid,
        config.build_kernel(),
        config.build_strategy(problem),
        config.solve_options(),
    )
    truth = truth_on_grid(problem, grid, reference)
    row = metric_row(report, truth, config.z_floor, config.record_runtime)
    return CellResult(cell, report, truth, row)


def compare_cell(
    config: ExperimentConfig,
    cell: Cell,
    reference: Optional[ReferenceSolution] = None,
) -> CellResult:
    """Solve one cell with the PNM and with Crank-Nicolson, each on a
    fresh problem so that their f counts are separate."""
    result = solve_cell(config, cell, reference)
    problem = config.build_problem()
    baseline = crank_nicolson(problem, result.report.grid)
    result.e_inf_cn = sup_error(baseline.values, result.truth_field)
    result.f_evals_cn = eval_counts(problem).f
    return result


def run_cells(
    worker: Callable[[Cell], CellResult],
    cells: Sequence[Cell],
    max_workers: int,
) -> Tuple[List[CellResult], List[Dict[str, Any]]]:
    """Run cells on a bounded thread pool. Returns the results sorted by
    (n, m) and a record of every failed cell."""
    results, failures = [], []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [(cell, pool.submit(worker, cell)) for cell in cells]
        for cell, future in futures:
            try:
                results.append(future.result())
            except Exception as e:  # pylint: disable=broad-except
                logger.error("Cell %s:%s failed: %s", cell[0], cell[1], e)
                failures.append(
                    {
                        "i": cell[0],
                        "j": cell[1],
                        "error": type(e).__name__,
                        "message": str(e),
                    }
                )
    results.sort(key=lambda r: r.sort_key)
    return results, failures


def fit_slopes(rows: Sequence[MetricRow]) -> Dict[str, Dict[int, float]]:
    """Log-log convergence slopes along each axis, where there are enough
    rows to fit one."""
    slopes = {}
    for axis in ("n", "m"):
        try:
            slopes[axis] = convergence_slopes(rows, axis)
        except ValueError as e:
            logger.debug("No convergence slope along %s: %s", axis, e)
    return slopes


def cell_summary(result: CellResult, record_runtime: bool) -> Dict[str, Any]:
    report = result.report
    summary: Dict[str, Any] = {
        "i": result.cell[0],
        "j": result.cell[1],
        "n": result.row.n,
        "m": result.row.m,
        "sigma_hat": report.sigma_hat,
        "metrics": dict(report.metrics),
        "eval_counts": report.cost.as_dict(),
        "jitter_events": [e.as_dict() for e in report.jitter_events],
    }
    if report.initial_mass is not None:
        summary["initial_mass"] = report.initial_mass
        summary["mass_drift"] = mass_drift(
            report.mean_field, report.grid.x_nodes, report.initial_mass
        )
    if result.e_inf_cn is not None:
        summary["e_inf_cn"] = result.e_inf_cn
        summary["f_evals_cn"] = result.f_evals_cn
    if record_runtime:
        summary["runtime_s"] = report.runtime_seconds
    return summary


def field_filename(problem_name: str, row: MetricRow) -> str:
    return f"{problem_name}_n{row.n}_m{row.m}.csv"


def write_fields(
    out: Path, problem_name: str, results: Sequence[CellResult]
) -> None:
    for result in results:
        report = result.report
        write_field_csv(
            out / "fields" / field_filename(problem_name, result.row),
            report.grid.t_nodes,
            report.grid.x_nodes,
            report.mean_field,
            report.std_field,
            result.truth_field,
        )


def build_reference(
    config: ExperimentConfig, cells: Sequence[Cell]
) -> Optional[ReferenceSolution]:
    problem = config.build_problem()
    if problem.truth is not None:
        return None
    return reference_solution(
        problem,
        config.reference.refine,
        config.reference_base_shape(list(cells)),
        max_dt=config.reference.max_dt,
    )


def execute(
    config: ExperimentConfig,
    out: Path,
    compare: bool = False,
    max_workers: Optional[int] = None,
    cells: Optional[Tuple[Cell, ...]] = None,
) -> int:
    """Run a configured experiment and write its outputs to out."""
    selected = config.sweep_cells(cells)
    try:
        reference = build_reference(config, selected)
    except PnpdeError as e:
        logger.error("Reference solution failed: %s", e)
        return EXIT_SOLVER

    worker = compare_cell if compare else solve_cell
    results, failures = run_cells(
        lambda cell: worker(config, cell, reference),
        selected,
        max_workers or config.max_workers,
    )

    rows = [result.row for result in results]
    write_csv(out / "metrics.csv", CSV_COLUMNS, [r.as_csv_row() for r in rows])
    write_fields(out, config.problem, results)
    report: Dict[str, Any] = {
        "config": config.as_dict(),
        "config_fingerprint": hash_sha256(config.as_dict()),
        "versions": versions(),
        "cells": [cell_summary(r, config.record_runtime) for r in results],
        "slopes": fit_slopes(rows),
        "failures": failures,
    }

    if compare:
        write_csv(
            out / "compare.csv",
            COMPARE_COLUMNS,
            [
                (
                    r.row.n,
                    r.row.m,
                    repr(r.row.e_inf),
                    repr(r.e_inf_cn),
                    r.row.f_evals,
                    r.f_evals_cn,
                )
                for r in results
            ],
        )
        report["budget_parity"] = all(
            r.row.f_evals == r.f_evals_cn for r in results
        )
        if not report["budget_parity"]:
            logger.error("f evaluation counts differ between methods")

    status = EXIT_SOLVER if failures else EXIT_OK
    if reference is not None:
        report["reference"] = {
            "refine": config.reference.refine,
            "shape": list(reference.solution.grid.shape),
            "error_estimate": reference.error_estimate,
            "converged": True,
        }
        if rows:
            try:
                reference.check(
                    min(r.e_inf for r in rows),
                    config.reference.tolerance_fraction,
                )
            except ReferenceNotConvergedError as e:
                logger.error("%s", e)
                report["reference"]["converged"] = False
                status = status or EXIT_REFERENCE

    write_json(out / "report.json", report)
    return status


def list_problems() -> int:
    for name, builder in problems_lookup.items():
        doc = (builder.__doc__ or "").strip().splitlines()
        print(f"{name}\t{doc[0] if doc else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", type=Path, help="Experiment INI file")
    common.add_argument("--out", help="Output directory")
    common.add_argument(
        "--max-workers", type=int, help="Sweep cells solved in parallel"
    )
    common.add_argument(
        "--cells", help="Subset of cells to run, as i:j[,i:j...]"
    )
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(
        prog="pnpde",
        description="Probabilistic solution of nonlinear PDEs by sequential "
        "Gaussian process conditioning.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser(
        "run", parents=[common], help="Solve every cell of a sweep"
    )
    commands.add_parser(
        "compare",
        parents=[common],
        help="Compare against Crank-Nicolson at equal f budgets",
    )
    commands.add_parser("list-problems", help="List the benchmark problems")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-problems":
        return list_problems()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        cells = parse_cells(args.cells) if args.cells else None
        if args.command == "compare":
            try:
                check_crank_nicolson_support(config.build_problem())
            except ValueError as e:
                raise ConfigError(str(e)) from e
        if args.max_workers is not None and args.max_workers < 1:
            raise ConfigError(
                f"--max-workers must be >= 1, got {args.max_workers}"
            )
    except ConfigError as e:
        print(f"pnpde: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(
        config,
        config.output_path(args.out),
        compare=args.command == "compare",
        max_workers=args.max_workers,
        cells=cells,
    )

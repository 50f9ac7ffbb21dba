"""Command-line driver: ``python -m rtinterp <command> [options]``.

Commands
--------
trace        trace the reference lattice of a scenario → ``grid.csv``
interpolate  interpolate target points from a grid → ``results.csv`` + diagnostics
evaluate     trace the truth at each target and score the results → ``report.json`` + CDFs
sweep        repeat trace/interpolate/evaluate over one parameter axis
bench        runtime ledger (trace calls and wall time against link count)

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 every target ended without paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from rtinterp.config_manager import ChannelModel, ConfigManager, Estimator, RunConfig
from rtinterp.errors import (
    EXIT_CONFIG,
    EXIT_EMPTY,
    EXIT_IO,
    EXIT_OK,
    ConfigurationError,
    GridFormatError,
    RtInterpError,
    SchemaVersionError,
)
from rtinterp.evaluation import (
    MODELS,
    CountingTracer,
    EvaluationReport,
    RuntimeLedger,
    empirical_cdf,
    evaluate_targets,
    runtime_ledger,
    summarize,
)
from rtinterp.geometry import load_scene
from rtinterp.interpolation import STATUS_OK, InterpolationResult, interpolate_many
from rtinterp.logging_config import setup_logging
from rtinterp.mimo import attach_transforms
from rtinterp.pathdata_io import (
    ReferenceGrid,
    TargetDiagnostics,
    read_diagnostics,
    read_grid,
    read_targets,
    write_cdf,
    write_diagnostics,
    write_grid,
    write_ledger,
    write_table,
    write_targets,
)
from rtinterp.scenarios import BUILTIN_SCENARIOS, ScenarioSpec, get_scenario, load_scenario_file

__all__ = ["main", "build_parser"]

_log = logging.getLogger("rtinterp.cli")

SWEEP_AXES = ("grid_spacing", "sigma", "p_th", "method")


class _EmptyResult(Exception):
    """Every target of the run ended up with zero paths."""


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("scenario")
    src.add_argument("--scenario", choices=sorted(BUILTIN_SCENARIOS), default="most_los", help="Built-in scenario")
    src.add_argument("--scenario-file", type=Path, help="JSON scenario file (overrides --scenario)")
    src.add_argument("--scene", type=Path, help="Scene JSON replacing the scenario's scene")
    src.add_argument("--grid-spacing", type=float, help="Reference lattice spacing [m]")
    src.add_argument("--count", type=int, help="Number of random targets")
    src.add_argument("--targets", type=Path, help="CSV with explicit x,y,z targets")

    run = common.add_argument_group("run configuration")
    run.add_argument("--config", type=Path, help="JSON run configuration")
    run.add_argument("--seed", type=int)
    run.add_argument("--sigma", type=float, help="Kernel width [m]")
    run.add_argument("--p-th", dest="p_th", type=float, help="Cluster probability threshold")
    run.add_argument("--d-th", dest="d_th", type=float, help="Neighbour radius [m] (default 1.5 × spacing)")
    run.add_argument("--method", choices=[e.value for e in Estimator])
    run.add_argument("--model", choices=[m.value for m in ChannelModel], help="Headline channel model")
    run.add_argument("--max-order", dest="max_order", type=int, help="Maximum reflection order")
    run.add_argument("--threads", type=int)

    out = common.add_argument_group("output")
    out.add_argument("--out", type=Path, default=Path("out"), help="Output directory (default: ./out)")
    out.add_argument("--grid", type=Path, help="Grid CSV (default: <out>/grid.csv)")
    out.add_argument("--results", type=Path, help="Results CSV (default: <out>/results.csv)")
    out.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    out.add_argument("--log-file", type=Path, help="Log file (default: <out>/rtinterp.log)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtinterp",
        description="Ray-tracing interpolation of multipath parameters and MIMO channel evaluation.",
    )
    common = _common_options()
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("trace", parents=[common], help="Trace the reference lattice")
    sub.add_parser("interpolate", parents=[common], help="Interpolate targets from a grid")
    sub.add_parser("evaluate", parents=[common], help="Score results against traced truth")
    sweep = sub.add_parser("sweep", parents=[common], help="Evaluate over one parameter axis")
    sweep.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sweep.add_argument("--values", nargs="+", required=True, metavar="VALUE")
    bench = sub.add_parser("bench", parents=[common], help="Runtime ledger and linear scaling fit")
    bench.add_argument(
        "--values", nargs="+", type=int, default=[8, 16, 32, 64, 128], metavar="LINKS",
        help="Link counts for the trace scaling rows",
    )
    bench.add_argument("--no-exhaustive", action="store_true", help="Skip the per-element MIMO trace stage")
    return parser


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _run_config(args: argparse.Namespace) -> RunConfig:
    manager = ConfigManager(args.config) if args.config else ConfigManager()
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "sigma": args.sigma,
        "p_th": args.p_th,
        "d_th": args.d_th,
        "method": args.method,
        "max_order": args.max_order,
        "threads": args.threads,
    }
    if args.model == ChannelModel.EXHAUSTIVE.value:
        overrides["truth_model"] = ChannelModel.EXHAUSTIVE.value
    elif args.model is not None:
        overrides["channel_model"] = args.model
    return manager.run_config(**overrides)


def _scenario(args: argparse.Namespace, config: RunConfig) -> ScenarioSpec:
    if args.scenario_file:
        spec = load_scenario_file(args.scenario_file)
    else:
        spec = get_scenario(args.scenario).with_overrides(height=config.reference_height, seed=config.seed)
    spec = spec.with_overrides(grid_spacing=args.grid_spacing, target_count=args.count, seed=args.seed)
    if args.scene is not None:
        spec = spec.with_overrides(scene=load_scene(args.scene))
    return spec


def _targets(args: argparse.Namespace, spec: ScenarioSpec) -> List[tuple]:
    targets = read_targets(args.targets) if args.targets else spec.targets()
    spec.check_targets(targets)
    return targets


def _grid_path(args: argparse.Namespace) -> Path:
    return args.grid or args.out / "grid.csv"


def _results_path(args: argparse.Namespace) -> Path:
    return args.results or args.out / "results.csv"


def _diagnostics_path(results: Path) -> Path:
    return results.with_name(results.stem + "_diagnostics.csv")


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _clean(obj: Any) -> Any:
    """Replace non-finite floats so the report stays valid JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _write_report(report: EvaluationReport, config: RunConfig, out: Path, prefix: str = "") -> Dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    headline = config.channel_model.value if config.channel_model is not ChannelModel.EXHAUSTIVE else "rm"
    payload["headline_model"] = headline
    payload["method"] = config.method.value
    if report.power_errors:
        write_cdf(empirical_cdf(report.power_errors), out / f"{prefix}power_error_cdf.csv")
    for model in report.models:
        samples = report.capacity_errors(model)
        if samples:
            write_cdf(empirical_cdf(samples), out / f"{prefix}capacity_error_{model}_cdf.csv")
    payload = _clean(payload)
    with (out / f"{prefix}report.json").open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _write_results(grid: ReferenceGrid, results: Sequence[InterpolationResult], destination: Path) -> None:
    by_target = ReferenceGrid(
        tx=grid.tx,
        references=tuple((r.target, r.path_set(grid.tx)) for r in results),
    )
    write_grid(by_target, destination)
    write_diagnostics(
        (
            TargetDiagnostics(
                target=r.target,
                status=r.status,
                clusters_considered=r.clusters_considered,
                clusters_kept=r.clusters_kept,
                probabilities=r.probabilities,
            )
            for r in results
        ),
        _diagnostics_path(destination),
    )


def _load_results(path: Path) -> List[InterpolationResult]:
    estimates = read_grid(path)
    diagnostics = read_diagnostics(_diagnostics_path(path))
    by_point = {rx: ps for rx, ps in estimates.references}
    out = []
    for diag in diagnostics:
        path_set = by_point.get(diag.target)
        if path_set is None:
            raise GridFormatError(f"target {diag.target} missing from results", source=str(path))
        out.append(
            InterpolationResult(
                target=diag.target,
                paths=attach_transforms(path_set).paths,
                clusters_considered=diag.clusters_considered,
                clusters_kept=diag.clusters_kept,
                probabilities=diag.probabilities,
                status=diag.status,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_trace(args: argparse.Namespace, config: RunConfig) -> Dict[str, Any]:
    spec = _scenario(args, config)
    tracer = CountingTracer()
    ledger = RuntimeLedger()
    points = spec.reference_points()
    with ledger.measure("reference_grid", len(points), tracer):
        grid = spec.trace_grid(
            max_order=config.max_order,
            carrier_frequency=config.carrier_frequency,
            tracer=tracer,
            threads=config.threads,
        )
    write_grid(grid, _grid_path(args))
    write_ledger(ledger, args.out / "trace_ledger.csv")
    return {"references": len(grid), "paths": grid.total_paths(), "trace_calls": tracer.calls}


def cmd_interpolate(args: argparse.Namespace, config: RunConfig) -> Dict[str, Any]:
    spec = _scenario(args, config)
    grid = read_grid(_grid_path(args))
    targets = _targets(args, spec)
    results = interpolate_many(grid, targets, config)
    write_targets(targets, args.out / "targets.csv")
    _write_results(grid, results, _results_path(args))
    with_paths = sum(1 for r in results if r.paths)
    summary = {
        "targets": len(results),
        "with_paths": with_paths,
        "no_neighbors": sum(1 for r in results if r.status != STATUS_OK),
    }
    if results and with_paths == 0:
        raise _EmptyResult(summary)
    return summary


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> Dict[str, Any]:
    spec = _scenario(args, config)
    grid = read_grid(_grid_path(args))
    results = _load_results(_results_path(args))
    targets = [r.target for r in results]
    report = evaluate_targets(spec.scene, grid, targets, results, config)
    payload = _write_report(report, config, args.out)
    if results and all(not r.paths for r in results):
        raise _EmptyResult(payload)
    return payload


def _sweep_value(axis: str, raw: str) -> Any:
    if axis == "method":
        return Estimator(raw).value
    return float(raw)


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> Dict[str, Any]:
    if len(args.values) < 2:
        raise ConfigurationError("a sweep needs at least two values")
    spec = _scenario(args, config)
    targets = _targets(args, spec)
    grids: Dict[float, ReferenceGrid] = {}
    rows = []
    for raw in args.values:
        value = _sweep_value(args.axis, raw)
        cell_config = config if args.axis == "grid_spacing" else config.replace(**{args.axis: value})
        spacing = float(value) if args.axis == "grid_spacing" else spec.grid_spacing
        if spacing not in grids:
            grids[spacing] = spec.trace_grid(
                max_order=cell_config.max_order,
                carrier_frequency=cell_config.carrier_frequency,
                spacing=spacing,
                threads=cell_config.threads,
            )
        results = interpolate_many(grids[spacing], targets, cell_config)
        report = evaluate_targets(spec.scene, grids[spacing], targets, results, cell_config)
        payload = _write_report(report, cell_config, args.out, prefix=f"sweep_{args.axis}_{raw}_")
        power = summarize(report.power_errors)
        row: Dict[str, Any] = {
            "value": raw,
            "median_power_error_db": power.median,
            "p90_power_error_db": power.p90,
            "outage_fraction": power.outage_fraction,
        }
        for model in MODELS:
            row[f"median_capacity_error_{model}"] = summarize(report.capacity_errors(model)).median
        rows.append(row)
        _log.info("sweep %s=%s: median power error %s dB", args.axis, raw, payload["power_error_db"]["median"])

    write_table(rows, args.out / f"sweep_{args.axis}.csv")
    return {"axis": args.axis, "rows": _clean(rows)}


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> Dict[str, Any]:
    spec = _scenario(args, config)
    points = spec.reference_points()
    targets = _targets(args, spec)
    ledger = runtime_ledger(
        spec.scene,
        spec.tx,
        points,
        targets,
        config,
        link_counts=args.values,
        exhaustive=not args.no_exhaustive,
    )
    write_ledger(ledger, args.out / "ledger.csv")
    payload: Dict[str, Any] = {"ledger": ledger.to_rows()}
    if len(ledger.stage("trace_scaling")) >= 2:
        time_fit = ledger.fit("trace_scaling")
        calls_fit = ledger.fit("trace_scaling", y="trace_calls")
        payload["time_fit"] = time_fit.__dict__
        payload["calls_fit"] = calls_fit.__dict__
    return payload


_COMMANDS = {
    "trace": cmd_trace,
    "interpolate": cmd_interpolate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:  # noqa: D401 – CLI entry-point
    """Parse *argv*, run the command and return the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level, log_file=args.log_file or args.out / "rtinterp.log")
    try:
        config = _run_config(args)
        payload = _COMMANDS[args.command](args, config)
    except _EmptyResult as exc:
        _log.warning("Every target ended without paths")
        _emit(exc.args[0] if exc.args else {})
        return EXIT_EMPTY
    except (ConfigurationError, SchemaVersionError) as exc:
        _log.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except (GridFormatError, OSError) as exc:
        _log.error("I/O error: %s", exc)
        return EXIT_IO
    except RtInterpError as exc:
        _log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG
    _emit(payload)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

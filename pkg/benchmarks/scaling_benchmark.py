"""Linear-scaling benchmark for reference tracing.

Runs the runtime ledger on a built-in scenario, fits wall time against the
number of traced links and compares the per-link cost with the value stored
in ``benchmark_baselines.json``.  The process exits with status 1 when the
per-link cost regresses by more than 10 %.

Interpolation queries are timed too; they must not issue a single trace call.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

# ---------------------------------------------------------------------------
# Ensure repository root is importable regardless of the working directory.
# ---------------------------------------------------------------------------
_REPO_ROOT = Path(__file__).resolve().parents[1]
if str(_REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(_REPO_ROOT))

from rtinterp.config_manager import RunConfig  # noqa: E402
from rtinterp.evaluation import LinearFit, RuntimeLedger, runtime_ledger  # noqa: E402
from rtinterp.scenarios import BUILTIN_SCENARIOS, get_scenario  # noqa: E402

_THIS_DIR = Path(__file__).resolve().parent
_DEFAULT_BASELINE_FILE = _THIS_DIR / "benchmark_baselines.json"
_REGRESSION_TOLERANCE = 0.10  # 10 %
_DEFAULT_SIZES = (8, 16, 32, 64, 128)


def run_benchmark(
    *,
    scenario: str = "most_los",
    sizes=_DEFAULT_SIZES,
    targets: int = 20,
    exhaustive: bool = False,
) -> tuple[RuntimeLedger, LinearFit]:
    """Return the ledger and the seconds-per-link fit of the trace scaling rows."""
    spec = get_scenario(scenario)
    config = RunConfig(array_rows=2, array_cols=2)
    ledger = runtime_ledger(
        spec.scene,
        spec.tx,
        spec.reference_points(),
        spec.targets(targets),
        config,
        link_counts=sizes,
        exhaustive=exhaustive,
    )
    fit = ledger.fit("trace_scaling")
    logging.info("Per-link trace cost: %.6f s (R² = %.4f)", fit.slope, fit.r_squared)
    interp = ledger.stage("interpolation")
    if interp and interp[0].trace_calls:
        logging.error("Interpolation issued %d trace calls", interp[0].trace_calls)
    return ledger, fit


# ---------------------------------------------------------------------------
# Baseline helpers
# ---------------------------------------------------------------------------

def _read_baseline(path: Path) -> float | None:
    try:
        with path.open("r", encoding="utf-8") as fh:
            return float(json.load(fh).get("seconds_per_link", 0.0))
    except FileNotFoundError:
        return None


def _write_baseline(path: Path, seconds_per_link: float) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(
            {"seconds_per_link": seconds_per_link, "timestamp": datetime.now(timezone.utc).isoformat()},
            fh,
            indent=2,
        )
        fh.write("\n")
    logging.info("Baseline updated → %.6f s/link (saved to %s)", seconds_per_link, path)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _parse_args(argv: List[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="rtinterp reference-tracing scaling benchmark")
    parser.add_argument("--scenario", choices=sorted(BUILTIN_SCENARIOS), default="most_los")
    parser.add_argument("--sizes", nargs="+", type=int, default=list(_DEFAULT_SIZES), help="Link counts")
    parser.add_argument("--targets", type=int, default=20, help="Interpolation queries to time")
    parser.add_argument("--exhaustive", action="store_true", help="Also time the per-element MIMO stage")
    parser.add_argument("--baseline", type=Path, default=_DEFAULT_BASELINE_FILE, help="Path to baseline JSON")
    parser.add_argument("--update-baseline", action="store_true", help="Overwrite baseline with new results")
    parser.add_argument("--output-json", type=Path, help="Write current results JSON to this path")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> None:  # noqa: WPS231 – CLI plumbing
    """Entry-point used by ``python -m benchmarks.scaling_benchmark``."""
    if argv is None:
        argv = sys.argv[1:]
    args = _parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    ledger, fit = run_benchmark(
        scenario=args.scenario, sizes=args.sizes, targets=args.targets, exhaustive=args.exhaustive
    )

    baseline = _read_baseline(args.baseline)
    if args.update_baseline or baseline is None:
        _write_baseline(args.baseline, fit.slope)
        baseline = fit.slope

    allowed = baseline * (1 + _REGRESSION_TOLERANCE)
    if fit.slope > allowed:
        logging.error(
            "Performance regression detected! %.6f s/link > allowed %.6f (baseline %.6f)",
            fit.slope,
            allowed,
            baseline,
        )
        sys.exit(1)

    logging.info("Benchmark passed – per-link cost within acceptable range")

    if args.output_json:
        payload = {
            "seconds_per_link": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
            "baseline_seconds_per_link": baseline,
            "ledger": ledger.to_rows(),
        }
        with args.output_json.open("w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        logging.info("Results written to %s", args.output_json)


if __name__ == "__main__":
    main()

from __future__ import annotations

import inspect
import json
import subprocess
import sys
from pathlib import Path

import pytest

# ---------------------------------------------------------------------------
# Repository path plumbing so local imports resolve in all execution contexts
# ---------------------------------------------------------------------------

ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
BENCH_SCRIPT = ROOT_DIR / "benchmarks" / "scaling_benchmark.py"

if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from benchmarks.scaling_benchmark import run_benchmark  # noqa: E402


def test_trace_calls_scale_linearly_and_queries_never_trace():
    ledger, _ = run_benchmark(scenario="free_space", sizes=(4, 8, 16), targets=3)

    assert [e.trace_calls for e in ledger.stage("trace_scaling")] == [4, 8, 16]
    assert ledger.fit("trace_scaling", y="trace_calls").slope == pytest.approx(1.0)
    assert ledger.stage("interpolation")[0].trace_calls == 0


@pytest.mark.slow
def test_trace_time_is_linear_in_link_count():
    # GIVEN five link counts spanning more than an order of magnitude on a walled scene
    ledger, fit = run_benchmark(scenario="most_los", sizes=(16, 32, 64, 128, 256), targets=5)

    # THEN both the call count and the measured wall time follow a straight line
    calls = ledger.fit("trace_scaling", y="trace_calls")
    assert calls.slope == pytest.approx(1.0)
    assert calls.r_squared == pytest.approx(1.0)
    assert len(ledger.stage("trace_scaling")) == 5
    assert fit.slope > 0.0
    assert fit.r_squared > 0.95


def test_cli_script_passes(tmp_path):
    """A generous baseline must not flag a regression and the results JSON is written."""
    baseline = tmp_path / "baseline.json"
    baseline.write_text(json.dumps({"seconds_per_link": 10.0}), encoding="utf-8")
    output_json = tmp_path / "run.json"

    completed = subprocess.run(  # noqa: S603 – internal call to python
        [
            sys.executable,
            str(BENCH_SCRIPT),
            "--scenario",
            "free_space",
            "--sizes",
            "4",
            "8",
            "--targets",
            "2",
            "--baseline",
            str(baseline),
            "--output-json",
            str(output_json),
        ],
        cwd=str(ROOT_DIR),
        capture_output=True,
        text=True,
    )

    # Debug aid on CI failures
    if completed.returncode != 0:
        pytest.fail(
            (
                f"Benchmark CLI failed (code {completed.returncode}):\n"
                f"stdout:\n{completed.stdout}\n"
                f"stderr:\n{completed.stderr}"
            )
        )

    assert output_json.is_file(), "Benchmark did not write results JSON"
    payload = json.loads(output_json.read_text(encoding="utf-8"))
    assert payload["baseline_seconds_per_link"] == 10.0
    assert {row["stage"] for row in payload["ledger"]} == {"trace_scaling", "reference_grid", "interpolation"}


def test_regression_is_reported(tmp_path):
    baseline = tmp_path / "baseline.json"
    baseline.write_text(json.dumps({"seconds_per_link": -1.0}), encoding="utf-8")

    completed = subprocess.run(  # noqa: S603 – internal call to python
        [sys.executable, str(BENCH_SCRIPT), "--scenario", "free_space", "--sizes", "4", "8", "--targets", "1",
         "--baseline", str(baseline)],
        cwd=str(ROOT_DIR),
        capture_output=True,
        text=True,
    )
    assert completed.returncode == 1

import csv
import inspect
import json
import subprocess
import sys
from pathlib import Path

import pytest

ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from rtinterp.cli import main  # noqa: E402
from rtinterp.errors import EXIT_CONFIG, EXIT_EMPTY, EXIT_IO, EXIT_OK  # noqa: E402
from rtinterp.logging_config import reset_logging  # noqa: E402
from rtinterp.pathdata_io import read_grid  # noqa: E402

FAST = ["--scenario", "free_space", "--grid-spacing", "16", "--count", "4"]


@pytest.fixture(autouse=True)
def _isolated(monkeypatch, tmp_path):
    """No user config file and a fresh logging setup per test."""
    monkeypatch.setenv("RTINTERP_CONFIG", str(tmp_path / "no-such-config.json"))
    reset_logging()
    yield
    reset_logging()


def _run(capsys, *argv) -> tuple[int, dict]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else {})


def test_trace_interpolate_evaluate_pipeline(tmp_path, capsys):
    out = str(tmp_path / "run")

    # GIVEN a traced free-space lattice
    code, payload = _run(capsys, "trace", *FAST, "--out", out)
    assert code == EXIT_OK
    assert payload == {"references": 9, "paths": 9, "trace_calls": 9}
    assert (tmp_path / "run" / "grid.csv").is_file()
    assert (tmp_path / "run" / "trace_ledger.csv").is_file()
    assert (tmp_path / "run" / "rtinterp.log").is_file()

    # WHEN interpolating random targets
    code, payload = _run(capsys, "interpolate", *FAST, "--out", out)
    assert code == EXIT_OK
    assert payload == {"targets": 4, "with_paths": 4, "no_neighbors": 0}
    results = read_grid(tmp_path / "run" / "results.csv")
    assert len(results) == 4
    assert (tmp_path / "run" / "results_diagnostics.csv").is_file()

    # THEN evaluation reports near-zero errors and writes the CDF files
    code, payload = _run(capsys, "evaluate", *FAST, "--out", out)
    assert code == EXIT_OK
    assert payload["targets"] == 4
    assert payload["power_error_db"]["median"] < 0.1
    assert payload["headline_model"] == "rm"
    report = json.loads((tmp_path / "run" / "report.json").read_text(encoding="utf-8"))
    assert report["capacity_error"]["rm"]["median"] < 0.01
    assert (tmp_path / "run" / "power_error_cdf.csv").is_file()
    assert (tmp_path / "run" / "capacity_error_rm_cdf.csv").is_file()


def test_explicit_targets_file(tmp_path, capsys):
    out = tmp_path / "run"
    targets = tmp_path / "targets.csv"
    targets.write_text("x,y,z\n1.0,2.0,1.5\n30.0,31.0,1.5\n", encoding="utf-8")
    assert _run(capsys, "trace", *FAST, "--out", str(out))[0] == EXIT_OK

    code, payload = _run(capsys, "interpolate", *FAST, "--targets", str(targets), "--out", str(out))
    assert code == EXIT_OK
    assert payload["targets"] == 2


def test_trace_is_deterministic_across_threads(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "trace", "--scenario", "partial_los", "--grid-spacing", "8", "--out", str(a))[0] == 0
    assert (
        _run(
            capsys, "trace", "--scenario", "partial_los", "--grid-spacing", "8", "--threads", "3", "--out", str(b)
        )[0]
        == 0
    )
    assert (a / "grid.csv").read_bytes() == (b / "grid.csv").read_bytes()


def test_invalid_parameter_exits_with_config_code(tmp_path, capsys):
    code, _ = _run(capsys, "trace", *FAST, "--p-th", "1.5", "--out", str(tmp_path))
    assert code == EXIT_CONFIG


def test_bad_config_file_exits_with_config_code(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"hotkey": "ctrl+h"}), encoding="utf-8")
    code, _ = _run(capsys, "trace", *FAST, "--config", str(config), "--out", str(tmp_path))
    assert code == EXIT_CONFIG


def test_missing_grid_exits_with_io_code(tmp_path, capsys):
    code, _ = _run(capsys, "interpolate", *FAST, "--grid", str(tmp_path / "absent.csv"), "--out", str(tmp_path))
    assert code == EXIT_IO


def test_malformed_grid_exits_with_io_code(tmp_path, capsys):
    grid = tmp_path / "grid.csv"
    grid.write_text("not a grid\n", encoding="utf-8")
    code, _ = _run(capsys, "interpolate", *FAST, "--grid", str(grid), "--out", str(tmp_path))
    assert code == EXIT_IO


def test_all_targets_without_paths_exits_with_empty_code(tmp_path, capsys):
    out = str(tmp_path)
    assert _run(capsys, "trace", *FAST, "--out", out)[0] == EXIT_OK
    targets = tmp_path / "targets.csv"
    targets.write_text("x,y,z\n8.0,8.0,1.5\n24.0,8.0,1.5\n", encoding="utf-8")

    code, payload = _run(capsys, "interpolate", *FAST, "--targets", str(targets), "--d-th", "0.5", "--out", out)
    assert code == EXIT_EMPTY
    assert payload["no_neighbors"] == 2


def test_sweep_writes_one_row_per_value(tmp_path, capsys):
    code, payload = _run(
        capsys, "sweep", *FAST, "--axis", "sigma", "--values", "1", "4", "--out", str(tmp_path)
    )
    assert code == EXIT_OK
    assert [row["value"] for row in payload["rows"]] == ["1", "4"]
    with (tmp_path / "sweep_sigma.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert list(rows[0]) == list(payload["rows"][0])
    assert [row["value"] for row in rows] == ["1", "4"]
    assert (tmp_path / "sweep_sigma_1_report.json").is_file()


def test_sweep_needs_two_values(tmp_path, capsys):
    code, _ = _run(capsys, "sweep", *FAST, "--axis", "p_th", "--values", "0.3", "--out", str(tmp_path))
    assert code == EXIT_CONFIG


def test_bench_scales_linearly_in_trace_calls(tmp_path, capsys):
    code, payload = _run(
        capsys, "bench", *FAST, "--values", "2", "4", "8", "--no-exhaustive", "--out", str(tmp_path)
    )
    assert code == EXIT_OK
    assert payload["calls_fit"]["slope"] == pytest.approx(1.0)
    stages = {row["stage"] for row in payload["ledger"]}
    assert stages == {"trace_scaling", "reference_grid", "interpolation"}
    interp = [row for row in payload["ledger"] if row["stage"] == "interpolation"][0]
    assert interp["trace_calls"] == 0
    assert (tmp_path / "ledger.csv").is_file()


def test_module_help_runs():
    completed = subprocess.run(  # noqa: S603 – internal call to python
        [sys.executable, "-m", "rtinterp", "--help"],
        cwd=str(ROOT_DIR),
        capture_output=True,
        text=True,
    )
    if completed.returncode != 0:
        pytest.fail(f"CLI help failed (code {completed.returncode}):\nstderr:\n{completed.stderr}")
    for command in ("trace", "interpolate", "evaluate", "sweep", "bench"):
        assert command in completed.stdout

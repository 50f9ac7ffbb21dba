import inspect
import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from rtinterp.batch_runner import run_batch  # noqa: E402
from rtinterp.config_manager import RunConfig  # noqa: E402
from rtinterp.errors import PreconditionError  # noqa: E402
from rtinterp.evaluation import (  # noqa: E402
    MODELS,
    CountingTracer,
    LinkBudget,
    RuntimeLedger,
    capacity_error,
    cluster_diagnostics,
    empirical_cdf,
    evaluate_targets,
    initial_sector_azimuth,
    received_power_error,
    runtime_ledger,
    spectral_efficiency,
    summarize,
)
from rtinterp.geometry import Facet, PathRecord, PathSet, Scene, trace_paths  # noqa: E402
from rtinterp.interpolation import InterpolationResult, interpolate, interpolate_many  # noqa: E402
from rtinterp.pathdata_io import ReferenceGrid, generate_reference_layout  # noqa: E402
from rtinterp.scenarios import get_scenario  # noqa: E402

TX = (-10.0, 4.0, 10.0)


def _path(gain: complex) -> PathRecord:
    return PathRecord(gain=gain, delay=1e-7, aoa_az=0.0, aoa_zen=1.0, aod_az=0.0, aod_zen=1.0)


def _budget() -> LinkBudget:
    return LinkBudget(tx_power_dbm=23.0, noise_figure_db=3.0, bandwidth=400e6, alpha=0.6, rho_max=4.8)


def _snr_scale(budget: LinkBudget) -> float:
    """Linear P_tx / N so that |s|² · scale is the single-stream SNR."""
    return 10.0 ** (budget.tx_power_dbm / 10.0) / 10.0 ** (budget.noise_power_dbm / 10.0)


def _plane_grid() -> tuple[Scene, ReferenceGrid]:
    scene = Scene(
        (
            Facet.infinite_plane((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), -0.4),
            Facet.infinite_plane((20.0, 0.0, 0.0), (-1.0, 0.0, 0.0), -0.5),
        ),
        max_reflection_order=2,
    )
    points = generate_reference_layout((0.0, 0.0, 8.0, 8.0), 4.0, 1.5)
    return scene, ReferenceGrid.from_path_sets(TX, [trace_paths(scene, TX, p, 2) for p in points], 4.0)


# ---------------------------------------------------------------------------
# Link budget and rates
# ---------------------------------------------------------------------------

def test_noise_power():
    budget = _budget()
    assert budget.noise_psd_dbm_hz == pytest.approx(-171.0)
    assert budget.noise_power_dbm == pytest.approx(-171.0 + 10 * math.log10(400e6))


def test_stream_rate_shape():
    budget = _budget()
    assert float(budget.stream_rate(1.0)) == pytest.approx(0.6)
    assert float(budget.stream_rate(1e9)) == pytest.approx(4.8)
    assert float(budget.stream_rate(0.0)) == 0.0


def test_link_budget_from_config():
    budget = LinkBudget.from_config(RunConfig(tx_power_dbm=30.0, se_alpha=0.5))
    assert budget.tx_power_dbm == 30.0
    assert budget.alpha == 0.5
    assert budget.rho_max == 4.8


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def test_power_error_identical_sets_is_zero():
    paths = [_path(1e-4), _path(2e-5j)]
    assert received_power_error(paths, paths) == 0.0


def test_power_error_of_half_power():
    err = received_power_error([_path(1.0)], [_path(1.0 / math.sqrt(2.0))])
    assert err == pytest.approx(10.0 * math.log10(2.0), rel=1e-12)


def test_power_error_is_symmetric():
    a, b = [_path(0.3)], [_path(0.1 + 0.2j), _path(0.05)]
    assert received_power_error(a, b) == pytest.approx(received_power_error(b, a))


def test_power_error_of_empty_estimate_is_outage():
    assert received_power_error([_path(1.0)], []) == math.inf


def test_power_error_needs_true_power():
    with pytest.raises(PreconditionError):
        received_power_error([], [_path(1.0)])


def test_rank_one_spectral_efficiency_closed_form():
    budget = _budget()
    s = 1e-5
    H = np.zeros((4, 4), dtype=complex)
    H[0, 0] = s
    gamma = s**2 * _snr_scale(budget)
    expected = min(0.6 * math.log2(1.0 + gamma), 4.8)
    assert spectral_efficiency(H, budget) == pytest.approx(expected, rel=1e-9)


def test_spectral_efficiency_zero_matrix():
    assert spectral_efficiency(np.zeros((3, 3), dtype=complex), _budget()) == 0.0


def test_spectral_efficiency_unitary_invariance():
    rng = np.random.default_rng(5)
    budget = _budget()
    H = (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))) * 1e-6
    U, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    V, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    assert spectral_efficiency(U @ H @ V, budget) == pytest.approx(spectral_efficiency(H, budget), rel=1e-9)


def test_spectral_efficiency_grows_with_power():
    rng = np.random.default_rng(6)
    H = (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))) * 1e-7
    low = spectral_efficiency(H, LinkBudget(tx_power_dbm=10.0))
    high = spectral_efficiency(H, LinkBudget(tx_power_dbm=30.0))
    assert high >= low > 0.0


def test_spectral_efficiency_uses_several_streams_when_strong():
    # four equal strong singular values: every stream saturates
    H = np.eye(4, dtype=complex)
    assert spectral_efficiency(H, _budget()) == pytest.approx(4 * 4.8)


def test_spectral_efficiency_rejects_non_finite_entries():
    H = np.array([[np.nan, 0.0], [0.0, 1.0]], dtype=complex)
    with pytest.raises(PreconditionError):
        spectral_efficiency(H, _budget())


def test_capacity_error_cases():
    budget = _budget()
    H = np.diag([1e-5, 0.0]).astype(complex)
    assert capacity_error(H, H, budget) == 0.0
    assert math.isnan(capacity_error(H, np.zeros((2, 2), dtype=complex), budget))
    assert capacity_error(np.zeros((2, 2), dtype=complex), H, budget) == 1.0


# ---------------------------------------------------------------------------
# CDFs and summaries
# ---------------------------------------------------------------------------

def test_cdf_of_three_values():
    curve = empirical_cdf([3.0, 1.0, 2.0])
    assert curve.values.tolist() == [1.0, 2.0, 3.0]
    assert np.allclose(curve.fractions, [1 / 3, 2 / 3, 1.0])
    assert curve.median == 2.0


def test_cdf_of_equal_values_is_single_step():
    curve = empirical_cdf([5.0, 5.0, 5.0])
    assert curve.values.tolist() == [5.0]
    assert curve.fractions.tolist() == [1.0]


def test_cdf_reports_outage_and_undefined_separately():
    curve = empirical_cdf([1.0, 2.0, math.inf, math.nan])
    assert curve.outage_fraction == pytest.approx(0.25)
    assert curve.undefined_fraction == pytest.approx(0.25)
    assert curve.fractions.tolist() == [0.5, 1.0]
    assert curve.n_samples == 4


def test_cdf_is_scale_equivariant():
    rng = np.random.default_rng(2)
    data = rng.exponential(size=50)
    a = empirical_cdf(data)
    b = empirical_cdf(3.0 * data)
    assert np.allclose(b.values, 3.0 * a.values)
    assert np.array_equal(a.fractions, b.fractions)


def test_cdf_matches_direct_count():
    rng = np.random.default_rng(9)
    data = rng.integers(0, 20, size=200).astype(float)
    curve = empirical_cdf(data)
    for v, frac in zip(curve.values, curve.fractions):
        assert frac == pytest.approx(np.mean(data <= v))


def test_cdf_needs_samples():
    with pytest.raises(PreconditionError):
        empirical_cdf([])


def test_summary_statistics():
    summary = summarize([1.0, 2.0, 3.0, math.inf])
    assert summary.median == 2.0
    assert summary.mean == 2.0
    assert summary.outage_fraction == pytest.approx(0.25)
    assert summary.count == 4
    assert summarize([]).count == 0


# ---------------------------------------------------------------------------
# Cluster diagnostics
# ---------------------------------------------------------------------------

def test_cluster_diagnostics_perfect_match():
    scene, grid = _plane_grid()
    target = tuple(grid.point(4))
    result = interpolate(grid, target, RunConfig(d_th=1.0))
    truth = trace_paths(scene, TX, target, 2)
    assert cluster_diagnostics(result, truth, 1e-2) == (1.0, 1.0)


def test_cluster_diagnostics_empty_estimate():
    scene, grid = _plane_grid()
    truth = trace_paths(scene, TX, (4.0, 4.0, 1.5), 2)
    empty = InterpolationResult(target=(4.0, 4.0, 1.5), paths=(), clusters_considered=0, clusters_kept=0)
    assert cluster_diagnostics(empty, truth, 1e-2) == (1.0, 0.0)


# ---------------------------------------------------------------------------
# Runtime bookkeeping
# ---------------------------------------------------------------------------

def test_counting_tracer_is_thread_safe():
    tracer = CountingTracer()
    points = [(float(i), 1.0, 1.5) for i in range(40)]
    run_batch(lambda p: tracer(Scene(), (0.0, 0.0, 10.0), p), points, max_workers=4)
    assert tracer.calls == 40
    tracer.reset()
    assert tracer.calls == 0


def test_ledger_fit_recovers_exact_line():
    ledger = RuntimeLedger()
    for n in (8, 16, 32, 64):
        ledger.record("trace_scaling", n, n, 0.5 + 0.01 * n)
    fit = ledger.fit("trace_scaling")
    assert fit.slope == pytest.approx(0.01)
    assert fit.intercept == pytest.approx(0.5)
    assert fit.r_squared == pytest.approx(1.0)
    assert ledger.fit("trace_scaling", y="trace_calls").slope == pytest.approx(1.0)


def test_ledger_fit_needs_two_rows():
    ledger = RuntimeLedger()
    ledger.record("x", 1, 1, 1.0)
    with pytest.raises(PreconditionError):
        ledger.fit("x")


def test_ledger_measure_counts_calls():
    ledger = RuntimeLedger()
    tracer = CountingTracer()
    with ledger.measure("stage", 3, tracer):
        for i in range(3):
            tracer(Scene(), (0.0, 0.0, 10.0), (float(i), 1.0, 1.5))
    entry = ledger.stage("stage")[0]
    assert entry.trace_calls == 3 and entry.links == 3 and entry.seconds >= 0.0


def test_runtime_ledger_stages_in_free_space():
    # GIVEN a 3×3 reference lattice and small arrays
    points = generate_reference_layout((0.0, 0.0, 8.0, 8.0), 4.0, 1.5)
    config = RunConfig(array_rows=2, array_cols=2, d_th=6.0)

    # WHEN running the ledger
    ledger = runtime_ledger(Scene(), TX, points, [(1.0, 1.0, 1.5), (5.0, 3.0, 1.5)], config, link_counts=(4, 8, 16))

    # THEN the exhaustive stage traces every element pair and queries trace nothing
    assert ledger.stage("exhaustive")[0].trace_calls == 16
    assert [e.trace_calls for e in ledger.stage("trace_scaling")] == [4, 8, 16]
    assert ledger.stage("reference_grid")[0].trace_calls == 9
    assert ledger.stage("interpolation")[0].trace_calls == 0
    fit = ledger.fit("trace_scaling", y="trace_calls")
    assert fit.slope == pytest.approx(1.0)
    assert fit.r_squared == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# End-to-end evaluation
# ---------------------------------------------------------------------------

def test_initial_sector_azimuth_is_reproducible():
    assert initial_sector_azimuth(3) == initial_sector_azimuth(3)
    assert 0.0 <= initial_sector_azimuth(3) < 2 * math.pi


def test_scoring_the_truth_against_itself():
    # GIVEN estimates that are the traced truth at each target
    scene, grid = _plane_grid()
    config = RunConfig(array_rows=2, array_cols=2)
    targets = [(1.0, 2.0, 1.5), (6.5, 3.0, 1.5), (4.0, 7.0, 1.5)]
    estimates = [trace_paths(scene, TX, t, 2) for t in targets]

    # WHEN evaluating
    report = evaluate_targets(scene, grid, targets, estimates, config)

    # THEN power and RM capacity errors vanish
    assert report.power_errors == [0.0, 0.0, 0.0]
    assert report.capacity_errors("rm") == [0.0, 0.0, 0.0]
    assert all(r.recall == 1.0 and r.precision == 1.0 for r in report.records)
    assert all(0 <= r.sector <= 2 for r in report.records)
    summary = report.to_dict()
    assert summary["targets"] == 3
    assert set(summary["capacity_error"]) == set(MODELS)


def test_exhaustive_truth_model_runs():
    scene, grid = _plane_grid()
    config = RunConfig(array_rows=1, array_cols=2, truth_model="exhaustive")
    targets = [(3.0, 3.0, 1.5)]
    results = interpolate_many(grid, targets, config)
    report = evaluate_targets(scene, grid, targets, results, config, models=("rm",))
    assert len(report.capacity_errors("rm")) == 1
    assert report.capacity_errors("rm")[0] < 0.05


def test_unknown_model_is_rejected():
    scene, grid = _plane_grid()
    with pytest.raises(PreconditionError):
        evaluate_targets(scene, grid, [], [], RunConfig(), models=("bogus",))


def test_free_space_kernel_interpolation_is_near_exact():
    # GIVEN the free-space scenario on its default 4 m lattice
    spec = get_scenario("free_space")
    grid = spec.trace_grid(max_order=2)
    config = RunConfig()
    targets = spec.targets(60, seed=1)

    # WHEN interpolating and scoring
    results = interpolate_many(grid, targets, config)
    report = evaluate_targets(spec.scene, grid, targets, results, config, models=("rm", "pwa_nearest"))

    # THEN the received power and RM capacity are essentially exact
    assert summarize(report.power_errors).median < 0.1
    assert summarize(report.capacity_errors("rm")).median < 0.01
    assert summarize(report.capacity_errors("rm")).median <= summarize(report.capacity_errors("pwa_nearest")).median

"""End-to-end accuracy trends on the built-in scenarios."""

import inspect
import sys
from pathlib import Path

import pytest

ROOT_DIR = Path(inspect.getfile(inspect.currentframe())).resolve().parents[1]  # type: ignore[arg-type]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from rtinterp.config_manager import RunConfig  # noqa: E402
from rtinterp.evaluation import received_power_error, summarize  # noqa: E402
from rtinterp.geometry import trace_paths  # noqa: E402
from rtinterp.interpolation import interpolate_many  # noqa: E402
from rtinterp.scenarios import get_scenario  # noqa: E402

SPACINGS = (8.0, 4.0, 2.0)
METHODS = ("kernel", "average", "nearest")


def _median_power_errors(spec, targets, truths, spacings=SPACINGS, methods=METHODS):
    """Median received-power error in dB for every (spacing, method) pair."""
    out = {}
    for spacing in spacings:
        grid = spec.trace_grid(spacing=spacing)
        for method in methods:
            results = interpolate_many(grid, targets, RunConfig(method=method))
            errors = [received_power_error(truth, r.paths) for truth, r in zip(truths, results)]
            out[spacing, method] = summarize(errors).median
    return out


def _traced_targets(spec, count, seed):
    targets, truths = [], []
    for target in spec.targets(count, seed=seed):
        truth = trace_paths(spec.scene, spec.tx, target, 2)
        if truth.paths:
            targets.append(target)
            truths.append(truth)
    return targets, truths


def test_free_space_kernel_never_loses_to_baselines():
    spec = get_scenario("free_space")
    targets, truths = _traced_targets(spec, 30, seed=3)
    medians = _median_power_errors(spec, targets, truths, spacings=(8.0,))

    assert medians[8.0, "kernel"] <= medians[8.0, "nearest"] + 1e-9
    assert medians[8.0, "kernel"] <= medians[8.0, "average"] + 1e-9


def test_free_space_nearest_error_grows_with_spacing():
    spec = get_scenario("free_space")
    targets, truths = _traced_targets(spec, 30, seed=4)
    medians = _median_power_errors(spec, targets, truths, spacings=(8.0, 2.0), methods=("nearest",))
    assert medians[2.0, "nearest"] <= medians[8.0, "nearest"]


@pytest.fixture(scope="module", params=["most_los", "partial_los"])
def lattice_sweep(request):
    spec = get_scenario(request.param)
    targets, truths = _traced_targets(spec, 200, seed=0)
    assert len(targets) >= 180
    return _median_power_errors(spec, targets, truths)


@pytest.mark.slow
def test_kernel_is_never_worse_than_the_baselines(lattice_sweep):
    for spacing in SPACINGS:
        assert lattice_sweep[spacing, "kernel"] <= lattice_sweep[spacing, "nearest"] + 1e-9
        assert lattice_sweep[spacing, "kernel"] <= lattice_sweep[spacing, "average"] + 1e-9


@pytest.mark.slow
def test_fresnel_corrected_kernel_reproduces_planar_scenes(lattice_sweep):
    # facets are planar with constant reflection coefficients, so the
    # distance-corrected kernel average is exact at every spacing
    for spacing in SPACINGS:
        assert lattice_sweep[spacing, "kernel"] < 1e-3


@pytest.mark.slow
def test_nearest_error_shrinks_as_the_lattice_densifies(lattice_sweep):
    coarse, medium, fine = (lattice_sweep[s, "nearest"] for s in SPACINGS)
    assert coarse >= medium - 1e-9
    assert medium >= fine - 1e-9
    assert coarse - fine > 0.25

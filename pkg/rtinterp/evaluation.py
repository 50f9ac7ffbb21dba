"""Accuracy metrics, empirical CDFs and runtime bookkeeping.

* :func:`received_power_error` – absolute dB gap of total path power.
* :func:`spectral_efficiency` / :func:`capacity_error` – equal-power
  multi-stream rate from the singular values of ``H``, with a capped and
  scaled Shannon rate per stream.
* :func:`evaluate_targets` – traces the truth at every target and scores the
  interpolated paths under several channel models.
* :class:`RuntimeLedger` / :func:`runtime_ledger` – trace-call counts and wall
  time per stage, plus a linear fit of time against link count.
"""

from __future__ import annotations

import contextlib
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from rtinterp.batch_runner import run_batch
from rtinterp.config_manager import ChannelModel, Estimator, RunConfig
from rtinterp.errors import PreconditionError
from rtinterp.geometry import PathRecord, PathSet, Scene, trace_paths
from rtinterp.interpolation import STATUS_OK, InterpolationResult, interpolate
from rtinterp.mimo import (
    ArrayGeometry,
    ChannelMatrix,
    attach_transforms,
    build_sectors,
    build_upa,
    channel_matrix,
    channel_matrix_exhaustive,
    constant_channel,
    facing_orientation,
    select_best_sector,
)
from rtinterp.pathdata_io import ReferenceGrid
from rtinterp.reflection_model import path_transform

__all__ = [
    "THERMAL_NOISE_DBM_HZ",
    "MODELS",
    "LinkBudget",
    "CdfCurve",
    "Summary",
    "TargetEvaluation",
    "EvaluationReport",
    "LedgerEntry",
    "LinearFit",
    "RuntimeLedger",
    "CountingTracer",
    "received_power_error",
    "spectral_efficiency",
    "capacity_error",
    "empirical_cdf",
    "summarize",
    "cluster_diagnostics",
    "initial_sector_azimuth",
    "evaluate_targets",
    "runtime_ledger",
]

_log = logging.getLogger(__name__)

THERMAL_NOISE_DBM_HZ = -174.0
#: Channel models scored by :func:`evaluate_targets`.
MODELS: Tuple[str, ...] = ("rm", "pwa", "pwa_nearest", "pwa_traced", "constant")


# ---------------------------------------------------------------------------
# Link budget & rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkBudget:
    tx_power_dbm: float = 23.0
    noise_figure_db: float = 3.0
    bandwidth: float = 400e6
    alpha: float = 0.6
    rho_max: float = 4.8

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise PreconditionError("bandwidth must be > 0")

    @classmethod
    def from_config(cls, config: RunConfig) -> "LinkBudget":
        return cls(
            tx_power_dbm=config.tx_power_dbm,
            noise_figure_db=config.noise_figure_db,
            bandwidth=config.bandwidth,
            alpha=config.se_alpha,
            rho_max=config.se_rho_max,
        )

    @property
    def noise_psd_dbm_hz(self) -> float:
        return THERMAL_NOISE_DBM_HZ + self.noise_figure_db

    @property
    def noise_power_dbm(self) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth)

    def stream_rate(self, gamma):
        """``min(α·log₂(1+γ), ρ_max)`` in bps/Hz."""
        return np.minimum(self.alpha * np.log2(1.0 + np.asarray(gamma, dtype=float)), self.rho_max)


def received_power_error(true_paths, est_paths) -> float:
    """``|10 log10 Σ|g|² − 10 log10 Σ|ĝ|²|`` in dB; ``inf`` when the estimate is empty."""
    true_power = sum(abs(p.gain) ** 2 for p in _records(true_paths))
    if true_power <= 0.0:
        raise PreconditionError("true path set carries no power")
    est_power = sum(abs(p.gain) ** 2 for p in _records(est_paths))
    if est_power <= 0.0:
        return math.inf
    return abs(10.0 * math.log10(true_power) - 10.0 * math.log10(est_power))


def spectral_efficiency(H: Union[ChannelMatrix, np.ndarray], budget: LinkBudget) -> float:
    """Best equal-power multi-stream rate over ``k = 1..rank(H)``."""
    entries = np.asarray(getattr(H, "entries", H), dtype=complex)
    if not np.all(np.isfinite(entries)):
        raise PreconditionError("channel matrix has non-finite entries")
    if entries.size == 0 or not np.any(entries):
        return 0.0
    s = np.linalg.svd(entries, compute_uv=False)
    s = s[s >= 1e-12 * s[0]]
    p_tx = 10.0 ** (budget.tx_power_dbm / 10.0)
    noise = 10.0 ** (budget.noise_power_dbm / 10.0)
    best = 0.0
    for k in range(1, len(s) + 1):
        gammas = s[:k] ** 2 * p_tx / (noise * k)
        best = max(best, float(np.sum(budget.stream_rate(gammas))))
    return best


def capacity_error(H_est, H_true, budget: LinkBudget) -> float:
    """``|SE_est − SE_true| / SE_true``; ``nan`` when the true rate is zero."""
    se_true = spectral_efficiency(H_true, budget)
    if se_true <= 0.0:
        return math.nan
    return abs(spectral_efficiency(H_est, budget) - se_true) / se_true


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CdfCurve:
    """Empirical CDF of the finite samples; misses are reported separately.

    ``outage_fraction`` counts ``+inf`` samples, ``undefined_fraction`` NaNs,
    both relative to all samples.
    """

    values: np.ndarray
    fractions: np.ndarray
    outage_fraction: float = 0.0
    undefined_fraction: float = 0.0
    n_samples: int = 0

    def quantile(self, q: float) -> float:
        if len(self.values) == 0:
            return math.nan
        idx = int(np.searchsorted(self.fractions, q - 1e-12, side="left"))
        return float(self.values[min(idx, len(self.values) - 1)])

    @property
    def median(self) -> float:
        return self.quantile(0.5)


def empirical_cdf(samples: Sequence[float]) -> CdfCurve:
    data = np.asarray(list(samples), dtype=float)
    if data.size == 0:
        raise PreconditionError("empirical_cdf needs at least one sample")
    finite = data[np.isfinite(data)]
    outage = float(np.count_nonzero(np.isposinf(data))) / data.size
    undefined = float(np.count_nonzero(np.isnan(data))) / data.size
    if finite.size == 0:
        return CdfCurve(np.zeros(0), np.zeros(0), outage, undefined, int(data.size))
    values, counts = np.unique(finite, return_counts=True)
    fractions = np.cumsum(counts) / finite.size
    return CdfCurve(values, fractions, outage, undefined, int(data.size))


@dataclass(frozen=True)
class Summary:
    median: float
    p90: float
    mean: float
    outage_fraction: float
    count: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "median": self.median,
            "p90": self.p90,
            "mean": self.mean,
            "outage_fraction": self.outage_fraction,
            "count": self.count,
        }


def summarize(samples: Sequence[float]) -> Summary:
    """Median / P90 / mean of the finite samples plus the ``+inf`` share."""
    data = np.asarray(list(samples), dtype=float)
    if data.size == 0:
        return Summary(math.nan, math.nan, math.nan, 0.0, 0)
    finite = data[np.isfinite(data)]
    outage = float(np.count_nonzero(np.isposinf(data))) / data.size
    if finite.size == 0:
        return Summary(math.nan, math.nan, math.nan, outage, int(data.size))
    return Summary(
        median=float(np.median(finite)),
        p90=float(np.percentile(finite, 90)),
        mean=float(np.mean(finite)),
        outage_fraction=outage,
        count=int(data.size),
    )


# ---------------------------------------------------------------------------
# Cluster identification
# ---------------------------------------------------------------------------

def _records(paths) -> Tuple[PathRecord, ...]:
    if isinstance(paths, (PathSet, InterpolationResult)):
        return tuple(paths.paths)
    return tuple(paths)


def cluster_diagnostics(result: InterpolationResult, true_paths: PathSet, epsilon: float) -> Tuple[float, float]:
    """(precision, recall) of the kept paths against the truth, matched by image point.

    Matching is one-to-one, closest pairs first.  Precision is 1 when nothing
    was kept and recall is 1 when the truth has no path.
    """
    tx = np.asarray(true_paths.tx, dtype=float)
    est = [p.transform.apply(tx) for p in result.paths if p.transform is not None]
    truth = [path_transform(p, true_paths.tx, true_paths.rx).apply(tx) for p in true_paths.paths]
    if not est or not truth:
        return (1.0 if not est else 0.0, 1.0 if not truth else 0.0)
    dists = np.linalg.norm(np.asarray(est)[:, None, :] - np.asarray(truth)[None, :, :], axis=-1)
    used_est, used_true = set(), set()
    matched = 0
    for flat in np.argsort(dists, axis=None, kind="stable"):
        i, j = np.unravel_index(flat, dists.shape)
        if dists[i, j] > epsilon:
            break
        if i in used_est or j in used_true:
            continue
        used_est.add(i)
        used_true.add(j)
        matched += 1
    return matched / len(est), matched / len(truth)


# ---------------------------------------------------------------------------
# Runtime ledger
# ---------------------------------------------------------------------------

class CountingTracer:
    """Thread-safe wrapper around :func:`trace_paths` that counts calls."""

    def __init__(self, tracer=trace_paths) -> None:
        self._tracer = tracer
        self._calls = 0
        self._lock = threading.Lock()

    def __call__(self, scene: Scene, tx, rx, max_order=None, **kwargs) -> PathSet:
        with self._lock:
            self._calls += 1
        return self._tracer(scene, tx, rx, max_order, **kwargs)

    @property
    def calls(self) -> int:
        return self._calls

    def reset(self) -> None:
        with self._lock:
            self._calls = 0


@dataclass(frozen=True)
class LedgerEntry:
    stage: str
    links: int
    trace_calls: int
    seconds: float


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass
class RuntimeLedger:
    entries: List[LedgerEntry] = field(default_factory=list)

    def record(self, stage: str, links: int, trace_calls: int, seconds: float) -> LedgerEntry:
        entry = LedgerEntry(stage, int(links), int(trace_calls), float(seconds))
        self.entries.append(entry)
        return entry

    @contextlib.contextmanager
    def measure(self, stage: str, links: int, tracer: Optional[CountingTracer] = None) -> Iterator[None]:
        """Time the enclosed block and record the tracer calls it made."""
        before = tracer.calls if tracer is not None else 0
        start = time.perf_counter()
        yield
        elapsed = time.perf_counter() - start
        calls = (tracer.calls - before) if tracer is not None else 0
        self.record(stage, links, calls, elapsed)

    def stage(self, name: str) -> List[LedgerEntry]:
        return [e for e in self.entries if e.stage == name]

    def fit(self, stage: Optional[str] = None, *, y: str = "seconds") -> LinearFit:
        """Least-squares line of *y* (``seconds`` or ``trace_calls``) against links."""
        rows = self.entries if stage is None else self.stage(stage)
        if len(rows) < 2:
            raise PreconditionError("a linear fit needs at least two ledger entries")
        x = np.array([e.links for e in rows], dtype=float)
        values = np.array([getattr(e, y) for e in rows], dtype=float)
        slope, intercept = np.polyfit(x, values, 1)
        residual = values - (slope * x + intercept)
        total = np.sum((values - values.mean()) ** 2)
        r2 = 1.0 - float(np.sum(residual**2)) / float(total) if total > 0 else 1.0
        return LinearFit(float(slope), float(intercept), r2)

    def to_rows(self) -> List[Dict[str, object]]:
        return [e.__dict__.copy() for e in self.entries]


def runtime_ledger(
    scene: Scene,
    tx,
    reference_points: Sequence[Sequence[float]],
    targets: Sequence[Sequence[float]],
    config: RunConfig,
    *,
    link_counts: Sequence[int] = (),
    exhaustive: bool = True,
) -> RuntimeLedger:
    """Measure the three stages: exhaustive MIMO, reference tracing, interpolation queries.

    ``link_counts`` adds ``trace_scaling`` rows that trace the first *n*
    reference links, which is what the linear-scaling fit uses.
    """
    ledger = RuntimeLedger()
    tracer = CountingTracer()
    order = config.max_order
    f_c = config.carrier_frequency

    if exhaustive:
        tx_arr = build_upa(config.array_rows, config.array_cols, config.array_spacing, tx)
        rx_center = reference_points[0]
        rx_arr = build_upa(config.array_rows, config.array_cols, config.array_spacing, rx_center,
                           *facing_orientation(rx_center, tx))
        with ledger.measure("exhaustive", len(tx_arr) * len(rx_arr), tracer):
            channel_matrix_exhaustive(scene, tx_arr, rx_arr, f_c=f_c, max_order=order, tracer=tracer)

    for n in link_counts:
        with ledger.measure("trace_scaling", n, tracer):
            for i in range(n):
                tracer(scene, tx, reference_points[i % len(reference_points)], order, carrier_frequency=f_c)

    path_sets = []
    with ledger.measure("reference_grid", len(reference_points), tracer):
        for point in reference_points:
            path_sets.append(tracer(scene, tx, point, order, carrier_frequency=f_c))
    grid = ReferenceGrid.from_path_sets(tx, path_sets)

    with ledger.measure("interpolation", len(targets), tracer):
        for target in targets:
            try:
                interpolate(grid, target, config)
            except Exception as exc:  # noqa: BLE001 – timing only, failures are irrelevant here
                _log.debug("bench target %s failed: %s", target, exc)
    return ledger


# ---------------------------------------------------------------------------
# Per-target evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetEvaluation:
    target: Tuple[float, float, float]
    status: str
    true_path_count: int
    est_path_count: int
    power_error: float
    capacity_errors: Dict[str, float]
    precision: float
    recall: float
    sector: int = 0


@dataclass(frozen=True)
class EvaluationReport:
    records: Tuple[TargetEvaluation, ...]
    models: Tuple[str, ...]

    @property
    def power_errors(self) -> List[float]:
        return [r.power_error for r in self.records if not math.isnan(r.power_error)]

    def capacity_errors(self, model: str) -> List[float]:
        return [r.capacity_errors[model] for r in self.records if model in r.capacity_errors]

    def to_dict(self) -> Dict[str, object]:
        recalls = [r.recall for r in self.records]
        precisions = [r.precision for r in self.records]
        return {
            "targets": len(self.records),
            "no_neighbors": sum(1 for r in self.records if r.status != STATUS_OK),
            "power_error_db": summarize(self.power_errors).to_dict(),
            "capacity_error": {m: summarize(self.capacity_errors(m)).to_dict() for m in self.models},
            "cluster_precision_mean": float(np.mean(precisions)) if precisions else math.nan,
            "cluster_recall_mean": float(np.mean(recalls)) if recalls else math.nan,
        }


def initial_sector_azimuth(seed: int) -> float:
    """Random initial sector orientation, reproducible from the run seed."""
    return float(np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi))


def _as_result(estimate, target) -> InterpolationResult:
    if isinstance(estimate, InterpolationResult):
        return estimate
    paths = attach_transforms(estimate).paths if isinstance(estimate, PathSet) else tuple(estimate)
    return InterpolationResult(
        target=tuple(float(c) for c in target),
        paths=paths,
        clusters_considered=len(paths),
        clusters_kept=len(paths),
    )


def _nearest_paths(grid: ReferenceGrid, target) -> Tuple[PathSet, Tuple[float, float, float]]:
    q = grid.nearest(target)
    ref = attach_transforms(grid.path_set(q))
    return ref, ref.rx


def evaluate_targets(
    scene: Scene,
    grid: ReferenceGrid,
    targets: Sequence[Sequence[float]],
    estimates: Sequence[Union[InterpolationResult, PathSet]],
    config: RunConfig,
    *,
    models: Sequence[str] = MODELS,
    tracer=trace_paths,
    threads: Optional[int] = None,
) -> EvaluationReport:
    """Score each estimate against the paths traced at its target.

    The truth channel (``config.truth_model``) picks the strongest of three
    transmit sectors; every estimated channel is then built for that sector
    and a receive array facing the transmitter.
    """
    if len(targets) != len(estimates):
        raise PreconditionError("targets and estimates must have equal length")
    unknown = set(models) - set(MODELS)
    if unknown:
        raise PreconditionError(f"unknown evaluation models {sorted(unknown)}")
    budget = LinkBudget.from_config(config)
    tx = np.asarray(grid.tx, dtype=float)
    sectors = build_sectors(
        tx,
        config.array_rows,
        config.array_cols,
        config.array_spacing,
        initial_sector_azimuth(config.seed),
        math.radians(config.tx_elevation_deg),
    )
    f_c = config.carrier_frequency

    def evaluate_one(index: int) -> TargetEvaluation:
        target = np.asarray(targets[index], dtype=float)
        estimate = _as_result(estimates[index], target)
        truth = attach_transforms(tracer(scene, tx, target, config.max_order, carrier_frequency=f_c))
        rx_array = build_upa(
            config.array_rows, config.array_cols, config.array_spacing, target, *facing_orientation(target, tx)
        )

        power_error = received_power_error(truth, estimate.paths) if truth.paths else math.nan
        if config.truth_model is ChannelModel.EXHAUSTIVE:
            sector, H_true = select_best_sector(
                sectors,
                truth,
                rx_array,
                f_c=f_c,
                channel_fn=lambda arr: channel_matrix_exhaustive(
                    scene, arr, rx_array, f_c=f_c, max_order=config.max_order, reference_paths=truth
                ),
            )
        else:
            sector, H_true = select_best_sector(sectors, truth, rx_array, f_c=f_c, model=ChannelModel.RM)
        tx_array = sectors[sector]

        errors: Dict[str, float] = {}
        for name in models:
            if name == "rm":
                H = channel_matrix(estimate.paths, tx_array, rx_array, f_c=f_c, model=ChannelModel.RM)
            elif name == "pwa":
                H = channel_matrix(
                    estimate.paths, tx_array, rx_array, f_c=f_c, model=ChannelModel.PWA,
                    tx_ref=tx, rx_ref=estimate.reference_point,
                )
            elif name == "pwa_nearest":
                ref_paths, ref_point = _nearest_paths(grid, target)
                H = channel_matrix(ref_paths, tx_array, rx_array, f_c=f_c, model=ChannelModel.PWA,
                                   tx_ref=tx, rx_ref=ref_point)
            elif name == "pwa_traced":
                H = channel_matrix(truth, tx_array, rx_array, f_c=f_c, model=ChannelModel.PWA, tx_ref=tx, rx_ref=target)
            else:
                H = constant_channel(estimate.paths, tx_array, rx_array)
            errors[name] = capacity_error(H, H_true, budget)

        precision, recall = cluster_diagnostics(estimate, truth, config.cluster_epsilon)
        if recall < 1.0:
            _log.debug("target %s: cluster recall %.2f", tuple(target), recall)
        return TargetEvaluation(
            target=(float(target[0]), float(target[1]), float(target[2])),
            status=estimate.status,
            true_path_count=len(truth),
            est_path_count=len(estimate.paths),
            power_error=power_error,
            capacity_errors=errors,
            precision=precision,
            recall=recall,
            sector=sector,
        )

    workers = config.threads if threads is None else threads
    outcomes = run_batch(evaluate_one, range(len(targets)), max_workers=workers, recoverable=())
    records = tuple(o.value for o in outcomes)
    _log.info(
        "Evaluated %d targets (method=%s, median power error %.3f dB)",
        len(records),
        config.method.value if isinstance(config.method, Estimator) else config.method,
        summarize([r.power_error for r in records if not math.isnan(r.power_error)]).median,
    )
    return EvaluationReport(records=records, models=tuple(models))

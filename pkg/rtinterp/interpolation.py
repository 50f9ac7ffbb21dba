"""Path-parameter interpolation at arbitrary target points.

Pipeline per target::

    select_neighbors → cluster_paths → cluster_probability → filter_clusters
        → interpolate_gain + reconstruct_params   (per kept cluster)

Paths from neighbouring reference points that share one mirror-image source
are taken to be the same physical path.  Each cluster is scored by the
kernel-weighted share of the neighbourhood that sees it; clusters scoring at
least ``p_th`` are kept and their delay and angles are recomputed exactly
from the image point, while the complex gain is a kernel-weighted average of
the member gains.

Three estimators share this entry point (:class:`rtinterp.config_manager.Estimator`):
``kernel`` (RBF weights), ``average`` (uniform weights) and ``nearest``
(copy the closest reference).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from rtinterp.batch_runner import run_batch
from rtinterp.config_manager import SPEED_OF_LIGHT, Estimator, GainCorrection, RunConfig
from rtinterp.errors import (
    DegenerateGeometryError,
    InconsistentRouteError,
    NoNeighborsError,
    PreconditionError,
)
from rtinterp.geometry import PathRecord, PathSet, Point3, direction_angles
from rtinterp.pathdata_io import ReferenceGrid
from rtinterp.reflection_model import ImagePoint, ImageTransform, path_transform, unfold_route

__all__ = [
    "STATUS_OK",
    "STATUS_NO_NEIGHBORS",
    "Neighborhood",
    "ClusterMember",
    "PathCluster",
    "InterpolationResult",
    "rbf_kernel",
    "select_neighbors",
    "cluster_paths",
    "cluster_probability",
    "filter_clusters",
    "interpolate_gain",
    "reconstruct_params",
    "interpolate",
    "interpolate_many",
]

_log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_NO_NEIGHBORS = "no_neighbors"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Neighborhood:
    """Reference indices within ``d_th`` of a target, with their positions.

    Iterating yields the indices, so it can be used wherever an index set is
    expected.
    """

    indices: Tuple[int, ...]
    points: np.ndarray
    d_th: float

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, q: object) -> bool:
        return q in self.indices

    def position(self, q: int) -> np.ndarray:
        return self.points[self.indices.index(q)]


@dataclass(frozen=True, eq=False)
class ClusterMember:
    """One reference path inside a cluster.

    ``reference_distance`` is the image distance ``‖x_q − z_{q,ℓ}‖``, i.e.
    the unfolded length of the path at its reference point.
    """

    reference_index: int
    path_index: int
    gain: complex
    reference_distance: float
    reference_point: np.ndarray
    image_point: np.ndarray
    path: PathRecord


@dataclass(frozen=True, eq=False)
class PathCluster:
    image_point: np.ndarray
    transform: ImageTransform
    members: Tuple[ClusterMember, ...]
    probability: Optional[float] = None

    @property
    def reference_indices(self) -> Tuple[int, ...]:
        return tuple(m.reference_index for m in self.members)

    def with_probability(self, p: float) -> "PathCluster":
        return replace(self, probability=float(p))


@dataclass(frozen=True, eq=False)
class InterpolationResult:
    target: Point3
    paths: Tuple[PathRecord, ...]
    clusters_considered: int
    clusters_kept: int
    probabilities: Tuple[float, ...] = ()
    clusters: Tuple[PathCluster, ...] = ()
    estimator: Estimator = Estimator.KERNEL
    status: str = STATUS_OK
    #: Point the PWA model should linearise around (the target unless ``nearest``).
    linearization_point: Optional[Point3] = None
    neighbors: Tuple[int, ...] = field(default=())

    def path_set(self, tx) -> PathSet:
        return PathSet(tx=tx, rx=self.target, paths=self.paths)

    @property
    def reference_point(self) -> Point3:
        return self.linearization_point if self.linearization_point is not None else self.target


# ---------------------------------------------------------------------------
# Kernel & neighbourhood
# ---------------------------------------------------------------------------

def rbf_kernel(d, sigma: float):
    """``exp(−d² / (2σ²))``; works element-wise on arrays."""
    if not sigma > 0:
        raise PreconditionError(f"sigma must be > 0, got {sigma!r}")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise PreconditionError("kernel distances must be non-negative")
    out = np.exp(-(d_arr**2) / (2.0 * sigma**2))
    return float(out) if out.ndim == 0 else out


def _weights(distances: np.ndarray, sigma: float, uniform: bool) -> np.ndarray:
    """Kernel weights rescaled so the largest is 1 (ratios are unchanged, no underflow)."""
    d = np.asarray(distances, dtype=float)
    if uniform:
        return np.ones_like(d)
    return np.exp(-(d**2 - np.min(d) ** 2) / (2.0 * sigma**2))


def select_neighbors(grid: ReferenceGrid, target, d_th: float) -> Neighborhood:
    """References strictly closer than *d_th*; raises :class:`NoNeighborsError` if none."""
    if not d_th > 0:
        raise PreconditionError(f"d_th must be > 0, got {d_th!r}")
    indices = grid.within(target, d_th)
    if not indices:
        raise NoNeighborsError(target, d_th)
    return Neighborhood(indices=tuple(indices), points=grid.points[indices].copy(), d_th=float(d_th))


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

def cluster_paths(grid: ReferenceGrid, neighbors: Neighborhood, epsilon: float) -> List[PathCluster]:
    """Single-linkage grouping of image points with link distance ≤ *epsilon*.

    Chains of close image points merge even when their ends are further than
    *epsilon* apart.  A reference contributes at most one member per cluster
    (the stronger path wins, lower path index on ties).
    """
    tx = np.asarray(grid.tx, dtype=float)
    entries: List[Tuple[int, int, PathRecord, ImagePoint]] = []
    for q in neighbors:
        x_q = grid.point(q)
        for ell, path in enumerate(grid.path_set(q).paths):
            try:
                transform = path_transform(path, tx, x_q)
            except (DegenerateGeometryError, InconsistentRouteError) as exc:
                _log.warning("Skipping path %d at reference %d: %s", ell, q, exc)
                continue
            entries.append((q, ell, path, transform.image_point(tx)))
    if not entries:
        return []

    images = np.vstack([e[3].z for e in entries])
    pairs = cKDTree(images).query_pairs(epsilon, output_type="ndarray")
    n = len(entries)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    grouped: Dict[int, Dict[int, int]] = {}
    for idx, label in enumerate(labels):
        q, ell, path = entries[idx][0], entries[idx][1], entries[idx][2]
        per_ref = grouped.setdefault(int(label), {})
        current = per_ref.get(q)
        if current is None or abs(path.gain) > abs(entries[current][2].gain):
            per_ref[q] = idx

    clusters: List[PathCluster] = []
    for per_ref in grouped.values():
        members = []
        for idx in sorted(per_ref.values(), key=lambda i: (entries[i][0], entries[i][1])):
            q, ell, path, image = entries[idx]
            z = image.z
            x_q = grid.point(q)
            members.append(
                ClusterMember(
                    reference_index=q,
                    path_index=ell,
                    gain=path.gain,
                    reference_distance=float(np.linalg.norm(x_q - z)),
                    reference_point=x_q.copy(),
                    image_point=z,
                    path=path,
                )
            )
        first = per_ref[members[0].reference_index]
        centroid = np.mean([m.image_point for m in members], axis=0)
        transform = entries[first][3].source_transform
        clusters.append(PathCluster(image_point=centroid, transform=transform, members=tuple(members)))

    clusters.sort(key=lambda c: (c.members[0].reference_index, c.members[0].path_index))
    return clusters


def cluster_probability(
    cluster: PathCluster, neighbors: Neighborhood, target, sigma: float, *, uniform: bool = False
) -> float:
    """Kernel mass of the cluster's references over that of the whole neighbourhood."""
    if len(neighbors) == 0:
        raise PreconditionError("empty neighbourhood")
    t = np.asarray(target, dtype=float)
    dists = np.linalg.norm(neighbors.points - t, axis=1)
    weights = _weights(dists, sigma, uniform)
    members = set(cluster.reference_indices)
    mask = np.array([q in members for q in neighbors.indices])
    p = float(np.sum(weights[mask]) / np.sum(weights))
    return min(1.0, max(0.0, p))


def filter_clusters(clusters: Sequence[PathCluster], p_th: float) -> List[PathCluster]:
    """Keep clusters with ``probability >= p_th``."""
    if not 0.0 < p_th < 1.0:
        raise PreconditionError(f"p_th must lie in (0, 1), got {p_th!r}")
    kept = []
    for c in clusters:
        if c.probability is None:
            raise PreconditionError("cluster has no probability; call cluster_probability first")
        if c.probability >= p_th:
            kept.append(c)
    return kept


# ---------------------------------------------------------------------------
# Per-cluster reconstruction
# ---------------------------------------------------------------------------

def interpolate_gain(
    cluster: PathCluster,
    target,
    sigma: float,
    mode: GainCorrection | str = GainCorrection.FRESNEL_CORRECTED,
    *,
    wavelength: float = SPEED_OF_LIGHT / 28e9,
    uniform: bool = False,
) -> complex:
    """Weighted average of member gains, normalised over the cluster's own members.

    With ``fresnel_corrected`` each gain is first de-embedded along its image
    distance (``g · d · e^{+j2πd/λ}``) and the average re-embedded at the
    target's image distance.
    """
    if not cluster.members:
        raise PreconditionError("cannot interpolate an empty cluster")
    mode = GainCorrection(mode)
    t = np.asarray(target, dtype=float)
    dists = np.array([np.linalg.norm(t - m.reference_point) for m in cluster.members])
    weights = _weights(dists, sigma, uniform)
    gains = np.array([m.gain for m in cluster.members], dtype=complex)

    if mode is GainCorrection.RAW:
        return complex(np.sum(weights * gains) / np.sum(weights))

    d_img = np.array([m.reference_distance for m in cluster.members])
    normalised = gains * d_img * np.exp(2j * math.pi * d_img / wavelength)
    mean = np.sum(weights * normalised) / np.sum(weights)
    d_target = float(np.linalg.norm(t - cluster.image_point))
    if d_target == 0.0:
        raise DegenerateGeometryError("target coincides with the cluster image point")
    return complex(mean / d_target * np.exp(-2j * math.pi * d_target / wavelength))


def reconstruct_params(
    cluster: PathCluster,
    target,
    tx,
    *,
    gain: complex,
    speed_of_light: float = SPEED_OF_LIGHT,
) -> PathRecord:
    """Delay and angles at *target* from the cluster image point; *gain* is attached as-is."""
    t = np.asarray(target, dtype=float)
    z = np.asarray(cluster.image_point, dtype=float)
    offset = t - z
    distance = float(np.linalg.norm(offset))
    if distance == 0.0:
        raise DegenerateGeometryError("target coincides with the cluster image point")

    aoa_az, aoa_zen = direction_angles(-offset)
    aod_az, aod_zen = direction_angles(cluster.transform.U.T @ (offset / distance))
    if cluster.transform.order:
        points = tuple(
            (float(p[0]), float(p[1]), float(p[2])) for p in unfold_route(cluster.transform, tx, t)
        )
    else:
        points = ()
    facet_ids = cluster.members[0].path.facet_ids
    if len(facet_ids) != len(points):
        facet_ids = (-1,) * len(points)
    return PathRecord(
        gain=complex(gain),
        delay=distance / speed_of_light,
        aoa_az=aoa_az,
        aoa_zen=aoa_zen,
        aod_az=aod_az,
        aod_zen=aod_zen,
        reflection_points=points,
        facet_ids=facet_ids,
        transform=cluster.transform,
    )


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _dedupe_facet_ids(paths: List[PathRecord]) -> List[PathRecord]:
    seen = set()
    out = []
    for p in paths:
        known = bool(p.facet_ids) and min(p.facet_ids) >= 0
        if known and p.facet_ids in seen:
            p = replace(p, facet_ids=(-1,) * len(p.facet_ids))
        elif known:
            seen.add(p.facet_ids)
        out.append(p)
    return out


def _nearest(grid: ReferenceGrid, target, neighbors: Neighborhood) -> InterpolationResult:
    t = np.asarray(target, dtype=float)
    dists = np.linalg.norm(neighbors.points - t, axis=1)
    q = neighbors.indices[int(np.argmin(dists))]
    x_q = grid.point(q)
    tx = np.asarray(grid.tx, dtype=float)
    paths = []
    for path in grid.path_set(q).paths:
        try:
            paths.append(replace(path, transform=path_transform(path, tx, x_q)))
        except (DegenerateGeometryError, InconsistentRouteError) as exc:
            _log.warning("Skipping path at reference %d: %s", q, exc)
    return InterpolationResult(
        target=tuple(float(c) for c in t),
        paths=tuple(paths),
        clusters_considered=len(paths),
        clusters_kept=len(paths),
        probabilities=(1.0,) * len(paths),
        estimator=Estimator.NEAREST,
        linearization_point=tuple(float(c) for c in x_q),
        neighbors=(q,),
    )


def interpolate(grid: ReferenceGrid, target, config: RunConfig) -> InterpolationResult:
    """Estimate the :class:`PathSet` at *target* from the reference grid.

    Raises :class:`NoNeighborsError` when no reference lies within ``d_th``.
    Zero kept clusters is a legal (outage) result.
    """
    if len(grid) == 0:
        raise PreconditionError("reference grid is empty")
    t = np.asarray(target, dtype=float).reshape(3)
    d_th = config.neighbor_radius(grid.grid_spacing_hint)
    neighbors = select_neighbors(grid, t, d_th)
    if config.method is Estimator.NEAREST:
        return _nearest(grid, t, neighbors)

    uniform = config.method is Estimator.AVERAGE
    clusters = [
        c.with_probability(cluster_probability(c, neighbors, t, config.sigma, uniform=uniform))
        for c in cluster_paths(grid, neighbors, config.cluster_epsilon)
    ]
    kept = filter_clusters(clusters, config.p_th)

    paths: List[PathRecord] = []
    survivors: List[PathCluster] = []
    for cluster in kept:
        try:
            gain = interpolate_gain(
                cluster,
                t,
                config.sigma,
                config.gain_correction_mode,
                wavelength=config.wavelength,
                uniform=uniform,
            )
            paths.append(reconstruct_params(cluster, t, grid.tx, gain=gain))
        except DegenerateGeometryError as exc:
            _log.warning("Dropping cluster at target %s: %s", tuple(t), exc)
            continue
        survivors.append(cluster)

    order = sorted(range(len(paths)), key=lambda i: (paths[i].delay, paths[i].facet_ids))
    paths = _dedupe_facet_ids([paths[i] for i in order])
    survivors = [survivors[i] for i in order]
    _log.debug("target %s: K=%d K'=%d", tuple(t), len(clusters), len(paths))
    return InterpolationResult(
        target=(float(t[0]), float(t[1]), float(t[2])),
        paths=tuple(paths),
        clusters_considered=len(clusters),
        clusters_kept=len(paths),
        probabilities=tuple(c.probability for c in clusters if c.probability is not None),
        clusters=tuple(survivors),
        estimator=config.method,
        neighbors=neighbors.indices,
    )


def interpolate_many(
    grid: ReferenceGrid,
    targets: Sequence[Sequence[float]],
    config: RunConfig,
    threads: Optional[int] = None,
) -> List[InterpolationResult]:
    """Interpolate every target; a target without neighbours yields an empty ``no_neighbors`` result."""
    workers = config.threads if threads is None else threads
    outcomes = run_batch(
        lambda target: interpolate(grid, target, config),
        list(targets),
        max_workers=workers,
        recoverable=(NoNeighborsError,),
    )
    results = []
    for outcome in outcomes:
        if outcome.ok:
            results.append(outcome.value)
        else:
            point = tuple(float(c) for c in outcome.item)
            results.append(
                InterpolationResult(
                    target=point,
                    paths=(),
                    clusters_considered=0,
                    clusters_kept=0,
                    estimator=config.method,
                    status=STATUS_NO_NEIGHBORS,
                )
            )
    _log.info(
        "Interpolated %d targets (%d without neighbours)",
        len(results),
        sum(1 for r in results if r.status == STATUS_NO_NEIGHBORS),
    )
    return results

"""Array geometry and MIMO channel synthesis.

Every entry of the ``N_rx × N_tx`` matrix is a sum over paths::

    H_mn(f) = Σ_ℓ g_ℓ · exp[j2π(τ_ℓ f_c − f d_ℓ,mn / c)]

where ``d_ℓ,mn`` is the path length between transmit element *n* and receive
element *m*.  Three distance models are offered:

``pwa``
    first-order expansion around the reference points (plane waves); every
    single-path matrix is rank one.
``rm``
    the exact image distance ``‖x_rx − (U x_tx + g)‖`` of the path's
    reflection transform, which keeps the spherical wavefront.
``exhaustive``
    trace every element pair.  Only used as ground truth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from rtinterp.batch_runner import run_batch
from rtinterp.config_manager import SPEED_OF_LIGHT, ChannelModel
from rtinterp.errors import ContractViolation, PreconditionError
from rtinterp.geometry import PathRecord, PathSet, Scene, trace_paths, unit_from_angles
from rtinterp.reflection_model import path_transform, rm_distances

__all__ = [
    "ArrayGeometry",
    "ChannelMatrix",
    "build_upa",
    "build_sectors",
    "facing_orientation",
    "attach_transforms",
    "pwa_direction_vectors",
    "pwa_distance",
    "channel_matrix",
    "channel_matrix_exhaustive",
    "constant_channel",
    "select_best_sector",
]

_log = logging.getLogger(__name__)

PathsLike = Union[PathSet, Sequence[PathRecord]]
Tracer = Callable[..., PathSet]


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Uniform planar array; ``element_positions`` is ``(rows·cols, 3)``, row-major."""

    element_positions: np.ndarray
    center: np.ndarray
    azimuth: float
    elevation: float
    rows: int
    cols: int
    spacing: float

    def __len__(self) -> int:
        return len(self.element_positions)

    @property
    def broadside(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return np.array([ce * math.cos(self.azimuth), ce * math.sin(self.azimuth), math.sin(self.elevation)])

    @property
    def aperture(self) -> Tuple[float, float]:
        return ((self.cols - 1) * self.spacing, (self.rows - 1) * self.spacing)


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    entries: np.ndarray
    frequency: float
    model: str = ChannelModel.RM.value
    trace_calls: int = 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape  # type: ignore[return-value]

    @property
    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def __add__(self, other: "ChannelMatrix") -> "ChannelMatrix":
        return ChannelMatrix(self.entries + other.entries, self.frequency, self.model, self.trace_calls + other.trace_calls)


# ---------------------------------------------------------------------------
# Arrays
# ---------------------------------------------------------------------------

def build_upa(
    rows: int,
    cols: int,
    spacing: float,
    center,
    azimuth: float = 0.0,
    elevation: float = 0.0,
) -> ArrayGeometry:
    """Planar lattice centred on *center* with broadside along (azimuth, elevation).

    Columns run along the horizontal in-plane axis, rows along the vertical one.
    """
    if rows < 1 or cols < 1:
        raise PreconditionError("rows and cols must be >= 1")
    if not spacing > 0:
        raise PreconditionError("spacing must be > 0")
    c = np.asarray(center, dtype=float).reshape(3)
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    horizontal = np.array([-sa, ca, 0.0])
    vertical = np.array([-se * ca, -se * sa, ce])
    col_off = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    row_off = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    rr, cc = np.meshgrid(row_off, col_off, indexing="ij")
    positions = c + cc.reshape(-1, 1) * horizontal + rr.reshape(-1, 1) * vertical
    return ArrayGeometry(positions, c, float(azimuth), float(elevation), rows, cols, float(spacing))


def facing_orientation(center, toward) -> Tuple[float, float]:
    """(azimuth, elevation) pointing the broadside of an array at *center* toward *toward*."""
    d = np.asarray(toward, dtype=float) - np.asarray(center, dtype=float)
    if not np.any(d):
        raise PreconditionError("cannot face a point from itself")
    return math.atan2(d[1], d[0]), math.atan2(d[2], math.hypot(d[0], d[1]))


def build_sectors(
    center,
    rows: int,
    cols: int,
    spacing: float,
    initial_azimuth: float,
    elevation: float = math.radians(-10.0),
) -> Tuple[ArrayGeometry, ArrayGeometry, ArrayGeometry]:
    """Three co-located sector arrays, 120° apart in azimuth."""
    return tuple(  # type: ignore[return-value]
        build_upa(rows, cols, spacing, center, initial_azimuth + k * 2.0 * math.pi / 3.0, elevation)
        for k in range(3)
    )


# ---------------------------------------------------------------------------
# Distance models
# ---------------------------------------------------------------------------

def _as_paths(paths: PathsLike) -> Tuple[PathRecord, ...]:
    return paths.paths if isinstance(paths, PathSet) else tuple(paths)


def attach_transforms(path_set: PathSet) -> PathSet:
    """Return *path_set* with every path carrying its reflection transform."""
    paths = tuple(
        p if p.transform is not None else replace(p, transform=path_transform(p, path_set.tx, path_set.rx))
        for p in path_set.paths
    )
    return PathSet(tx=path_set.tx, rx=path_set.rx, paths=paths)


def pwa_direction_vectors(path: PathRecord) -> Tuple[np.ndarray, np.ndarray]:
    """Unit vectors of the arrival and departure angles: ``(u_r, u_t)``.

    ``u_r`` points from the receiver back along the incoming ray, ``u_t``
    from the transmitter along the outgoing ray.
    """
    return unit_from_angles(path.aoa_az, path.aoa_zen), unit_from_angles(path.aod_az, path.aod_zen)


def pwa_distance(
    path: PathRecord,
    tx_elem,
    rx_elem,
    tx_ref,
    rx_ref,
    *,
    speed_of_light: float = SPEED_OF_LIGHT,
) -> float:
    """First-order path length between two elements, linearised at (tx_ref, rx_ref).

    Moving an element away from where its ray comes from lengthens the path,
    hence the minus signs with the angle vectors defined above.
    """
    u_r, u_t = pwa_direction_vectors(path)
    dr = np.asarray(rx_elem, dtype=float) - np.asarray(rx_ref, dtype=float)
    dt = np.asarray(tx_elem, dtype=float) - np.asarray(tx_ref, dtype=float)
    return float(speed_of_light * path.delay - u_r @ dr - u_t @ dt)


def _pwa_distances(path: PathRecord, tx_elems, rx_elems, tx_ref, rx_ref, c: float) -> np.ndarray:
    u_r, u_t = pwa_direction_vectors(path)
    dr = (np.asarray(rx_elems) - np.asarray(rx_ref, dtype=float)) @ u_r
    dt = (np.asarray(tx_elems) - np.asarray(tx_ref, dtype=float)) @ u_t
    return c * path.delay - dr[:, None] - dt[None, :]


def _accumulate(gains, delays, distances, f: float, f_c: float, c: float) -> np.ndarray:
    """Σ_ℓ g_ℓ exp[j2π(τ_ℓ f_c − f d_ℓ/c)] with a fixed summation order."""
    H = None
    for g, tau, d in zip(gains, delays, distances):
        term = g * np.exp(2j * math.pi * (tau * f_c - f * d / c))
        H = term if H is None else H + term
    return H


def channel_matrix(
    paths: PathsLike,
    tx_array: ArrayGeometry,
    rx_array: ArrayGeometry,
    f: Optional[float] = None,
    f_c: float = 28e9,
    model: ChannelModel | str = ChannelModel.RM,
    *,
    tx_ref=None,
    rx_ref=None,
    speed_of_light: float = SPEED_OF_LIGHT,
) -> ChannelMatrix:
    """Synthesize ``H`` from a path list under the PWA or RM distance model.

    PWA linearises around *tx_ref* / *rx_ref* (the array centres by default).
    RM requires every path to carry an :class:`ImageTransform`.
    """
    model = ChannelModel(model)
    if model is ChannelModel.EXHAUSTIVE:
        raise PreconditionError("use channel_matrix_exhaustive for the exhaustive model")
    f = f_c if f is None else f
    records = _as_paths(paths)
    shape = (len(rx_array), len(tx_array))
    if not records:
        return ChannelMatrix(np.zeros(shape, dtype=complex), f, model.value)

    if model is ChannelModel.RM:
        missing = [i for i, p in enumerate(records) if p.transform is None]
        if missing:
            raise ContractViolation(f"RM synthesis needs a transform on every path; missing on {missing}")
        distances = [rm_distances(p.transform, tx_array.element_positions, rx_array.element_positions) for p in records]
    else:
        t_ref = tx_array.center if tx_ref is None else tx_ref
        r_ref = rx_array.center if rx_ref is None else rx_ref
        distances = [
            _pwa_distances(p, tx_array.element_positions, rx_array.element_positions, t_ref, r_ref, speed_of_light)
            for p in records
        ]
    H = _accumulate([p.gain for p in records], [p.delay for p in records], distances, f, f_c, speed_of_light)
    return ChannelMatrix(np.asarray(H, dtype=complex).reshape(shape), f, model.value)


def constant_channel(paths: PathsLike, tx_array: ArrayGeometry, rx_array: ArrayGeometry) -> ChannelMatrix:
    """Baseline with no per-element phase: every entry equals ``Σ g``."""
    total = complex(sum(p.gain for p in _as_paths(paths)))
    return ChannelMatrix(np.full((len(rx_array), len(tx_array)), total, dtype=complex), float("nan"), "constant")


def channel_matrix_exhaustive(
    scene: Scene,
    tx_array: ArrayGeometry,
    rx_array: ArrayGeometry,
    f: Optional[float] = None,
    f_c: float = 28e9,
    max_order: Optional[int] = None,
    *,
    reference_paths: Optional[PathSet] = None,
    tracer: Tracer = trace_paths,
    threads: int = 1,
    speed_of_light: float = SPEED_OF_LIGHT,
) -> ChannelMatrix:
    """Ground-truth ``H`` from one trace per element pair.

    Gains and delays come from the centre-to-centre path with the same facet
    sequence (*reference_paths*, traced here when omitted and not counted);
    a pair-only path keeps its own gain and delay.  ``trace_calls`` counts
    the element-pair traces, ``N_tx · N_rx``.
    """
    f = f_c if f is None else f
    if reference_paths is None:
        reference_paths = trace_paths(scene, tx_array.center, rx_array.center, max_order, carrier_frequency=f_c)
    by_facets = {p.facet_ids: p for p in reference_paths.paths}
    tx_elems = tx_array.element_positions
    rx_elems = rx_array.element_positions

    def row(m: int) -> np.ndarray:
        out = np.zeros(len(tx_elems), dtype=complex)
        for n, tx_elem in enumerate(tx_elems):
            pair = tracer(scene, tx_elem, rx_elems[m], max_order, carrier_frequency=f_c)
            for p in pair.paths:
                ref = by_facets.get(p.facet_ids, p)
                d = speed_of_light * p.delay
                out[n] += ref.gain * np.exp(2j * math.pi * (ref.delay * f_c - f * d / speed_of_light))
        return out

    outcomes = run_batch(row, range(len(rx_elems)), max_workers=threads, recoverable=())
    H = np.vstack([o.value for o in outcomes])
    calls = len(tx_elems) * len(rx_elems)
    _log.debug("exhaustive channel: %d element-pair traces", calls)
    return ChannelMatrix(H, f, ChannelModel.EXHAUSTIVE.value, trace_calls=calls)


def select_best_sector(
    sector_arrays: Sequence[ArrayGeometry],
    paths: PathsLike,
    rx_array: ArrayGeometry,
    f: Optional[float] = None,
    f_c: float = 28e9,
    model: ChannelModel | str = ChannelModel.RM,
    *,
    channel_fn: Optional[Callable[[ArrayGeometry], ChannelMatrix]] = None,
) -> Tuple[int, ChannelMatrix]:
    """Sector with the largest ``‖H‖_F``; the lowest index wins ties."""
    if len(sector_arrays) != 3:
        raise PreconditionError(f"expected 3 sector arrays, got {len(sector_arrays)}")
    centers = np.vstack([a.center for a in sector_arrays])
    if not np.allclose(centers, centers[0], rtol=0.0, atol=1e-9):
        raise PreconditionError("sector arrays must share one centre")
    compute = channel_fn or (lambda arr: channel_matrix(paths, arr, rx_array, f, f_c, model))
    best_idx, best = 0, compute(sector_arrays[0])
    for idx in (1, 2):
        candidate = compute(sector_arrays[idx])
        if candidate.frobenius_norm > best.frobenius_norm:
            best_idx, best = idx, candidate
    return best_idx, best

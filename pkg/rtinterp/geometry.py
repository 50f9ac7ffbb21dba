"""Planar scenes and the image-method ray tracer.

The tracer is the ground truth for everything else in the package: it
produces the reference-grid path data, the per-target truth used by the
evaluation and the per-element-pair oracle for MIMO channels.

For every ordered facet sequence (no facet twice in a row) the transmitter
is mirrored successively across the facet planes; the straight line from the
last image to the receiver is then intersected with the facets in reverse
order.  A sequence yields a path only when every reflection point lies
strictly inside its polygon and every sub-segment is unobstructed.

Facets are two-sided reflectors with a constant complex reflection
coefficient.  Edge and vertex hits are treated as blocked/invalid.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from rtinterp.config_manager import SPEED_OF_LIGHT
from rtinterp.errors import ConfigurationError, PreconditionError, SchemaVersionError
from rtinterp.reflection_model import (
    ImageTransform,
    Plane,
    compose_reflections,
    route_length,
)

__all__ = [
    "SCENE_SCHEMA_VERSION",
    "DEFAULT_ORDER_CAP",
    "Point3",
    "Facet",
    "Scene",
    "PathRecord",
    "PathSet",
    "direction_angles",
    "unit_from_angles",
    "los_visible",
    "trace_sequence",
    "trace_paths",
    "unfolded_length",
    "load_scene",
    "save_scene",
]

_log = logging.getLogger(__name__)

SCENE_SCHEMA_VERSION = 1
DEFAULT_ORDER_CAP = 3
#: Geometric tolerance in meters (coplanarity, edge contact, plane embedding).
GEOM_TOL = 1e-9
#: Half-extent of the square stored as the vertex list of an unbounded plane.
_UNBOUNDED_HALF_EXTENT = 1e4

Point3 = Tuple[float, float, float]


def _pt(p) -> Point3:
    arr = np.asarray(p, dtype=float).reshape(3)
    return (float(arr[0]), float(arr[1]), float(arr[2]))


# ---------------------------------------------------------------------------
# Angle helpers
# ---------------------------------------------------------------------------

def direction_angles(v) -> Tuple[float, float]:
    """Return ``(azimuth, zenith)`` of vector *v*; azimuth in [−π, π], zenith in [0, π]."""
    vec = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise PreconditionError("cannot take the direction of a zero vector")
    az = math.atan2(float(vec[1]), float(vec[0]))
    zen = math.acos(max(-1.0, min(1.0, float(vec[2]) / norm)))
    return az, zen


def unit_from_angles(azimuth: float, zenith: float) -> np.ndarray:
    """Standard spherical convention: zenith measured from +z."""
    sz = math.sin(zenith)
    return np.array([sz * math.cos(azimuth), sz * math.sin(azimuth), math.cos(zenith)])


# ---------------------------------------------------------------------------
# Polygon helpers (2-D, in the facet's own basis)
# ---------------------------------------------------------------------------

def _crossing_number(p: np.ndarray, poly: np.ndarray) -> bool:
    """Even-odd crossing test; *poly* is ``(n, 2)``, implicitly closed."""
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    upward = (y0 <= p[1]) & (y1 > p[1])
    downward = (y0 > p[1]) & (y1 <= p[1])
    crossing = upward | downward
    if not np.any(crossing):
        return False
    with np.errstate(divide="ignore", invalid="ignore"):
        vt = (p[1] - y0[crossing]) / (y1[crossing] - y0[crossing])
    x_int = x0[crossing] + vt * (x1[crossing] - x0[crossing])
    return bool(np.count_nonzero(p[0] < x_int) % 2)


def _edge_distance(p: np.ndarray, poly: np.ndarray) -> float:
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(p - closest, axis=1)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c) -> float:
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


# ---------------------------------------------------------------------------
# Scene types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Facet:
    """Planar polygon reflector with a constant complex reflection coefficient.

    The front side is the one ``unit_normal`` points to; it follows the
    counter-clockwise winding of ``vertices``.
    """

    vertices: np.ndarray
    unit_normal: np.ndarray
    reflection_coefficient: complex = 1.0 + 0.0j
    unbounded: bool = False
    _offset: float = field(init=False, repr=False)
    _basis: np.ndarray = field(init=False, repr=False)
    _poly2d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 3:
            raise ConfigurationError("a facet needs at least three 3-D vertices")
        normal = np.asarray(self.unit_normal, dtype=float).reshape(3)
        if abs(float(np.linalg.norm(normal)) - 1.0) > 1e-12:
            raise ConfigurationError("facet normal must be unit length")
        gamma = complex(self.reflection_coefficient)
        if abs(gamma) > 1.0 + 1e-12:
            raise ConfigurationError(f"|reflection coefficient| must be <= 1, got {abs(gamma):.6g}")
        offset = float(normal @ verts[0])
        scale = max(1.0, float(np.max(np.abs(verts))))
        if np.max(np.abs(verts @ normal - offset)) > GEOM_TOL * scale:
            raise ConfigurationError("facet vertices are not coplanar")

        # In-plane orthonormal basis (u, v) with u × v = normal.
        seed = verts[1] - verts[0]
        u = seed - (seed @ normal) * normal
        u /= np.linalg.norm(u)
        v = np.cross(normal, u)
        poly = np.column_stack([(verts - verts[0]) @ u, (verts - verts[0]) @ v])

        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "unit_normal", normal)
        object.__setattr__(self, "reflection_coefficient", gamma)
        object.__setattr__(self, "_offset", offset)
        object.__setattr__(self, "_basis", np.vstack([u, v]))
        object.__setattr__(self, "_poly2d", poly)

        signed_area = 0.5 * float(np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1]))
        if signed_area <= 0.0:
            raise ConfigurationError("facet winding disagrees with its declared normal")
        n = len(poly)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                    raise ConfigurationError("facet polygon is self-intersecting")

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------
    @classmethod
    def from_vertices(cls, vertices, reflection_coefficient: complex = 1.0, *, unbounded: bool = False) -> "Facet":
        """Derive the normal from the vertex winding (Newell's method)."""
        verts = np.asarray(vertices, dtype=float)
        nxt = np.roll(verts, -1, axis=0)
        normal = np.array(
            [
                np.sum((verts[:, 1] - nxt[:, 1]) * (verts[:, 2] + nxt[:, 2])),
                np.sum((verts[:, 2] - nxt[:, 2]) * (verts[:, 0] + nxt[:, 0])),
                np.sum((verts[:, 0] - nxt[:, 0]) * (verts[:, 1] + nxt[:, 1])),
            ]
        )
        size = np.linalg.norm(normal)
        if size == 0.0:
            raise ConfigurationError("degenerate facet: vertices are collinear")
        return cls(verts, normal / size, reflection_coefficient, unbounded)

    @classmethod
    def infinite_plane(cls, point, normal, reflection_coefficient: complex = 1.0) -> "Facet":
        """An unbounded reflector through *point*; its interior test always succeeds."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(helper, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        p = np.asarray(point, dtype=float)
        h = _UNBOUNDED_HALF_EXTENT
        verts = np.array([p - h * u - h * v, p + h * u - h * v, p + h * u + h * v, p - h * u + h * v])
        return cls(verts, n, reflection_coefficient, True)

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------
    @property
    def offset(self) -> float:
        return self._offset

    def plane(self) -> Plane:
        n = self.unit_normal
        return ((float(n[0]), float(n[1]), float(n[2])), self._offset)

    def signed_distance(self, point) -> float:
        return float(self.unit_normal @ np.asarray(point, dtype=float) - self._offset)

    def contains(self, point, *, strict: bool = True, tol: float = GEOM_TOL) -> bool:
        """In-polygon test for a point on the facet plane.

        ``strict=True`` demands a margin of *tol* from every edge (reflection
        validity); ``strict=False`` also accepts boundary contact (blocking).
        """
        if self.unbounded:
            return True
        rel = np.asarray(point, dtype=float) - self.vertices[0]
        p2 = self._basis @ rel
        inside = _crossing_number(p2, self._poly2d)
        near_edge = _edge_distance(p2, self._poly2d) <= tol
        if strict:
            return inside and not near_edge
        return inside or near_edge

    def transformed(self, rotation: np.ndarray, translation) -> "Facet":
        R = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        return Facet(self.vertices @ R.T + t, R @ self.unit_normal, self.reflection_coefficient, self.unbounded)


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable collection of facets; safe to share across threads."""

    facets: Tuple[Facet, ...] = ()
    max_reflection_order: int = DEFAULT_ORDER_CAP
    speed_of_light: float = SPEED_OF_LIGHT
    _normals: np.ndarray = field(init=False, repr=False)
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        facets = tuple(self.facets)
        if self.max_reflection_order < 0:
            raise ConfigurationError("max_reflection_order must be >= 0")
        object.__setattr__(self, "facets", facets)
        if facets:
            normals = np.vstack([f.unit_normal for f in facets])
            offsets = np.array([f.offset for f in facets])
        else:
            normals = np.zeros((0, 3))
            offsets = np.zeros(0)
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", offsets)

    def __len__(self) -> int:
        return len(self.facets)

    def transformed(self, rotation, translation) -> "Scene":
        """Rigidly move the scene (rotation must be proper: det = +1)."""
        R = np.asarray(rotation, dtype=float)
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise PreconditionError("rigid motions need a proper rotation (det = +1)")
        return Scene(tuple(f.transformed(R, translation) for f in self.facets), self.max_reflection_order)


@dataclass(frozen=True)
class PathRecord:
    """One propagation path between a transmitter and a receiver point."""

    gain: complex
    delay: float
    aoa_az: float
    aoa_zen: float
    aod_az: float
    aod_zen: float
    reflection_points: Tuple[Point3, ...] = ()
    facet_ids: Tuple[int, ...] = ()
    transform: Optional[ImageTransform] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.reflection_points) != len(self.facet_ids):
            raise PreconditionError("reflection_points and facet_ids must have equal length")

    @property
    def order(self) -> int:
        return len(self.reflection_points)

    @property
    def power(self) -> float:
        return abs(self.gain) ** 2

    @property
    def is_los(self) -> bool:
        return not self.reflection_points


@dataclass(frozen=True)
class PathSet:
    tx: Point3
    rx: Point3
    paths: Tuple[PathRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx", _pt(self.tx))
        object.__setattr__(self, "rx", _pt(self.rx))
        object.__setattr__(self, "paths", tuple(self.paths))
        seen = set()
        for path in self.paths:
            if path.facet_ids and min(path.facet_ids) < 0:
                continue  # facet metadata unknown (ingested route)
            if path.facet_ids in seen:
                raise PreconditionError(f"duplicate facet sequence {path.facet_ids} in one PathSet")
            seen.add(path.facet_ids)

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def total_power(self) -> float:
        return float(sum(p.power for p in self.paths))


# ---------------------------------------------------------------------------
# Visibility
# ---------------------------------------------------------------------------

def los_visible(scene: Scene, a, b) -> bool:
    """True iff the open segment (a, b) touches no facet (edges count as blocking)."""
    pa = np.asarray(a, dtype=float)
    pb = np.asarray(b, dtype=float)
    length = float(np.linalg.norm(pb - pa))
    if length == 0.0:
        raise PreconditionError("los_visible needs two distinct points")
    if not scene.facets:
        return True
    sa = scene._normals @ pa - scene._offsets
    sb = scene._normals @ pb - scene._offsets
    denom = sa - sb
    candidates = np.nonzero(np.abs(denom) > 1e-15)[0]
    if candidates.size == 0:
        return True
    t = sa[candidates] / denom[candidates]
    margin = GEOM_TOL / length
    hits = candidates[(t > margin) & (t < 1.0 - margin)]
    for idx, ti in zip(hits, t[(t > margin) & (t < 1.0 - margin)]):
        point = pa + ti * (pb - pa)
        if scene.facets[idx].contains(point, strict=False):
            return False
    return True


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------

def _sequences(n_facets: int, max_order: int) -> Iterator[Tuple[int, ...]]:
    yield ()
    for order in range(1, max_order + 1):
        for seq in itertools.product(range(n_facets), repeat=order):
            if any(seq[i] == seq[i + 1] for i in range(order - 1)):
                continue  # consecutive identical facets are degenerate
            yield seq


def _check_not_embedded(scene: Scene, point: np.ndarray, label: str) -> None:
    for idx, facet in enumerate(scene.facets):
        if abs(facet.signed_distance(point)) <= GEOM_TOL and facet.contains(point, strict=False):
            raise PreconditionError(f"{label} {point.tolist()} lies on facet {idx}")


def trace_sequence(
    scene: Scene,
    tx,
    rx,
    facet_ids: Sequence[int],
    *,
    carrier_frequency: float = 28e9,
) -> Optional[PathRecord]:
    """Build the specular path for one facet sequence, or ``None`` if it is invalid."""
    ptx = np.asarray(tx, dtype=float)
    prx = np.asarray(rx, dtype=float)
    facets = [scene.facets[i] for i in facet_ids]

    images = [ptx]
    for facet in facets:
        n = facet.unit_normal
        x = images[-1]
        images.append(x - 2.0 * (float(n @ x) - facet.offset) * n)

    point = prx
    reverse_points: list[np.ndarray] = []
    for i in range(len(facets), 0, -1):
        facet = facets[i - 1]
        s_point = facet.signed_distance(point)
        s_image = facet.signed_distance(images[i])
        # The path point and the image must sit strictly on opposite sides.
        if not (s_point * s_image < 0.0) or abs(s_point) <= GEOM_TOL:
            return None
        t = s_point / (s_point - s_image)
        hit = point + t * (images[i] - point)
        if not facet.contains(hit, strict=True):
            return None
        reverse_points.append(hit)
        point = hit
    points = reverse_points[::-1]

    chain = [ptx] + points + [prx]
    for start, end in zip(chain[:-1], chain[1:]):
        if np.linalg.norm(end - start) <= GEOM_TOL:
            return None
        if not los_visible(scene, start, end):
            return None

    wavelength = scene.speed_of_light / carrier_frequency
    d_total = float(sum(np.linalg.norm(e - s) for s, e in zip(chain[:-1], chain[1:])))
    gain = complex(wavelength / (4.0 * math.pi * d_total))
    for facet in facets:
        gain *= facet.reflection_coefficient
    gain *= complex(np.exp(-2j * math.pi * d_total / wavelength))

    aod_az, aod_zen = direction_angles(chain[1] - chain[0])
    aoa_az, aoa_zen = direction_angles(chain[-2] - chain[-1])
    transform = compose_reflections(f.plane() for f in facets)
    return PathRecord(
        gain=gain,
        delay=d_total / scene.speed_of_light,
        aoa_az=aoa_az,
        aoa_zen=aoa_zen,
        aod_az=aod_az,
        aod_zen=aod_zen,
        reflection_points=tuple(_pt(p) for p in points),
        facet_ids=tuple(int(i) for i in facet_ids),
        transform=transform,
    )


def trace_paths(
    scene: Scene,
    tx,
    rx,
    max_order: Optional[int] = None,
    *,
    carrier_frequency: float = 28e9,
    order_cap: int = DEFAULT_ORDER_CAP,
) -> PathSet:
    """Enumerate every valid specular path of order 0..max_order from *tx* to *rx*.

    Pure function of its arguments; safe to call concurrently.
    """
    order = scene.max_reflection_order if max_order is None else int(max_order)
    if order > order_cap:
        raise ConfigurationError(f"max_order={order} exceeds the hard cap {order_cap}")
    if order < 0:
        raise ConfigurationError("max_order must be >= 0")
    ptx = np.asarray(tx, dtype=float)
    prx = np.asarray(rx, dtype=float)
    if np.array_equal(ptx, prx):
        raise PreconditionError("tx and rx coincide")
    _check_not_embedded(scene, ptx, "tx")
    _check_not_embedded(scene, prx, "rx")

    paths = []
    for seq in _sequences(len(scene.facets), order):
        path = trace_sequence(scene, ptx, prx, seq, carrier_frequency=carrier_frequency)
        if path is not None:
            paths.append(path)
    paths.sort(key=lambda p: (p.delay, p.facet_ids))
    _log.debug("traced %d paths %s -> %s (order <= %d)", len(paths), _pt(ptx), _pt(prx), order)
    return PathSet(tx=_pt(ptx), rx=_pt(prx), paths=tuple(paths))


def unfolded_length(path: PathRecord, tx, rx) -> float:
    """Length of tx → p₁ → … → p_k → rx; equals ``delay · c`` for traced paths."""
    return route_length(path.reflection_points, tx, rx)


# ---------------------------------------------------------------------------
# Scene files
# ---------------------------------------------------------------------------

def save_scene(scene: Scene, destination: str | os.PathLike[str]) -> Path:
    """Write *scene* as a versioned JSON document (field names in docs/FILE_FORMATS.md)."""
    doc = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "max_reflection_order": scene.max_reflection_order,
        "facets": [
            {
                "vertices": [[float(c) for c in v] for v in f.vertices],
                "gamma": [f.reflection_coefficient.real, f.reflection_coefficient.imag],
                "unbounded": bool(f.unbounded),
            }
            for f in scene.facets
        ],
    }
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def load_scene(source: str | os.PathLike[str]) -> Scene:
    """Parse a scene file written by :func:`save_scene` (or by hand)."""
    path = Path(source)
    with path.open("r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid scene JSON ({exc})") from exc
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != SCENE_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"scene schema_version {version!r} is not supported (expected {SCENE_SCHEMA_VERSION})",
            source=str(path),
        )
    facets = []
    for idx, entry in enumerate(doc.get("facets", [])):
        try:
            gamma_re, gamma_im = entry.get("gamma", [1.0, 0.0])
            facets.append(
                Facet.from_vertices(
                    entry["vertices"],
                    complex(gamma_re, gamma_im),
                    unbounded=bool(entry.get("unbounded", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: facet {idx} is malformed ({exc})") from exc
    return Scene(tuple(facets), int(doc.get("max_reflection_order", DEFAULT_ORDER_CAP)))


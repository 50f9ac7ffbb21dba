"""Reflection-model (RM) algebra: planar mirrors composed into affine maps.

A specular bounce on the plane ``{x : n·x = c}`` maps a point to its mirror
image, ``x ↦ (I − 2nnᵀ)x + 2cn``.  A path with ``k`` bounces therefore maps
the transmitter onto an *image point* ``z = U·x + g`` with ``U`` orthogonal
and ``det U = (−1)^k``.  The RM distance between any TX element and RX
element along that path is ``‖x_rx − (U·x_tx + g)‖``, exact for infinite
planar reflectors and O(1) per element pair.

Routes exported by external tracers only carry reflection points; each
bounce plane is recovered as the bisector of the incident and reflected
directions (:func:`recover_transform_from_route`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from rtinterp.errors import (
    ContractViolation,
    DegenerateGeometryError,
    InconsistentRouteError,
    PreconditionError,
)

__all__ = [
    "Plane",
    "ImageTransform",
    "ImagePoint",
    "reflect_across_plane",
    "compose_reflections",
    "rm_distance",
    "rm_distances",
    "recover_transform_from_route",
    "unfold_route",
    "path_transform",
    "route_length",
]

#: A plane as ``(unit normal, offset)`` with ``normal · x == offset`` on the plane.
Plane = Tuple[Tuple[float, float, float], float]

_UNIT_TOL = 1e-12
_STRAIGHT_TOL = 1e-9


def _as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(3)
    return arr


@dataclass(frozen=True, eq=False)
class ImageTransform:
    """Affine map ``x ↦ U·x + g`` produced by ``order`` planar reflections.

    ``planes`` keeps the individual bounce planes (in bounce order) when they
    are known, which :func:`unfold_route` needs to rebuild reflection points.
    """

    U: np.ndarray
    g: np.ndarray
    order: int
    planes: Optional[Tuple[Plane, ...]] = field(default=None)

    @classmethod
    def identity(cls) -> "ImageTransform":
        return cls(U=np.eye(3), g=np.zeros(3), order=0, planes=())

    def apply(self, point) -> np.ndarray:
        """Map *point* (shape ``(3,)`` or ``(N, 3)``) through the transform."""
        pts = np.asarray(point, dtype=float)
        return pts @ self.U.T + self.g

    def image_point(self, tx) -> "ImagePoint":
        """Image of the transmitter *tx* under this transform."""
        return ImagePoint(z=self.apply(_as_point(tx)), source_transform=self)

    def is_consistent(self, tol: float = 1e-12) -> bool:
        """Return *True* when ``UᵀU = I`` and ``det U = (−1)^order`` within *tol*."""
        ortho = np.max(np.abs(self.U.T @ self.U - np.eye(3))) <= tol
        det_ok = abs(np.linalg.det(self.U) - (-1.0) ** self.order) <= tol
        return bool(ortho and det_ok)

    def then(self, other: "ImageTransform") -> "ImageTransform":
        """Return the map applying ``self`` first and *other* second."""
        planes = None
        if self.planes is not None and other.planes is not None:
            planes = self.planes + other.planes
        return ImageTransform(
            U=other.U @ self.U,
            g=other.U @ self.g + other.g,
            order=self.order + other.order,
            planes=planes,
        )

    def allclose(self, other: "ImageTransform", atol: float = 1e-9) -> bool:
        return (
            self.order == other.order
            and np.allclose(self.U, other.U, rtol=0.0, atol=atol)
            and np.allclose(self.g, other.g, rtol=0.0, atol=atol * max(1.0, float(np.max(np.abs(self.g)))))
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"ImageTransform(order={self.order}, g={np.round(self.g, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class ImagePoint:
    """Transmitter image ``z = U·tx + g`` together with the transform that produced it."""

    z: np.ndarray
    source_transform: ImageTransform


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def reflect_across_plane(normal, offset: float) -> ImageTransform:
    """Single mirror across ``{x : normal·x = offset}``."""
    n = _as_point(normal)
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > _UNIT_TOL:
        raise PreconditionError(f"plane normal must be unit length, |n| = {norm!r}")
    U = np.eye(3) - 2.0 * np.outer(n, n)
    g = 2.0 * float(offset) * n
    plane: Plane = ((float(n[0]), float(n[1]), float(n[2])), float(offset))
    return ImageTransform(U=U, g=g, order=1, planes=(plane,))


def compose_reflections(planes: Iterable[Tuple[Sequence[float], float]]) -> ImageTransform:
    """Compose bounces in order: the first plane is hit first."""
    result = ImageTransform.identity()
    for normal, offset in planes:
        result = result.then(reflect_across_plane(normal, offset))
    return result


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def rm_distance(t: ImageTransform, tx_elem, rx_elem) -> float:
    """``‖rx − (U·tx + g)‖`` for one element pair."""
    z = t.apply(_as_point(tx_elem))
    return float(np.linalg.norm(_as_point(rx_elem) - z))


def rm_distances(t: ImageTransform, tx_elems, rx_elems) -> np.ndarray:
    """Vectorised :func:`rm_distance`; returns an ``(N_rx, N_tx)`` matrix."""
    tx = np.atleast_2d(np.asarray(tx_elems, dtype=float))
    rx = np.atleast_2d(np.asarray(rx_elems, dtype=float))
    images = t.apply(tx)
    diff = rx[:, None, :] - images[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def route_length(points: Sequence[Sequence[float]], tx, rx) -> float:
    """Length of the polyline tx → p₁ → … → p_k → rx."""
    chain = np.vstack([_as_point(tx)] + [_as_point(p) for p in points] + [_as_point(rx)])
    return float(np.sum(np.linalg.norm(np.diff(chain, axis=0), axis=1)))


# ---------------------------------------------------------------------------
# Route recovery
# ---------------------------------------------------------------------------

def _check_claimed_plane(index: int, normal: np.ndarray, point: np.ndarray, claimed: Plane, rtol: float) -> None:
    c_normal = _as_point(claimed[0])
    c_normal = c_normal / np.linalg.norm(c_normal)
    alignment = abs(float(c_normal @ normal))
    off_plane = abs(float(c_normal @ point) - float(claimed[1]))
    scale = max(1.0, float(np.linalg.norm(point)))
    if alignment < 1.0 - rtol or off_plane > rtol * scale:
        raise InconsistentRouteError(
            f"reflection point {index} at {point.tolist()} does not bounce specularly on the claimed plane "
            f"(normal alignment {alignment:.6g}, offset error {off_plane:.3g} m)"
        )


def recover_transform_from_route(
    reflection_points: Sequence[Sequence[float]],
    tx,
    rx,
    *,
    rtol: float = 1e-6,
    claimed_planes: Optional[Sequence[Plane]] = None,
) -> ImageTransform:
    """Rebuild ``(U, g)`` from a specular route without facet metadata.

    Each bounce plane passes through its reflection point with normal along
    ``b − a`` (``a`` incident, ``b`` reflected unit direction).  The sign is
    fixed so the incident ray arrives on the front side (``n·a < 0``).

    When *claimed_planes* is given (one per reflection point, e.g. the facet
    planes an exporter says were hit) every recovered bisector plane must
    coincide with its claimed plane up to the normal's sign, otherwise
    :class:`InconsistentRouteError` names the first offending bounce.
    """
    chain = [_as_point(tx)] + [_as_point(p) for p in reflection_points] + [_as_point(rx)]
    if claimed_planes is not None and len(claimed_planes) != len(reflection_points):
        raise InconsistentRouteError(
            f"route has {len(reflection_points)} reflection points but {len(claimed_planes)} claimed planes"
        )
    planes = []
    for i in range(1, len(chain) - 1):
        prev, here, nxt = chain[i - 1], chain[i], chain[i + 1]
        inc = here - prev
        out = nxt - here
        inc_len = np.linalg.norm(inc)
        out_len = np.linalg.norm(out)
        if inc_len == 0.0 or out_len == 0.0:
            raise DegenerateGeometryError(f"zero-length segment at reflection point {i}")
        a = inc / inc_len
        b = out / out_len
        bisector = b - a
        size = np.linalg.norm(bisector)
        if size < _STRAIGHT_TOL:
            raise DegenerateGeometryError(
                f"reflection point {i} at {here.tolist()} is straight-through (no bounce)"
            )
        n = bisector / size
        if float(n @ a) > 0.0:  # pragma: no cover – b − a always opposes a
            n = -n
        planes.append(((float(n[0]), float(n[1]), float(n[2])), float(n @ here)))
        if claimed_planes is not None:
            _check_claimed_plane(i, n, here, claimed_planes[i - 1], rtol)

    transform = compose_reflections(planes)
    expected = route_length(reflection_points, tx, rx)
    got = rm_distance(transform, tx, rx)
    if abs(got - expected) > rtol * max(expected, 1e-12):
        raise InconsistentRouteError(
            f"image distance {got:.12g} m disagrees with route length {expected:.12g} m"
        )
    return transform


def unfold_route(transform: ImageTransform, tx, target) -> list[np.ndarray]:
    """Reflection points of the image path from *tx* to *target*.

    The planes are treated as infinite; facet extents were validated when
    the transform was first obtained.
    """
    if transform.planes is None:
        raise ContractViolation("transform carries no plane list; cannot unfold a route")
    images = [_as_point(tx)]
    for normal, offset in transform.planes:
        n = np.asarray(normal, dtype=float)
        x = images[-1]
        images.append(x - 2.0 * (float(n @ x) - offset) * n)

    point = _as_point(target)
    points: list[np.ndarray] = []
    for i in range(len(transform.planes), 0, -1):
        normal, offset = transform.planes[i - 1]
        n = np.asarray(normal, dtype=float)
        direction = images[i] - point
        denom = float(n @ direction)
        if abs(denom) < 1e-15:
            raise DegenerateGeometryError("image line runs parallel to a bounce plane")
        t = (offset - float(n @ point)) / denom
        point = point + t * direction
        points.append(point)
    points.reverse()
    return points


def path_transform(path, tx, rx) -> ImageTransform:
    """Transform attached to *path* by the tracer, else one recovered from its route."""
    attached = getattr(path, "transform", None)
    if attached is not None:
        return attached
    if not path.reflection_points:
        return ImageTransform.identity()
    return recover_transform_from_route(path.reflection_points, tx, rx)

"""Reference-grid persistence (CSV schema v1) and result writers.

A grid file looks like::

    # rtinterp-grid schema_version=1
    # tx=0,0,10
    # grid_spacing=4
    rx_x,rx_y,rx_z,gain_re,gain_im,delay,aoa_az,aoa_zen,aod_az,aod_zen,n_interactions,facet_ids,reflection_points

One data row per path.  Reflection points are flattened ``x1 y1 z1 x2 …``
(space separated) and ``facet_ids`` are ``;``-joined, empty when the route
came from an external tracer.  A reference with no path at all is kept as a
single marker row with ``n_interactions = -1``.  Floats are written with 17
significant digits, so ``read_grid`` and ``write_grid`` are exact inverses
and rewriting a file is byte-stable.

The full column reference lives in ``docs/FILE_FORMATS.md``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from rtinterp.errors import GridFormatError, PreconditionError, SchemaVersionError
from rtinterp.geometry import PathRecord, PathSet, Point3

__all__ = [
    "GRID_SCHEMA_VERSION",
    "GRID_COLUMNS",
    "DIAGNOSTIC_COLUMNS",
    "ReferenceGrid",
    "TargetDiagnostics",
    "write_grid",
    "read_grid",
    "generate_reference_layout",
    "write_diagnostics",
    "read_diagnostics",
    "write_channel_matrix",
    "write_cdf",
    "write_ledger",
    "write_table",
    "write_targets",
    "read_targets",
]

_log = logging.getLogger(__name__)

GRID_SCHEMA_VERSION = 1
_MAGIC = "# rtinterp-grid"

GRID_COLUMNS: Tuple[str, ...] = (
    "rx_x",
    "rx_y",
    "rx_z",
    "gain_re",
    "gain_im",
    "delay",
    "aoa_az",
    "aoa_zen",
    "aod_az",
    "aod_zen",
    "n_interactions",
    "facet_ids",
    "reflection_points",
)

DIAGNOSTIC_COLUMNS: Tuple[str, ...] = (
    "target_x",
    "target_y",
    "target_z",
    "status",
    "clusters_considered",
    "clusters_kept",
    "probabilities",
)

_NO_PATH_MARKER = -1


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _path_key(path: PathRecord):
    return (path.delay, path.facet_ids, path.reflection_points)


# ---------------------------------------------------------------------------
# Grid type
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceGrid:
    """Reference points (each with its traced :class:`PathSet`) for one transmitter.

    References are kept in canonical (lexicographic point) order, so equality
    does not depend on how the grid was assembled.
    """

    tx: Point3
    references: Tuple[Tuple[Point3, PathSet], ...] = ()
    grid_spacing_hint: Optional[float] = None
    _points: np.ndarray = field(init=False, repr=False, compare=False)
    _tree: Optional[cKDTree] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tx = tuple(float(c) for c in self.tx)
        refs = []
        for point, path_set in self.references:
            p = tuple(float(c) for c in point)
            if path_set.tx != tx:
                raise PreconditionError(f"PathSet at {p} was traced from {path_set.tx}, not {tx}")
            if path_set.rx != p:
                raise PreconditionError(f"PathSet rx {path_set.rx} does not match its reference point {p}")
            paths = tuple(sorted(path_set.paths, key=_path_key))
            refs.append((p, PathSet(tx=tx, rx=p, paths=paths)))
        refs.sort(key=lambda item: item[0])
        for (a, _), (b, _) in zip(refs, refs[1:]):
            if a == b:
                raise PreconditionError(f"duplicate reference point {a}")
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "references", tuple(refs))
        if self.grid_spacing_hint is not None:
            object.__setattr__(self, "grid_spacing_hint", float(self.grid_spacing_hint))
        points = np.array([p for p, _ in refs], dtype=float).reshape(-1, 3)
        object.__setattr__(self, "_points", points)
        object.__setattr__(self, "_tree", cKDTree(points) if len(points) else None)

    @classmethod
    def from_path_sets(
        cls, tx, path_sets: Iterable[PathSet], grid_spacing_hint: Optional[float] = None
    ) -> "ReferenceGrid":
        return cls(tx=tx, references=tuple((ps.rx, ps) for ps in path_sets), grid_spacing_hint=grid_spacing_hint)

    def __len__(self) -> int:
        return len(self.references)

    @property
    def points(self) -> np.ndarray:
        """``(Q, 3)`` array of reference positions (read-only view)."""
        view = self._points.view()
        view.flags.writeable = False
        return view

    def point(self, index: int) -> np.ndarray:
        return self._points[index]

    def path_set(self, index: int) -> PathSet:
        return self.references[index][1]

    def within(self, target, radius: float) -> List[int]:
        """Indices with ``‖target − x_q‖ < radius``, in ascending index order."""
        if self._tree is None:
            return []
        t = np.asarray(target, dtype=float)
        candidates = self._tree.query_ball_point(t, radius)
        dists = np.linalg.norm(self._points[candidates] - t, axis=1) if candidates else np.zeros(0)
        return sorted(int(i) for i, d in zip(candidates, dists) if d < radius)

    def nearest(self, target) -> int:
        if self._tree is None:
            raise PreconditionError("empty reference grid")
        _, idx = self._tree.query(np.asarray(target, dtype=float))
        return int(idx)

    def total_paths(self) -> int:
        return sum(len(ps) for _, ps in self.references)


# ---------------------------------------------------------------------------
# Grid CSV
# ---------------------------------------------------------------------------

def _path_row(rx: Point3, path: PathRecord) -> List[str]:
    known = any(i >= 0 for i in path.facet_ids)
    return [
        *(_fmt(c) for c in rx),
        _fmt(path.gain.real),
        _fmt(path.gain.imag),
        _fmt(path.delay),
        _fmt(path.aoa_az),
        _fmt(path.aoa_zen),
        _fmt(path.aod_az),
        _fmt(path.aod_zen),
        str(path.order),
        ";".join(str(i) for i in path.facet_ids) if known else "",
        " ".join(_fmt(c) for p in path.reflection_points for c in p),
    ]


def write_grid(grid: ReferenceGrid, destination: str | os.PathLike[str]) -> Path:
    """Serialise *grid* to CSV schema v1; the destination directory is created."""
    buffer = io.StringIO()
    buffer.write(f"{_MAGIC} schema_version={GRID_SCHEMA_VERSION}\n")
    buffer.write("# tx=" + ",".join(_fmt(c) for c in grid.tx) + "\n")
    if grid.grid_spacing_hint is not None:
        buffer.write(f"# grid_spacing={_fmt(grid.grid_spacing_hint)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(GRID_COLUMNS)
    for rx, path_set in grid.references:
        if not path_set.paths:
            writer.writerow([*(_fmt(c) for c in rx), "", "", "", "", "", "", "", str(_NO_PATH_MARKER), "", ""])
            continue
        for path in path_set.paths:
            writer.writerow(_path_row(rx, path))

    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    _log.info("Wrote %d references (%d paths) to %s", len(grid), grid.total_paths(), path)
    return path


def _parse_header(lines: List[str], source: str) -> Tuple[Point3, Optional[float], int]:
    """Parse the ``#`` metadata block; returns (tx, spacing, index of the column header)."""
    if not lines or not lines[0].startswith(_MAGIC):
        raise GridFormatError("missing '# rtinterp-grid' header line", line=1, source=source)
    try:
        version = int(lines[0].split("schema_version=", 1)[1].strip())
    except (IndexError, ValueError) as exc:
        raise GridFormatError("unreadable schema_version", line=1, source=source) from exc
    if version != GRID_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema_version={version} is not supported (expected {GRID_SCHEMA_VERSION})", line=1, source=source
        )
    tx: Optional[Point3] = None
    spacing: Optional[float] = None
    idx = 1
    while idx < len(lines) and lines[idx].startswith("#"):
        key, _, value = lines[idx][1:].strip().partition("=")
        try:
            if key == "tx":
                xyz = [float(v) for v in value.split(",")]
                if len(xyz) != 3:
                    raise ValueError("tx needs three coordinates")
                tx = (xyz[0], xyz[1], xyz[2])
            elif key == "grid_spacing":
                spacing = float(value)
        except ValueError as exc:
            raise GridFormatError(f"bad metadata line ({exc})", line=idx + 1, source=source) from exc
        idx += 1
    if tx is None:
        raise GridFormatError("missing '# tx=' metadata line", line=idx, source=source)
    if idx >= len(lines) or tuple(lines[idx].strip().split(",")) != GRID_COLUMNS:
        raise GridFormatError("missing or unexpected column header", line=idx + 1, source=source)
    return tx, spacing, idx


def _parse_row(row: Sequence[str]) -> Tuple[Point3, Optional[PathRecord]]:
    if len(row) != len(GRID_COLUMNS):
        raise ValueError(f"expected {len(GRID_COLUMNS)} columns, got {len(row)}")
    rx = (float(row[0]), float(row[1]), float(row[2]))
    n = int(row[10])
    if n == _NO_PATH_MARKER:
        return rx, None
    if n < 0:
        raise ValueError(f"n_interactions must be >= 0, got {n}")
    coords = [float(v) for v in row[12].split()] if row[12].strip() else []
    if len(coords) != 3 * n:
        raise ValueError(f"expected {3 * n} reflection coordinates, got {len(coords)}")
    points = tuple((coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]) for i in range(n))
    if row[11].strip():
        facet_ids = tuple(int(v) for v in row[11].split(";"))
        if len(facet_ids) != n:
            raise ValueError(f"facet_ids has {len(facet_ids)} entries for {n} interactions")
    else:
        facet_ids = (-1,) * n
    values = [float(v) for v in row[3:10]]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite path parameter")
    path = PathRecord(
        gain=complex(values[0], values[1]),
        delay=values[2],
        aoa_az=values[3],
        aoa_zen=values[4],
        aod_az=values[5],
        aod_zen=values[6],
        reflection_points=points,
        facet_ids=facet_ids,
    )
    return rx, path


def read_grid(source: str | os.PathLike[str]) -> ReferenceGrid:
    """Parse a schema-v1 grid file.  Row order does not matter."""
    path = Path(source)
    lines = path.read_text(encoding="utf-8").splitlines()
    tx, spacing, header_idx = _parse_header(lines, str(path))

    grouped: Dict[Point3, List[PathRecord]] = {}
    reader = csv.reader(lines[header_idx + 1:])
    for offset, row in enumerate(reader):
        line_no = header_idx + 2 + offset
        if not row:
            continue
        try:
            rx, record = _parse_row(row)
        except ValueError as exc:
            raise GridFormatError(str(exc), line=line_no, source=str(path)) from exc
        bucket = grouped.setdefault(rx, [])
        if record is not None:
            bucket.append(record)

    try:
        grid = ReferenceGrid(
            tx=tx,
            references=tuple((rx, PathSet(tx=tx, rx=rx, paths=tuple(paths))) for rx, paths in grouped.items()),
            grid_spacing_hint=spacing,
        )
    except PreconditionError as exc:
        raise GridFormatError(str(exc), source=str(path)) from exc
    _log.debug("Read %d references from %s", len(grid), path)
    return grid


def generate_reference_layout(
    bounds: Tuple[float, float, float, float], spacing: float, height: float
) -> List[Point3]:
    """Regular lattice over ``(x_min, y_min, x_max, y_max)``, edges included, at z = *height*."""
    if not spacing > 0:
        raise PreconditionError(f"spacing must be > 0, got {spacing!r}")
    x_min, y_min, x_max, y_max = (float(b) for b in bounds)
    if x_max < x_min or y_max < y_min:
        raise PreconditionError("bounds must satisfy x_min <= x_max and y_min <= y_max")

    def axis(lo: float, hi: float) -> List[float]:
        steps = int(math.floor((hi - lo) / spacing + 1e-9))
        values = [lo + k * spacing for k in range(steps + 1)]
        if hi - values[-1] > 1e-9 * max(1.0, abs(hi)):
            values.append(hi)
        return values

    return [(x, y, float(height)) for x in axis(x_min, x_max) for y in axis(y_min, y_max)]


# ---------------------------------------------------------------------------
# Result sidecars
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetDiagnostics:
    target: Point3
    status: str
    clusters_considered: int = 0
    clusters_kept: int = 0
    probabilities: Tuple[float, ...] = ()


def write_diagnostics(rows: Iterable[TargetDiagnostics], destination: str | os.PathLike[str]) -> Path:
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAGNOSTIC_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    *(_fmt(c) for c in row.target),
                    row.status,
                    row.clusters_considered,
                    row.clusters_kept,
                    ";".join(_fmt(p) for p in row.probabilities),
                ]
            )
    return path


def read_diagnostics(source: str | os.PathLike[str]) -> List[TargetDiagnostics]:
    path = Path(source)
    out: List[TargetDiagnostics] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DIAGNOSTIC_COLUMNS:
            raise GridFormatError("unexpected diagnostics header", line=1, source=str(path))
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(
                    TargetDiagnostics(
                        target=(float(row["target_x"]), float(row["target_y"]), float(row["target_z"])),
                        status=row["status"],
                        clusters_considered=int(row["clusters_considered"]),
                        clusters_kept=int(row["clusters_kept"]),
                        probabilities=tuple(float(p) for p in row["probabilities"].split(";") if p),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise GridFormatError(str(exc), line=line_no, source=str(path)) from exc
    return out


def write_channel_matrix(H, destination: str | os.PathLike[str]) -> Path:
    """One CSV row per receive element, ``re_n,im_n`` column pairs per transmit element."""
    entries = np.asarray(getattr(H, "entries", H), dtype=complex)
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"{part}_{n}" for n in range(entries.shape[1]) for part in ("re", "im")])
        for row in entries:
            writer.writerow([_fmt(v) for z in row for v in (z.real, z.imag)])
    return path


def write_cdf(curve, destination: str | os.PathLike[str]) -> Path:
    """Two-column ``value,fraction`` CSV; the outage fraction rides in a comment line."""
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# outage_fraction={_fmt(curve.outage_fraction)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["value", "fraction"])
        for value, fraction in zip(curve.values, curve.fractions):
            writer.writerow([_fmt(value), _fmt(fraction)])
    return path


def write_ledger(ledger, destination: str | os.PathLike[str]) -> Path:
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "links", "trace_calls", "seconds"])
        for entry in ledger.entries:
            writer.writerow([entry.stage, entry.links, entry.trace_calls, _fmt(entry.seconds)])
    return path


def write_table(rows: Sequence[Mapping[str, object]], destination: str | os.PathLike[str]) -> Path:
    """Write dict rows sharing one key order as CSV; floats keep full precision, ``None`` is blank."""
    if not rows:
        raise PreconditionError("cannot write an empty table")
    columns = list(rows[0])
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for idx, row in enumerate(rows):
            if list(row) != columns:
                raise PreconditionError(f"table row {idx} has columns {list(row)}, expected {columns}")
            writer.writerow([_cell(row[c]) for c in columns])
    return path


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return _fmt(value)
    return str(value)


def write_targets(points: Iterable[Sequence[float]], destination: str | os.PathLike[str]) -> Path:
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z"])
        for p in points:
            writer.writerow([_fmt(c) for c in p])
    return path


def read_targets(source: str | os.PathLike[str]) -> List[Point3]:
    """Read an ``x,y,z`` target list; duplicates are rejected."""
    path = Path(source)
    out: List[Point3] = []
    seen = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y", "z"]:
            raise GridFormatError("target file must start with an 'x,y,z' header", line=1, source=str(path))
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                x, y, z = (float(v) for v in row)
            except ValueError as exc:
                raise GridFormatError(f"bad target row ({exc})", line=line_no, source=str(path)) from exc
            point = (x, y, z)
            if point in seen:
                raise GridFormatError(f"duplicate target {point}", line=line_no, source=str(path))
            seen.add(point)
            out.append(point)
    return out

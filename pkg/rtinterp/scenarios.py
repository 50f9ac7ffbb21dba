"""Built-in synthetic scenarios and the scenario-file loader.

Every scenario shares one frame: a 32 m × 32 m service area at
``x, y ∈ [0, 32]`` sampled at ``reference_height``, with the transmitter
10 m west of the area.  The scenes differ in how much of the area the
transmitter sees directly:

``free_space``
    no facets at all.
``most_los``
    ground, two building faces and one small block that shadows a corner.
``partial_los``
    a street canyon whose south-east quarter lies behind a cross wall.
``total_nlos``
    a courtyard behind a tall screen; only reflected paths arrive.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from rtinterp.batch_runner import run_batch
from rtinterp.errors import ConfigurationError, SchemaVersionError
from rtinterp.geometry import Facet, Point3, Scene, load_scene, trace_paths
from rtinterp.pathdata_io import ReferenceGrid, generate_reference_layout

__all__ = [
    "SCENARIO_SCHEMA_VERSION",
    "ScenarioSpec",
    "BUILTIN_SCENARIOS",
    "get_scenario",
    "load_scenario_file",
]

_log = logging.getLogger(__name__)

SCENARIO_SCHEMA_VERSION = 1
_AREA: Tuple[float, float, float, float] = (0.0, 0.0, 32.0, 32.0)
_TX: Point3 = (-10.0, 16.0, 10.0)

GROUND_GAMMA = complex(-0.4, 0.0)
WALL_GAMMA = complex(-0.5, 0.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to reproduce one run: scene, transmitter, lattice and targets."""

    name: str
    scene: Scene = field(compare=False)
    tx: Point3
    bounds: Tuple[float, float, float, float] = _AREA
    grid_spacing: float = 4.0
    height: float = 1.5
    target_count: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        x0, y0, x1, y1 = self.bounds
        if x1 < x0 or y1 < y0:
            raise ConfigurationError(f"scenario {self.name!r}: bounds must be (x_min, y_min, x_max, y_max)")
        if not self.grid_spacing > 0:
            raise ConfigurationError(f"scenario {self.name!r}: grid_spacing must be > 0")
        if self.target_count < 0:
            raise ConfigurationError(f"scenario {self.name!r}: target_count must be >= 0")

    def with_overrides(self, **overrides) -> "ScenarioSpec":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def reference_points(self, spacing: Optional[float] = None) -> List[Point3]:
        return generate_reference_layout(self.bounds, spacing or self.grid_spacing, self.height)

    def targets(self, count: Optional[int] = None, seed: Optional[int] = None) -> List[Point3]:
        """Uniformly random targets inside the bounds, reproducible from *seed*."""
        n = self.target_count if count is None else count
        rng = np.random.default_rng(self.seed if seed is None else seed)
        x0, y0, x1, y1 = self.bounds
        xs = rng.uniform(x0, x1, n)
        ys = rng.uniform(y0, y1, n)
        return [(float(x), float(y), float(self.height)) for x, y in zip(xs, ys)]

    def check_targets(self, targets) -> int:
        """Log a warning for targets outside the bounds; returns how many there are."""
        x0, y0, x1, y1 = self.bounds
        outside = [t for t in targets if not (x0 <= t[0] <= x1 and y0 <= t[1] <= y1)]
        if outside:
            _log.warning("%d of %d targets lie outside the reference bounds %s", len(outside), len(targets), self.bounds)
        return len(outside)

    def trace_grid(
        self,
        *,
        max_order: int = 2,
        carrier_frequency: float = 28e9,
        spacing: Optional[float] = None,
        tracer=trace_paths,
        threads: int = 1,
    ) -> ReferenceGrid:
        """Trace every reference point of the lattice (in lattice order)."""
        step = spacing or self.grid_spacing
        points = self.reference_points(step)
        outcomes = run_batch(
            lambda p: tracer(self.scene, self.tx, p, max_order, carrier_frequency=carrier_frequency),
            points,
            max_workers=threads,
            recoverable=(),
        )
        _log.info("Traced %d reference points for scenario %s (spacing %g m)", len(points), self.name, step)
        return ReferenceGrid.from_path_sets(self.tx, [o.value for o in outcomes], grid_spacing_hint=step)


# ---------------------------------------------------------------------------
# Facet helpers
# ---------------------------------------------------------------------------

def _wall_x(x: float, y0: float, y1: float, z1: float, gamma: complex = WALL_GAMMA) -> Facet:
    return Facet.from_vertices([(x, y0, 0.0), (x, y1, 0.0), (x, y1, z1), (x, y0, z1)], gamma)


def _wall_y(y: float, x0: float, x1: float, z1: float, gamma: complex = WALL_GAMMA) -> Facet:
    return Facet.from_vertices([(x0, y, 0.0), (x0, y, z1), (x1, y, z1), (x1, y, 0.0)], gamma)


def _ground(x0: float = -60.0, y0: float = -60.0, x1: float = 100.0, y1: float = 100.0) -> Facet:
    return Facet.from_vertices([(x0, y0, 0.0), (x1, y0, 0.0), (x1, y1, 0.0), (x0, y1, 0.0)], GROUND_GAMMA)


# ---------------------------------------------------------------------------
# Built-in scenarios
# ---------------------------------------------------------------------------

def free_space() -> ScenarioSpec:
    return ScenarioSpec("free_space", Scene((), max_reflection_order=0), _TX)


def most_los() -> ScenarioSpec:
    facets = (
        _ground(),
        _wall_x(44.0, -8.0, 40.0, 20.0),
        _wall_y(-6.0, -20.0, 44.0, 15.0),
        # 3 m × 3 m block, 6 m tall; kept off the lattice lines so no reference
        # point lands on a face
        _wall_x(20.7, 8.3, 11.3, 6.0),
        _wall_x(23.7, 8.3, 11.3, 6.0),
        _wall_y(8.3, 20.7, 23.7, 6.0),
        _wall_y(11.3, 20.7, 23.7, 6.0),
    )
    return ScenarioSpec("most_los", Scene(facets, max_reflection_order=2), _TX)


def partial_los() -> ScenarioSpec:
    facets = (
        _ground(),
        _wall_y(-4.0, -20.0, 60.0, 25.0),
        _wall_y(36.0, -20.0, 60.0, 25.0),
        # cross wall closing the southern half of the canyon
        _wall_x(17.3, -4.0, 16.0, 25.0),
    )
    return ScenarioSpec("partial_los", Scene(facets, max_reflection_order=2), _TX)


def total_nlos() -> ScenarioSpec:
    facets = (
        _ground(),
        # screen between the transmitter and the courtyard, taller than the transmitter
        _wall_x(-4.0, 4.0, 28.0, 30.0),
        _wall_y(-12.0, -20.0, 60.0, 20.0),
        _wall_y(44.0, -20.0, 60.0, 20.0),
        _wall_x(44.0, -12.0, 44.0, 20.0),
    )
    return ScenarioSpec("total_nlos", Scene(facets, max_reflection_order=2), _TX)


BUILTIN_SCENARIOS: Dict[str, Callable[[], ScenarioSpec]] = {
    "free_space": free_space,
    "most_los": most_los,
    "partial_los": partial_los,
    "total_nlos": total_nlos,
}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; choose one of {sorted(BUILTIN_SCENARIOS)}"
        ) from None


def load_scenario_file(source: str | os.PathLike[str]) -> ScenarioSpec:
    """Read a JSON scenario; ``scene`` is a scene file path relative to the scenario file."""
    path = Path(source)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid scenario JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    if doc.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"scenario schema_version {doc.get('schema_version')!r} is not supported "
            f"(expected {SCENARIO_SCHEMA_VERSION})",
            source=str(path),
        )
    try:
        scene = load_scene(path.parent / doc["scene"])
        tx = tuple(float(c) for c in doc["tx"])
        bounds = tuple(float(b) for b in doc.get("bounds", _AREA))
        if len(tx) != 3 or len(bounds) != 4:
            raise ValueError("tx needs 3 values and bounds 4")
        return ScenarioSpec(
            name=str(doc.get("name", path.stem)),
            scene=scene,
            tx=tx,  # type: ignore[arg-type]
            bounds=bounds,  # type: ignore[arg-type]
            grid_spacing=float(doc.get("grid_spacing", 4.0)),
            height=float(doc.get("height", 1.5)),
            target_count=int(doc.get("target_count", 200)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed scenario ({exc})") from exc

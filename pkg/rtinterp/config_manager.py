"""JSON-backed run configuration.

:class:`ConfigManager` is a flat key/value store persisted as JSON, the same
way the desktop tooling this package grew out of stores user settings.  It
produces an immutable, validated :class:`RunConfig` that the pipeline reads.

Lookup order for the backing file: explicit ``path`` argument, then the
``RTINTERP_CONFIG`` environment variable, then
``$XDG_CONFIG_HOME/rtinterp/config.json`` (``~/.config`` when unset).  A
missing file simply means "all defaults".
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from rtinterp.errors import ConfigurationError

__all__ = [
    "SPEED_OF_LIGHT",
    "GainCorrection",
    "Estimator",
    "ChannelModel",
    "RunConfig",
    "ConfigManager",
]

SPEED_OF_LIGHT: float = 299_792_458.0


class GainCorrection(str, enum.Enum):
    RAW = "raw"
    FRESNEL_CORRECTED = "fresnel_corrected"


class Estimator(str, enum.Enum):
    """Interpolation strategy compared in the evaluation."""

    KERNEL = "kernel"
    AVERAGE = "average"
    NEAREST = "nearest"


class ChannelModel(str, enum.Enum):
    PWA = "pwa"
    RM = "rm"
    EXHAUSTIVE = "exhaustive"


def _enum_value(enum_cls, raw, key: str):
    try:
        return enum_cls(raw)
    except ValueError as exc:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ConfigurationError(f"{key}={raw!r} is not one of: {allowed}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Validated, immutable parameter set for one pipeline run.

    Defaults follow the 28 GHz / 8×8 UPA evaluation setup.  ``d_th=None``
    means 1.5 × the reference grid spacing (see :meth:`neighbor_radius`).
    """

    carrier_frequency: float = 28e9
    tx_power_dbm: float = 23.0
    noise_figure_db: float = 3.0
    bandwidth: float = 400e6
    d_th: Optional[float] = None
    sigma: float = 2.0
    p_th: float = 0.4
    cluster_epsilon: float = 1e-2
    array_rows: int = 8
    array_cols: int = 8
    array_spacing: float = 0.14
    gain_correction_mode: GainCorrection = GainCorrection.FRESNEL_CORRECTED
    method: Estimator = Estimator.KERNEL
    channel_model: ChannelModel = ChannelModel.RM
    truth_model: ChannelModel = ChannelModel.RM
    max_order: int = 2
    max_order_cap: int = 3
    reference_height: float = 1.5
    tx_elevation_deg: float = -10.0
    se_alpha: float = 0.6
    se_rho_max: float = 4.8
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        # Coerce enum-typed fields so JSON strings are accepted transparently.
        object.__setattr__(
            self,
            "gain_correction_mode",
            _enum_value(GainCorrection, self.gain_correction_mode, "gain_correction_mode"),
        )
        object.__setattr__(self, "method", _enum_value(Estimator, self.method, "method"))
        object.__setattr__(
            self, "channel_model", _enum_value(ChannelModel, self.channel_model, "channel_model")
        )
        object.__setattr__(self, "truth_model", _enum_value(ChannelModel, self.truth_model, "truth_model"))
        if self.truth_model is ChannelModel.PWA:
            raise ConfigurationError("truth_model must be 'rm' or 'exhaustive'")
        self._validate()

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------
    def _validate(self) -> None:
        positive = {
            "carrier_frequency": self.carrier_frequency,
            "bandwidth": self.bandwidth,
            "sigma": self.sigma,
            "cluster_epsilon": self.cluster_epsilon,
            "array_spacing": self.array_spacing,
        }
        for key, value in positive.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{key} must be a positive finite number, got {value!r}")
        if self.d_th is not None and not (math.isfinite(self.d_th) and self.d_th > 0):
            raise ConfigurationError(f"d_th must be positive or null, got {self.d_th!r}")
        if not 0.0 < self.p_th < 1.0:
            raise ConfigurationError(f"p_th must lie in (0, 1), got {self.p_th!r}")
        if self.array_rows < 1 or self.array_cols < 1:
            raise ConfigurationError("array_rows and array_cols must be >= 1")
        if self.max_order < 0:
            raise ConfigurationError("max_order must be >= 0")
        if self.max_order > self.max_order_cap:
            raise ConfigurationError(
                f"max_order={self.max_order} exceeds the hard cap {self.max_order_cap}"
            )
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if not 0.0 < self.se_alpha or not self.se_rho_max > 0.0:
            raise ConfigurationError("se_alpha and se_rho_max must be positive")

    # ------------------------------------------------------------------
    # Derived quantities
    # ------------------------------------------------------------------
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def neighbor_radius(self, grid_spacing: float | None) -> float:
        """Return ``d_th``, defaulting to 1.5 × *grid_spacing*."""
        if self.d_th is not None:
            return float(self.d_th)
        if grid_spacing is None or grid_spacing <= 0:
            raise ConfigurationError("d_th is unset and the grid carries no spacing hint")
        return 1.5 * float(grid_spacing)

    def replace(self, **overrides: Any) -> "RunConfig":
        """Return a copy with *overrides* applied; ``None`` values are ignored."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        return dataclasses.replace(self, **clean)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, enum.Enum) else value
        return out


class ConfigManager:
    """Simple JSON-backed configuration loader / saver.

    Keys map one-to-one onto :class:`RunConfig` fields; anything else is
    rejected when :meth:`run_config` builds the validated object.
    """

    _FILENAME = "config.json"
    _ENV_VAR = "RTINTERP_CONFIG"

    #: Default configuration values shipped with rtinterp.
    DEFAULTS: Dict[str, Any] = RunConfig().to_dict()

    def __init__(self, path: str | os.PathLike[str] | None = None) -> None:
        self._config_path: Path = Path(path) if path is not None else self._resolve_config_path()
        self.settings: Dict[str, Any] = {}
        self._log = logging.getLogger(self.__class__.__name__)
        self._load()

    # ---------------------------------------------------------------------
    # Public helpers
    # ---------------------------------------------------------------------
    @property
    def path(self) -> Path:
        return self._config_path

    def get(self, key: str, default: Optional[Any] = None) -> Any:
        """Return the configuration value for *key*, or *default* if missing."""
        return self.settings.get(key, default)

    def set(self, key: str, value: Any, *, auto_save: bool = False) -> None:
        """Set *key* to *value*. Optionally persist immediately."""
        if key not in self.DEFAULTS:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        self.settings[key] = value
        if auto_save:
            self.save()

    def reload(self) -> None:
        """Force reload configuration from disk, discarding local changes."""
        self._load()

    def save(self) -> None:
        """Persist current *settings* to disk."""
        self._write_to_disk(self.settings)

    def run_config(self, **overrides: Any) -> RunConfig:
        """Build the validated :class:`RunConfig`, applying non-``None`` *overrides*."""
        merged = dict(self.settings)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(merged) - set(self.DEFAULTS)
        if unknown:
            raise ConfigurationError(f"{self._config_path}: unknown configuration keys {sorted(unknown)}")
        try:
            return RunConfig(**merged)
        except TypeError as exc:
            raise ConfigurationError(f"{self._config_path}: {exc}") from exc

    # ------------------------------------------------------------------
    # Implementation details
    # ------------------------------------------------------------------
    def _resolve_config_path(self) -> Path:
        """Compute the config path from the environment."""
        explicit = os.environ.get(self._ENV_VAR)
        if explicit:
            return Path(explicit)
        base_dir = Path(os.environ.get("XDG_CONFIG_HOME", Path.home() / ".config"))
        return base_dir / "rtinterp" / self._FILENAME

    def _load(self) -> None:
        """Load settings from disk; an absent file yields the defaults."""
        self.settings = self.DEFAULTS.copy()
        if not self._config_path.exists():
            self._log.debug("No config at %s – using defaults", self._config_path)
            return
        try:
            with self._config_path.open("r", encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{self._config_path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{self._config_path}: expected a flat JSON object")
        nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigurationError(f"{self._config_path}: values must be scalars, got nested {nested}")
        self.settings.update(data)
        self._log.info("Loaded configuration from %s", self._config_path)

    def _write_to_disk(self, data: Dict[str, Any]) -> None:
        self._config_path.parent.mkdir(parents=True, exist_ok=True)
        with self._config_path.open("w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=4, sort_keys=True)
            fh.write("\n")

    # ------------------------------------------------------------------
    # Convenience dunder methods
    # ------------------------------------------------------------------
    def __getitem__(self, item: str) -> Any:  # dict-style access
        return self.settings[item]

    def __setitem__(self, key: str, value: Any) -> None:
        self.set(key, value)

    def __contains__(self, item: str) -> bool:
        return item in self.settings

    def __repr__(self) -> str:  # pragma: no cover
        return f"<ConfigManager path={self._config_path!s} keys={list(self.settings.keys())}>"

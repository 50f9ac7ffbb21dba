"""rtinterp – ray-tracing interpolation with image points and kernel regression.

Exposes commonly used helpers at the package root for convenience.
"""

from .config_manager import ConfigManager, RunConfig  # noqa: F401
from .logging_config import setup_logging  # noqa: F401
from .geometry import Facet, PathRecord, PathSet, Scene, trace_paths  # noqa: F401
from .reflection_model import ImageTransform, compose_reflections, rm_distance  # noqa: F401
from .pathdata_io import ReferenceGrid, read_grid, write_grid  # noqa: F401
from .interpolation import InterpolationResult, interpolate, interpolate_many  # noqa: F401
from .mimo import build_upa, channel_matrix, channel_matrix_exhaustive  # noqa: F401
from .evaluation import LinkBudget, capacity_error, received_power_error, spectral_efficiency  # noqa: F401

__version__ = "0.1.0"

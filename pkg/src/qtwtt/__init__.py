"""Simulation and analysis of two-way time transfer with photon pairs."""
__version__ = "0.1.0"

from .budget import combine, load_budget
from .correlator import coarse_offset, coincidence_count, fine_histogram, fit_gaussian
from .core import derive_seed, quantize
from .presets import get_preset
from .scenario import ScenarioConfig, load_scenario
from .stability import fit_loglog_slope, sample_sd, tdev
from .twoway import block_mode_series, block_offsets, run_event_mode, theoretical_sd

__all__ = [
    "ScenarioConfig", "load_scenario", "get_preset", "quantize", "derive_seed",
    "coarse_offset", "fine_histogram", "fit_gaussian", "coincidence_count",
    "theoretical_sd", "block_offsets", "block_mode_series", "run_event_mode",
    "sample_sd", "tdev", "fit_loglog_slope", "combine", "load_budget",
]

"""Local motion patterns for macro and micro facial expression recognition."""

from .config import PRESETS, LmpConfig, load_config, preset
from .flowfield import FlowField, Frame, FlowParams, compute_flow, read_flo, sample_region, write_flo
from .lmp import LmpDistribution, analyze_region, bhattacharyya, max_regions, propagate

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "LmpConfig", "load_config", "preset",
    "FlowField", "Frame", "FlowParams", "compute_flow", "read_flo", "write_flo", "sample_region",
    "LmpDistribution", "analyze_region", "bhattacharyya", "max_regions", "propagate",
]

"""Panoramic localization against 3D line maps using lines and their intersections."""
from .errors import FGPLError
from .pipeline import Config, LocalizationReport, build_map, evaluate, localize, prepare_query
from .scene import NoiseSpec, SyntheticScene, generate_scene
from .sphere import Pose

__version__ = "0.1.0"

__all__ = [
    "Config",
    "FGPLError",
    "LocalizationReport",
    "NoiseSpec",
    "Pose",
    "SyntheticScene",
    "build_map",
    "evaluate",
    "generate_scene",
    "localize",
    "prepare_query",
]

"""Scene annotation on volumetric density fields.

Label posed multi-view scenes with oriented boxes and meshes, refine poses
against the field geometry, and export occlusion-aware masks, boxes, poses,
and depth ground truth.
"""

from . import export, fields, geometry, labeling, meshops, metrics, rasters, scene
from ._native import available as native_available, resolve_backend

__version__ = "0.1.0"

__all__ = [
    "export",
    "fields",
    "geometry",
    "labeling",
    "meshops",
    "metrics",
    "rasters",
    "scene",
    "native_available",
    "resolve_backend",
    "__version__",
]

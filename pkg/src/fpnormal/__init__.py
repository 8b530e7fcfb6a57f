"""Feature-preserving normal estimation and filtering for noisy point clouds.

Height-map patch features, a small CNN engine, a feature classifier, eigen-space normal
regression and a normal-driven position update, plus ground-truth generation and metrics.
"""
from .geometry import PointCloud, SpatialIndex, average_spacing, pca_normals
from .heightmap import HeightMapParams, cloud_height_maps
from .filtering import FilterConfig, Models, estimate_normals, position_update, run_pipeline
from .metrics import EvalReport, evaluate

__version__ = "0.1.0"

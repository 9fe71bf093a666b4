"""hetslam: desk-scale dense RGBD SLAM with online per-pixel depth-noise estimation.

A numpy library implementing a differentiable occupancy-grid scene model,
volumetric depth/color rendering, self-supervised heteroscedastic (Laplacian)
depth uncertainty, uncertainty-weighted mapping/tracking, multi-sensor and
RGBD fusion, a synthetic sensor simulator, and a reconstruction/tracking
evaluation suite.
"""

from .geometry import Pose, Intrinsics
from .grid import FeatureGrid, OutOfBoundsError
from .scene import SceneModel, save_checkpoint, load_checkpoint
from .sampling import Ray, SampleSet, sample_along_ray
from .render import RenderResult, compute_weights, render_ray, render_frame

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "Intrinsics",
    "FeatureGrid",
    "OutOfBoundsError",
    "SceneModel",
    "save_checkpoint",
    "load_checkpoint",
    "Ray",
    "SampleSet",
    "sample_along_ray",
    "RenderResult",
    "compute_weights",
    "render_ray",
    "render_frame",
    "__version__",
]

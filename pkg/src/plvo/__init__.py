"""Point-and-line RGB-D visual odometry.

Frame-to-frame pose estimation over five residual families, temporal-stereo
depth estimation with inverse-depth fusion, depth-map registration and a
deterministic synthetic benchmark.
"""

from .config import PipelineConfig
from .geometry import CameraIntrinsics, Line2D, Line3D, Pose
from .pipeline import FrameResult, Odometry, run_sequence

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "CameraIntrinsics", "Line2D", "Line3D", "Pose", "FrameResult",
           "Odometry", "run_sequence", "__version__"]

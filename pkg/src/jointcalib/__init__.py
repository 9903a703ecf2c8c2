"""Joint camera intrinsic and LiDAR-camera extrinsic calibration with a holed checkerboard target."""

from .board import BoardSpec, MaskCloud, circle_centers, corner_points, make_mask
from .detect import BoardDetection, DetectionParams, detect_board, detect_boards, grid_search_align
from .geometry import CameraModel, Pose, distort, project, undistort, unproject
from .optimize import OptimizeOptions, OptimizeReport, ParameterBlock, PointPairSet, solve, solve_two_stage
from .pipeline import calibrate_entries
from .render import render_overlay
from .simulate import SceneSpec, default_scene, simulate_frame
from .zhang import initialize

__version__ = "0.1.0"

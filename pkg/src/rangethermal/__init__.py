"""Fusion of time-of-flight range images with low-resolution thermopile images."""

from .calibration import (
    CalibObservation,
    CalibResult,
    calibrate,
    detect_target_depth,
    detect_target_thermal,
    estimate_rotation,
    reprojection_error,
)
from .fusion import (
    FusedImage,
    ProjectionMap,
    build_projection_map,
    fuse,
    fuse_bilinear,
    fuse_depth_weighted,
    fuse_nearest,
    fuse_segment,
    segment_footprint,
)
from .geometry import (
    Extrinsics,
    Intrinsics,
    TaitBryanAngles,
    depth_to_point,
    project_point,
    rotation_from_angles,
    transform_point,
)
from .metrics import accumulated_error_curve, error_map, evaluate, mean_abs_error
from .simulation import SceneSpec, add_noise, default_scene, downsample_area, render_scene, simulate

__version__ = "0.1.0"

"""Relief geometry toolkit: depth/normal conversion, normal fusion,
depth-constrained normal integration and evaluation metrics."""

__version__ = "0.1.0"

from .differential import depth_to_gradient, depth_to_normal, gradient_to_normal, normal_to_gradient
from .fusion import (
    FusionConfig,
    NormalTransformParams,
    ScaleSearchResult,
    fuse_pipeline,
    global_scale,
    soft_fuse,
    transform_normals,
)
from .grid import (
    DepthMap,
    EncodedNormalMap,
    GradientField,
    NormalMap,
    decode_normals,
    encode_normals,
    viz_depth,
)
from .integration import (
    SolveReport,
    SolverConfig,
    integrate_normals,
    refine_depth_label,
    screened_poisson,
)
from .io import load_depth, load_normals, save_depth, save_normals
from .metrics import (
    MetricReport,
    MetricRow,
    angular_threshold_fraction,
    composite_loss,
    evaluate_pair,
    mean_depth_error,
    mean_ranks,
    normal_angular_error,
    psnr,
    ssim,
)

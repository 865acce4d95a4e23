"""splatcolor: map posed 2D images (colors, features, masks) onto Gaussian-splat scenes.

Given frozen splat geometry and posed target images, each Gaussian's
spherical-harmonic coefficients are solved from a visibility-weighted least
squares system (regularized normal equations), optionally followed by
residual refinement passes to capture color mixing between translucent
splats. Gradient-descent baselines are included for comparison.
"""

from .adjoint import ViewAccumulators, accumulate_view, gradient_pass, target_color
from .baseline import OptimizerConfig, optimize
from .metrics import image_metrics, l1, l2, psnr
from .rasterizer import (
    ProjectedSplat,
    RasterConfig,
    project,
    render,
    render_sum_weighted,
)
from .scene import (
    CameraView,
    ChannelImage,
    GaussianScene,
    covariance_from_scale_rotation,
    validate_scene,
)
from .sh import ShBasis, eval_color, sh_basis
from .solver import (
    GaussianSystem,
    GaussianSystems,
    SolveConfig,
    SolveReport,
    assemble,
    colorize,
    refine,
    segment,
    solve,
)

__all__ = [
    "CameraView",
    "ChannelImage",
    "GaussianScene",
    "GaussianSystem",
    "GaussianSystems",
    "OptimizerConfig",
    "ProjectedSplat",
    "RasterConfig",
    "ShBasis",
    "SolveConfig",
    "SolveReport",
    "ViewAccumulators",
    "accumulate_view",
    "assemble",
    "colorize",
    "covariance_from_scale_rotation",
    "eval_color",
    "gradient_pass",
    "image_metrics",
    "l1",
    "l2",
    "optimize",
    "project",
    "psnr",
    "refine",
    "render",
    "render_sum_weighted",
    "segment",
    "sh_basis",
    "solve",
    "target_color",
    "validate_scene",
]

__version__ = "0.1.0"

import numpy as np
import pytest

from splatcolor.rasterizer import RasterConfig
from splatcolor.scene import CameraView, GaussianScene
from splatcolor.sh import SH_C0, basis_size


def axis_camera(width=17, height=17, focal=24.0, cx=None, cy=None) -> CameraView:
    """Camera at the world origin looking down +z, pixel centers on integers."""
    return CameraView(
        world_to_camera=np.eye(4),
        fx=focal,
        fy=focal,
        cx=(width - 1) / 2.0 if cx is None else cx,
        cy=(height - 1) / 2.0 if cy is None else cy,
        width=width,
        height=height,
    )


def make_scene(
    means,
    scale=0.05,
    opacity=0.8,
    colors=None,
    sh_order=0,
    channels=1,
    coeffs=None,
) -> GaussianScene:
    """Axis-aligned isotropic splats; colors give the band-0 rendered value."""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n = means.shape[0]
    scales = np.full((n, 3), scale, dtype=float) if np.isscalar(scale) else np.asarray(scale)
    opac = np.full(n, opacity, dtype=float) if np.isscalar(opacity) else np.asarray(opacity)
    rots = np.zeros((n, 4))
    rots[:, 0] = 1.0
    if coeffs is None:
        m = basis_size(sh_order)
        coeffs = np.zeros((n, channels, m))
        if colors is not None:
            coeffs[:, :, 0] = np.asarray(colors, dtype=float).reshape(n, channels) / SH_C0
    return GaussianScene(
        means=means,
        scales=scales,
        rotations=rots,
        opacities=opac,
        sh_coeffs=coeffs,
        sh_order=sh_order,
    )


def saturated_raster() -> RasterConfig:
    """Cutoffs making a pixel-centered opacity-1 splat blend with weight ~1.

    alpha_min 0.5 confines tiny splats to their center pixel; alpha_max just
    below 1 (with a floor below the leftover transmittance) lets the blend
    weight saturate to 1 - 1e-12, so weighted target means recover splat
    colors to that accuracy.
    """
    return RasterConfig(alpha_min=0.5, alpha_max=1.0 - 1e-12, transmittance_floor=1e-14)


def shifted_axis_cameras(shifts_px, depth, width=33, height=33, focal=25.0):
    """Identity-rotation cameras shifted laterally by whole pixels at `depth`.

    A splat on the z=depth plane that projects to a pixel center in the
    unshifted view projects to a pixel center in every view.
    """
    views = []
    for sx, sy in shifts_px:
        eye = np.array([sx * depth / focal, sy * depth / focal, 0.0])
        w2c = np.eye(4)
        w2c[:3, 3] = -eye
        views.append(
            CameraView(
                world_to_camera=w2c,
                fx=focal,
                fy=focal,
                cx=(width - 1) / 2.0,
                cy=(height - 1) / 2.0,
                width=width,
                height=height,
            )
        )
    return views


def pixel_grid_fixture(
    seed=5,
    sh_order=1,
    channels=1,
    n_views=6,
    pixel_min=5,
    pixel_step=8,
    width=33,
    height=33,
    focal=25.0,
    depth=2.0,
):
    """Disjoint opacity-1 splats on a pixel grid plus integer-shift cameras.

    With `saturated_raster` every splat occupies exactly one pixel per view
    with blend weight 1 - 1e-12, so solve/refine fixed-point properties hold
    to that accuracy.
    """
    rng = np.random.default_rng(seed)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    px = np.arange(pixel_min, width - pixel_min + 1, pixel_step)
    py = np.arange(pixel_min, height - pixel_min + 1, pixel_step)
    gx, gy = np.meshgrid(px, py)
    means = np.stack(
        [(gx.ravel() - cx) * depth / focal, (gy.ravel() - cy) * depth / focal,
         np.full(gx.size, depth)],
        axis=1,
    )
    n = means.shape[0]
    m = basis_size(sh_order)
    coeffs = np.zeros((n, channels, m))
    coeffs[:, :, 0] = rng.uniform(0.3, 0.7, size=(n, channels)) / SH_C0
    if m > 1:
        coeffs[:, :, 1:] = rng.normal(scale=0.1, size=(n, channels, m - 1))
    scene = make_scene(means, scale=1e-4, opacity=1.0, sh_order=sh_order,
                       channels=channels, coeffs=coeffs)
    shifts = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (2, 0)][:n_views]
    views = shifted_axis_cameras(shifts, depth, width=width, height=height, focal=focal)
    return scene, views


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)

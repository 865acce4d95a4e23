"""Deterministic synthetic fixtures: random scenes, orbit cameras, targets.

Used by the `synth` CLI subcommand and by the test suite for round-trip and
comparison experiments. Everything is a pure function of its arguments (plus
the seed), so fixtures are reproducible byte for byte.
"""

from __future__ import annotations

import numpy as np

from .rasterizer import RasterConfig, render
from .scene import CameraView, ChannelImage, GaussianScene
from .sh import basis_size


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(
    rng: np.random.Generator,
    n_splats: int,
    sh_order: int = 3,
    channels: int = 3,
    extent: float = 1.0,
    scale_range: tuple[float, float] = (0.02, 0.06),
    opacity_range: tuple[float, float] = (0.3, 0.95),
    dc_color_range: tuple[float, float] = (0.2, 0.8),
    rest_std: float = 0.04,
) -> GaussianScene:
    """Random splat cloud in a cube of half-width `extent` around the origin.

    Band-0 coefficients are drawn so the view-averaged color lies in
    dc_color_range; higher bands get small Gaussian coefficients, keeping
    rendered values roughly inside [0, 1].
    """
    n_basis = basis_size(sh_order)
    coeffs = np.zeros((n_splats, channels, n_basis))
    dc = rng.uniform(*dc_color_range, size=(n_splats, channels))
    coeffs[:, :, 0] = dc / 0.28209479177387814
    if n_basis > 1:
        coeffs[:, :, 1:] = rng.normal(scale=rest_std, size=(n_splats, channels, n_basis - 1))
    return GaussianScene(
        means=rng.uniform(-extent, extent, size=(n_splats, 3)),
        scales=rng.uniform(*scale_range, size=(n_splats, 3)),
        rotations=random_quaternions(rng, n_splats),
        opacities=rng.uniform(*opacity_range, size=n_splats),
        sh_coeffs=coeffs,
        sh_order=sh_order,
    )


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """world-to-camera matrix for a camera at `eye` looking at `target`.

    Camera axes: x right, y down, z forward (pixel y grows downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if abs(float(np.dot(forward, up)) / np.linalg.norm(up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ eye
    return w2c


def sphere_points(n: int, radius: float) -> np.ndarray:
    """n quasi-uniform points on a sphere (Fibonacci spiral)."""
    i = np.arange(n, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / n
    theta = 2.0 * np.pi * i / golden
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return radius * np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=1)


def orbit_cameras(
    n_views: int,
    radius: float = 4.0,
    width: int = 64,
    height: int = 64,
    fov_deg: float = 45.0,
) -> list[CameraView]:
    """Cameras on a sphere around the origin, all looking at the origin."""
    focal = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    views = []
    for eye in sphere_points(n_views, radius):
        views.append(
            CameraView(
                world_to_camera=look_at(eye),
                fx=focal,
                fy=focal,
                cx=(width - 1) / 2.0,
                cy=(height - 1) / 2.0,
                width=width,
                height=height,
            )
        )
    return views


def fixture(
    n_splats: int,
    n_views: int,
    seed: int,
    image_size: int = 64,
    sh_order: int = 3,
    channels: int = 3,
    raster: RasterConfig | None = None,
) -> tuple[GaussianScene, list[CameraView], list[ChannelImage]]:
    """Random scene, orbit cameras, and targets rendered from the scene itself."""
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, n_splats, sh_order=sh_order, channels=channels)
    views = orbit_cameras(n_views, width=image_size, height=image_size)
    raster = raster or RasterConfig()
    targets = [render(scene, view, raster) for view in views]
    return scene, views, targets

"""Analytic per-view derivative accumulation for the splat color solve.

One traversal per view produces, for every Gaussian:

- visibility: the total blend weight sum over pixels of T * alpha, where T is
  the transmittance in front of the splat from the exact same front-to-back
  traversal the renderer uses;
- weighted_target: the same blend weights contracted against a target image,
  per channel (the numerator of the visibility-weighted target color);
- basis_rows: the SH basis evaluated at the camera-to-splat direction (one
  direction per camera/Gaussian pair, at the splat mean).

Because the rendered image is linear in the SH coefficients, these three
quantities are exactly the coefficient-space derivatives of weighted pixel
sums of the render, which the tests pin against central finite differences.
Derivatives with respect to geometry are out of scope; geometry stays fixed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rasterizer import RasterConfig, _Projection, _row_chunks, _tile_order, _tile_weights
from .scene import CameraView, ChannelImage, GaussianScene
from .sh import basis_size

# Below this total blend weight a Gaussian counts as invisible in a view:
# guards the weighted-mean division, far below any single contribution at
# the default alpha_min.
VISIBILITY_EPSILON = 1e-8


@dataclass
class ViewAccumulators:
    """Per-Gaussian accumulators for one camera view."""

    visibility: np.ndarray
    weighted_target: np.ndarray
    basis_rows: np.ndarray


def _accumulate_projected(
    proj: _Projection,
    config: RasterConfig,
    target: np.ndarray,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """(visibility, weighted_target) over all Gaussians for one projection."""
    n = proj.n_gaussians
    channels = target.shape[2]
    vis = np.zeros(n, dtype=np.float64)
    wt = np.zeros((n, channels), dtype=np.float64)

    def tile_contribution(tile: int):
        res = _tile_weights(proj, config, tile)
        if res is None:
            return None
        members, weights, (y0, y1, x0, x1) = res
        ids = proj.indices[members]
        block = target[y0:y1, x0:x1, :].reshape(-1, channels)
        return ids, weights.sum(axis=0), weights.T @ block

    if threads <= 1:
        contributions = map(tile_contribution, _tile_order(proj))
    else:
        # Workers only compute; contributions are applied below in fixed tile
        # order, so results are identical for any thread count.
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunk_results = list(
                pool.map(lambda chunk: [tile_contribution(t) for t in chunk], _row_chunks(proj))
            )
        contributions = (c for chunk in chunk_results for c in chunk)

    for contrib in contributions:
        if contrib is None:
            continue
        ids, vis_add, wt_add = contrib
        vis[ids] += vis_add
        wt[ids] += wt_add
    return vis, wt


def accumulate_view(
    scene: GaussianScene,
    view: CameraView,
    config: RasterConfig,
    target: ChannelImage,
    threads: int = 1,
) -> ViewAccumulators:
    """Accumulate visibility, weighted target color, and basis rows for a view.

    Gaussians culled at projection time have visibility exactly 0 and zero
    basis rows. The result depends only on geometry, poses, and the target,
    never on the current SH coefficients.
    """
    if (target.height, target.width) != (view.height, view.width):
        raise ValueError(
            f"target is {target.width}x{target.height}, view is {view.width}x{view.height}"
        )
    proj = _Projection(scene, view, config)
    vis, wt = _accumulate_projected(proj, config, target.data, threads=threads)
    basis_rows = np.zeros((scene.n_gaussians, basis_size(scene.sh_order)), dtype=np.float64)
    basis_rows[proj.indices] = proj.basis
    return ViewAccumulators(visibility=vis, weighted_target=wt, basis_rows=basis_rows)


def target_color(acc: ViewAccumulators, i: int) -> np.ndarray | None:
    """Visibility-weighted mean target color of Gaussian i, or None if invisible."""
    v = acc.visibility[i]
    if v <= VISIBILITY_EPSILON:
        return None
    return acc.weighted_target[i] / v


def gradient_pass(
    scene: GaussianScene,
    view: CameraView,
    config: RasterConfig,
    residual: ChannelImage,
    threads: int = 1,
) -> np.ndarray:
    """Gradient of the summed squared image residual w.r.t. every SH coefficient.

    `residual` must be rendered-minus-target for the same view; the result has
    the coefficient bank's shape (n_gaussians, channels, n_basis) and equals
    2 * sum over pixels of residual * T * alpha * Y_m, exactly (geometry held
    fixed).
    """
    if (residual.height, residual.width) != (view.height, view.width):
        raise ValueError(
            f"residual is {residual.width}x{residual.height}, view is {view.width}x{view.height}"
        )
    if residual.channels != scene.channels:
        raise ValueError(
            f"residual has {residual.channels} channels, scene has {scene.channels}"
        )
    proj = _Projection(scene, view, config)
    _, wt = _accumulate_projected(proj, config, residual.data, threads=threads)
    basis_rows = np.zeros((scene.n_gaussians, basis_size(scene.sh_order)), dtype=np.float64)
    basis_rows[proj.indices] = proj.basis
    return 2.0 * np.einsum("nk,nm->nkm", wt, basis_rows)

"""Tile-based forward rasterizer for Gaussian splats.

Pipeline per view: project every Gaussian to screen space (perspective point
projection plus the local-affine covariance projection J W Sigma W^T J^T with
a 0.3-pixel low-pass diagonal), cull against the near plane and the image
rectangle, depth-sort globally (ties broken by ascending Gaussian index), bin
splats into square tiles, then alpha-blend front to back per pixel.

A splat contributes to a pixel iff the pixel lies inside the splat's
axis-aligned footprint box (footprint_sigma standard deviations of the 2D
covariance) and its blended alpha is at least alpha_min; accumulation along a
pixel stops before any splat that would drive the transmittance below
transmittance_floor. The same predicate drives tile binning, so the tiled
result is identical to an untiled per-pixel evaluation.

Colors are evaluated from the SH bank once per splat per view (at the splat
mean's view direction) and are NOT clamped: the rendered image is exactly
linear in the SH coefficients, which the solving routines rely on. The
background is zero.

The per-tile blend weights (transmittance times alpha) are exposed internally
through `_tile_weights` and reused by the adjoint accumulation, guaranteeing
that derivatives see the identical traversal as the forward pass.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scene import CameraView, ChannelImage, GaussianScene, _covariances
from .sh import ShBasis, basis_values


@dataclass
class RasterConfig:
    """Rasterization cutoffs; defaults follow common splatting conventions."""

    tile_size: int = 16
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.99
    transmittance_floor: float = 1e-4
    near_plane: float = 0.01
    footprint_sigma: float = 3.0

    def __post_init__(self) -> None:
        if self.tile_size <= 0:
            raise ValueError("tile_size must be positive")
        for name in ("alpha_min", "alpha_max", "transmittance_floor", "near_plane", "footprint_sigma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.alpha_min < self.alpha_max <= 1.0:
            raise ValueError("need alpha_min < alpha_max <= 1")


@dataclass
class ProjectedSplat:
    """One Gaussian after projection into a specific camera."""

    gaussian_index: int
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    view_dir: np.ndarray
    basis: ShBasis


class _Projection:
    """Struct-of-arrays form of a view's visible splats, depth-sorted.

    Arrays are indexed by visible-splat position; `indices` maps back to the
    scene's Gaussian indices. Tile bins preserve the depth order.
    """

    def __init__(self, scene: GaussianScene, view: CameraView, config: RasterConfig):
        self.width = view.width
        self.height = view.height
        self.n_gaussians = scene.n_gaussians
        self.channels = scene.channels
        self._tile_size = config.tile_size

        r = view.rotation
        t = view.translation
        cam = scene.means @ r.T + t
        in_front = cam[:, 2] > config.near_plane
        idx = np.nonzero(in_front)[0]

        cam = cam[idx]
        tx, ty, tz = cam[:, 0], cam[:, 1], cam[:, 2]
        inv_z = 1.0 / tz
        mean2d = np.stack(
            [view.fx * tx * inv_z + view.cx, view.fy * ty * inv_z + view.cy], axis=1
        )

        # Local affine Jacobian of the pinhole projection at each splat mean.
        n = idx.shape[0]
        jac = np.zeros((n, 2, 3), dtype=np.float64)
        jac[:, 0, 0] = view.fx * inv_z
        jac[:, 0, 2] = -view.fx * tx * inv_z * inv_z
        jac[:, 1, 1] = view.fy * inv_z
        jac[:, 1, 2] = -view.fy * ty * inv_z * inv_z

        cov3d = _covariances(scene.scales[idx], scene.rotations[idx])
        m = jac @ r[None, :, :]
        cov2d = m @ cov3d @ np.swapaxes(m, 1, 2)
        cov2d[:, 0, 0] += 0.3
        cov2d[:, 1, 1] += 0.3

        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        mid = 0.5 * (a + c)
        det = a * c - b * b
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = config.footprint_sigma * np.sqrt(lam_max)

        ix0 = np.maximum(np.ceil(mean2d[:, 0] - radius), 0.0).astype(np.int64)
        ix1 = np.minimum(np.floor(mean2d[:, 0] + radius), view.width - 1).astype(np.int64)
        iy0 = np.maximum(np.ceil(mean2d[:, 1] - radius), 0.0).astype(np.int64)
        iy1 = np.minimum(np.floor(mean2d[:, 1] + radius), view.height - 1).astype(np.int64)
        on_screen = (ix0 <= ix1) & (iy0 <= iy1)

        keep = np.nonzero(on_screen)[0]
        # Stable sort on depth: equal depths stay in ascending-index order.
        order = keep[np.argsort(tz[keep], kind="stable")]

        self.indices = idx[order]
        self.depth = tz[order]
        self.mean2d = mean2d[order]
        self.cov2d = cov2d[order]
        inv_det = 1.0 / det[order]
        self.conic = np.stack([c[order] * inv_det, -b[order] * inv_det, a[order] * inv_det], axis=1)
        self.opacity = scene.opacities[self.indices]
        self.ix0, self.ix1 = ix0[order], ix1[order]
        self.iy0, self.iy1 = iy0[order], iy1[order]

        to_splat = scene.means[self.indices] - view.camera_position()[None, :]
        norms = np.linalg.norm(to_splat, axis=1)
        self.view_dir = to_splat / np.where(norms > 0, norms, 1.0)[:, None]
        self.basis = basis_values(scene.sh_order, self.view_dir)
        self.colors = np.einsum("nkm,nm->nk", scene.sh_coeffs[self.indices], self.basis)

        self._tiles: list[np.ndarray] | None = None

    @property
    def n_visible(self) -> int:
        return self.indices.shape[0]

    @property
    def tiles_x(self) -> int:
        return -(-self.width // self._tile_size)

    @property
    def tiles_y(self) -> int:
        return -(-self.height // self._tile_size)

    def refresh_colors(self, scene: GaussianScene) -> None:
        """Re-evaluate per-splat colors after the SH bank changed (geometry fixed)."""
        self.colors = np.einsum("nkm,nm->nk", scene.sh_coeffs[self.indices], self.basis)

    def tile_bins(self) -> list[np.ndarray]:
        """Per-tile arrays of visible-splat positions, each in depth order."""
        if self._tiles is not None:
            return self._tiles
        ts = self._tile_size
        bins: list[list[int]] = [[] for _ in range(self.tiles_x * self.tiles_y)]
        tx0 = self.ix0 // ts
        tx1 = self.ix1 // ts
        ty0 = self.iy0 // ts
        ty1 = self.iy1 // ts
        for k in range(self.n_visible):
            for ty in range(ty0[k], ty1[k] + 1):
                row = ty * self.tiles_x
                for tx in range(tx0[k], tx1[k] + 1):
                    bins[row + tx].append(k)
        self._tiles = [np.asarray(b, dtype=np.int64) for b in bins]
        return self._tiles

    def tile_rect(self, tile: int) -> tuple[int, int, int, int]:
        """(y0, y1, x0, x1) pixel bounds of a tile, end-exclusive."""
        ts = self._tile_size
        ty, tx = divmod(tile, self.tiles_x)
        y0 = ty * ts
        x0 = tx * ts
        return y0, min(y0 + ts, self.height), x0, min(x0 + ts, self.width)


def _tile_weights(proj: _Projection, config: RasterConfig, tile: int):
    """Blend weights T*alpha for one tile.

    Returns (members, weights, rect) where `members` are visible-splat
    positions in depth order, `weights` is (pixels, len(members)) row-major
    over the tile rect, and rect is (y0, y1, x0, x1). Returns None for tiles
    with no candidate splats.
    """
    members = proj.tile_bins()[tile]
    if members.size == 0:
        return None
    y0, y1, x0, x1 = proj.tile_rect(tile)
    xs = np.arange(x0, x1, dtype=np.float64)
    ys = np.arange(y0, y1, dtype=np.float64)
    py = np.repeat(ys, xs.size)
    px = np.tile(xs, ys.size)

    dx = px[:, None] - proj.mean2d[members, 0][None, :]
    dy = py[:, None] - proj.mean2d[members, 1][None, :]
    in_box = (
        (px[:, None] >= proj.ix0[members])
        & (px[:, None] <= proj.ix1[members])
        & (py[:, None] >= proj.iy0[members])
        & (py[:, None] <= proj.iy1[members])
    )
    conic = proj.conic[members]
    q = conic[None, :, 0] * dx * dx + 2.0 * conic[None, :, 1] * dx * dy + conic[None, :, 2] * dy * dy
    alpha = proj.opacity[members][None, :] * np.exp(-0.5 * q)
    np.minimum(alpha, config.alpha_max, out=alpha)
    alpha[(alpha < config.alpha_min) | ~in_box] = 0.0

    trans_after = np.cumprod(1.0 - alpha, axis=1)
    trans_before = np.empty_like(trans_after)
    trans_before[:, 0] = 1.0
    trans_before[:, 1:] = trans_after[:, :-1]
    weights = np.where(trans_after >= config.transmittance_floor, trans_before * alpha, 0.0)
    return members, weights, (y0, y1, x0, x1)


def _tile_order(proj: _Projection) -> range:
    return range(proj.tiles_x * proj.tiles_y)


def _row_chunks(proj: _Projection) -> list[range]:
    """Static tile chunks (one per tile row), independent of thread count."""
    tx = proj.tiles_x
    return [range(ty * tx, (ty + 1) * tx) for ty in range(proj.tiles_y)]


def render_projected(proj: _Projection, config: RasterConfig, threads: int = 1) -> np.ndarray:
    """Alpha-blend a projection into an (H, W, C) array."""
    out = np.zeros((proj.height, proj.width, proj.channels), dtype=np.float64)
    if proj.n_visible == 0:
        return out

    def do_tile(tile: int) -> None:
        res = _tile_weights(proj, config, tile)
        if res is None:
            return
        members, weights, (y0, y1, x0, x1) = res
        block = weights @ proj.colors[members]
        out[y0:y1, x0:x1, :] = block.reshape(y1 - y0, x1 - x0, proj.channels)

    if threads <= 1:
        for tile in _tile_order(proj):
            do_tile(tile)
    else:
        # Tiles write disjoint blocks, so parallel execution is race-free and
        # the result does not depend on scheduling.
        def do_chunk(chunk: range) -> None:
            for tile in chunk:
                do_tile(tile)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(do_chunk, _row_chunks(proj)))
    return out


def project(scene: GaussianScene, view: CameraView, config: RasterConfig) -> list[ProjectedSplat]:
    """Visible splats for a view, depth-sorted, with screen-space footprints.

    Contains exactly the Gaussians in front of the near plane whose footprint
    (footprint_sigma standard deviations of the projected covariance)
    intersects the image rectangle.
    """
    proj = _Projection(scene, view, config)
    return [
        ProjectedSplat(
            gaussian_index=int(proj.indices[k]),
            mean2d=proj.mean2d[k].copy(),
            cov2d=proj.cov2d[k].copy(),
            depth=float(proj.depth[k]),
            view_dir=proj.view_dir[k].copy(),
            basis=ShBasis(values=proj.basis[k].copy()),
        )
        for k in range(proj.n_visible)
    ]


def render(
    scene: GaussianScene, view: CameraView, config: RasterConfig, threads: int = 1
) -> ChannelImage:
    """Render a view of the scene; zero background, colors unclamped."""
    proj = _Projection(scene, view, config)
    return ChannelImage(data=render_projected(proj, config, threads=threads))


def render_sum_weighted(
    scene: GaussianScene,
    view: CameraView,
    config: RasterConfig,
    weights: ChannelImage,
    threads: int = 1,
) -> np.ndarray:
    """Per-channel weighted pixel sum of the rendered view.

    Returns sum over pixels of weights * image, one scalar per channel.
    """
    if (weights.height, weights.width) != (view.height, view.width):
        raise ValueError(
            f"weight image is {weights.width}x{weights.height}, view is {view.width}x{view.height}"
        )
    if weights.channels != scene.channels:
        raise ValueError(
            f"weight image has {weights.channels} channels, scene has {scene.channels}"
        )
    img = render(scene, view, config, threads=threads)
    return np.einsum("hwk,hwk->k", weights.data, img.data)

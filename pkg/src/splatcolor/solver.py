"""Per-Gaussian weighted least-squares color solve with iterative refinement.

For every Gaussian, the camera views provide a small linear system: basis
rows y_j (SH basis at the camera-to-splat direction), visibility weights
V_j (total blend weight in that view), and visibility-weighted target colors.
The solved coefficients minimize

    sum_j V_j * (target_mean_j - y_j . c)^2  +  w * sum_m lambda_m * c_m^2

with w the total visibility over all views, via the regularized normal
equations (Y^T V Y + w * diag(lambda)) c = Y^T V target. The Gram matrix
depends only on geometry and poses, so its Cholesky factor is computed once
and reused across channels and refinement steps.

Refinement repeats the accumulation with the target replaced by the current
residual (target minus render) and applies the increment

    c <- c + (Y^T V Y + w L)^(-1) (Y^T V resid_mean - w L c)

which captures color mixing between overlapping translucent splats while
keeping every step linear in the target images.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import VISIBILITY_EPSILON, ViewAccumulators, _accumulate_projected
from .metrics import image_metrics
from .rasterizer import RasterConfig, _Projection, render_projected
from .scene import CameraView, ChannelImage, GaussianScene
from .sh import SH_C0, basis_size

# Band-constant ridge weights, one value per SH band (order 0..3).
DEFAULT_BAND_LAMBDAS = (1e-5, 1e-4, 1e-3, 1e-2)


def default_lambda_schedule(sh_order: int) -> np.ndarray:
    """Per-coefficient ridge weights: band value repeated 2l+1 times."""
    if not 0 <= sh_order < len(DEFAULT_BAND_LAMBDAS):
        raise ValueError(f"no default regularization for sh_order {sh_order}")
    out = []
    for band in range(sh_order + 1):
        out.extend([DEFAULT_BAND_LAMBDAS[band]] * (2 * band + 1))
    return np.asarray(out, dtype=np.float64)


@dataclass
class SolveConfig:
    """Solve hyperparameters.

    lambda_schedule must be band-constant (all coefficients of one SH band
    share a value); None selects the default schedule for the order.
    n_refine counts residual refinement passes; 0 suits low-resolution or
    view-independent targets (feature maps, masks).
    """

    sh_order: int = 3
    lambda_schedule: np.ndarray | None = None
    n_refine: int = 0
    min_total_visibility: float = 1e-6

    def __post_init__(self) -> None:
        if self.sh_order < 0:
            raise ValueError("sh_order must be >= 0")
        if self.n_refine < 0:
            raise ValueError("n_refine must be >= 0")
        if self.lambda_schedule is None:
            self.lambda_schedule = default_lambda_schedule(self.sh_order)
        self.lambda_schedule = np.asarray(self.lambda_schedule, dtype=np.float64)
        m = basis_size(self.sh_order)
        if self.lambda_schedule.shape != (m,):
            raise ValueError(
                f"lambda_schedule must have {m} entries for order {self.sh_order}, "
                f"got {self.lambda_schedule.shape}"
            )
        if np.any(self.lambda_schedule < 0):
            raise ValueError("lambda_schedule entries must be >= 0")
        pos = 0
        for band in range(self.sh_order + 1):
            width = 2 * band + 1
            band_vals = self.lambda_schedule[pos : pos + width]
            if np.any(band_vals != band_vals[0]):
                raise ValueError(f"lambda_schedule must be constant within band {band}")
            pos += width


@dataclass
class GaussianSystem:
    """The assembled normal-equation system of a single Gaussian."""

    gaussian_index: int
    gram: np.ndarray
    gram_factor: np.ndarray | None
    rhs: np.ndarray
    total_visibility: float


class GaussianSystems:
    """Batched per-Gaussian systems sharing geometry-only Gram factors.

    gram: (n, m, m); rhs: (n, m, channels); total_visibility: (n,).
    `solvable` marks Gaussians above the visibility threshold whose Gram
    factorization succeeded; `failed` lists those above the threshold where
    it did not (left untouched by the solve).
    """

    def __init__(
        self,
        gram: np.ndarray,
        rhs: np.ndarray,
        total_visibility: np.ndarray,
        min_total_visibility: float,
    ):
        self.gram = gram
        self.rhs = rhs
        self.total_visibility = total_visibility
        self.min_total_visibility = min_total_visibility
        n, m, _ = gram.shape
        self.factor = np.zeros_like(gram)
        self.solvable = np.zeros(n, dtype=bool)
        self.failed: list[int] = []
        candidates = np.nonzero(total_visibility > min_total_visibility)[0]
        if candidates.size:
            try:
                self.factor[candidates] = np.linalg.cholesky(gram[candidates])
                self.solvable[candidates] = True
            except np.linalg.LinAlgError:
                # Isolate the offending systems; the rest stay solvable.
                for i in candidates:
                    try:
                        self.factor[i] = np.linalg.cholesky(gram[i])
                        self.solvable[i] = True
                    except np.linalg.LinAlgError:
                        self.failed.append(int(i))

    def __len__(self) -> int:
        return self.gram.shape[0]

    def __getitem__(self, i: int) -> GaussianSystem:
        return GaussianSystem(
            gaussian_index=i,
            gram=self.gram[i],
            gram_factor=self.factor[i] if self.solvable[i] else None,
            rhs=self.rhs[i],
            total_visibility=float(self.total_visibility[i]),
        )

    def solve_all(self, rhs: np.ndarray | None = None) -> np.ndarray:
        """Coefficients (n, m, channels) for all solvable systems, zeros elsewhere."""
        if rhs is None:
            rhs = self.rhs
        out = np.zeros_like(rhs)
        mask = self.solvable
        if np.any(mask):
            out[mask] = _cholesky_solve(self.factor[mask], rhs[mask])
        return out


def _cholesky_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = rhs from precomputed lower factors, batched."""
    y = np.linalg.solve(factor, rhs)
    return np.linalg.solve(np.swapaxes(factor, -1, -2), y)


def assemble(accs: list[ViewAccumulators], config: SolveConfig) -> GaussianSystems:
    """Build the per-Gaussian normal equations from per-view accumulators.

    gram_i = sum_j V_ij y_ij y_ij^T + (sum_j V_ij) diag(lambda),
    rhs_i = sum_j y_ij (weighted target)_ij; views below the visibility
    epsilon are excluded from the sums.
    """
    if not accs:
        raise ValueError("need at least one view accumulator")
    m = basis_size(config.sh_order)
    n = accs[0].visibility.shape[0]
    channels = accs[0].weighted_target.shape[1]
    for acc in accs:
        if acc.visibility.shape[0] != n or acc.weighted_target.shape != (n, channels):
            raise ValueError("view accumulators disagree on scene size or channels")
        if acc.basis_rows.shape != (n, m):
            raise ValueError(
                f"basis rows have shape {acc.basis_rows.shape}, expected ({n}, {m})"
            )

    vis = np.stack([acc.visibility for acc in accs])            # (views, n)
    basis = np.stack([acc.basis_rows for acc in accs])          # (views, n, m)
    wt = np.stack([acc.weighted_target for acc in accs])        # (views, n, channels)

    total_visibility = vis.sum(axis=0)
    above = vis > VISIBILITY_EPSILON
    vis_used = np.where(above, vis, 0.0)
    wt_used = np.where(above[:, :, None], wt, 0.0)

    gram = np.einsum("jn,jnm,jnp->nmp", vis_used, basis, basis)
    gram += total_visibility[:, None, None] * np.diag(config.lambda_schedule)[None, :, :]
    rhs = np.einsum("jnm,jnk->nmk", basis, wt_used)
    return GaussianSystems(gram, rhs, total_visibility, config.min_total_visibility)


def solve(system: GaussianSystem) -> np.ndarray:
    """Coefficients (n_basis, channels) minimizing one Gaussian's objective.

    One factorization is shared across all channels. Raises if the system has
    no usable factorization (insufficient visibility or a non-positive-definite
    Gram matrix).
    """
    if system.gram_factor is None:
        raise np.linalg.LinAlgError(
            f"gaussian {system.gaussian_index}: no factorization "
            f"(total visibility {system.total_visibility:.3g})"
        )
    return _cholesky_solve(system.gram_factor, system.rhs)


@dataclass
class SolveReport:
    """What the colorization pass did: timings, coverage, residual metrics."""

    n_gaussians: int
    n_solved: int
    skipped: np.ndarray
    failed: list[int]
    timings: dict[str, float]
    view_metrics: list[dict[str, float]]
    systems: GaussianSystems | None = None
    refine_trace: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        mean = {
            key: float(np.mean([vm[key] for vm in self.view_metrics]))
            for key in ("l1", "l2", "psnr")
        } if self.view_metrics else {}
        return {
            "n_gaussians": self.n_gaussians,
            "n_solved": self.n_solved,
            "n_skipped": int(self.skipped.size),
            "failed": self.failed,
            "timings_s": self.timings,
            "view_metrics": self.view_metrics,
            "mean_metrics": mean,
            "refine_trace": self.refine_trace,
        }

    def to_text(self) -> str:
        d = self.to_dict()
        lines = [
            f"gaussians solved: {self.n_solved}/{self.n_gaussians} "
            f"(skipped {d['n_skipped']}, failed {len(self.failed)})",
            "timings: " + ", ".join(f"{k} {v:.3f}s" for k, v in self.timings.items()),
        ]
        for i, vm in enumerate(self.view_metrics):
            lines.append(
                f"view {i}: L1 {vm['l1']:.6g}  L2 {vm['l2']:.6g}  PSNR {vm['psnr']:.2f} dB"
            )
        if d["mean_metrics"]:
            mm = d["mean_metrics"]
            lines.append(
                f"mean: L1 {mm['l1']:.6g}  L2 {mm['l2']:.6g}  PSNR {mm['psnr']:.2f} dB"
            )
        for row in self.refine_trace:
            lines.append(f"refine step {row['step']}: mean L2 {row['mean_l2']:.6g}")
        return "\n".join(lines)


def _check_inputs(
    scene: GaussianScene, views: list[CameraView], targets: list[ChannelImage]
) -> None:
    if not views:
        raise ValueError("no views given")
    if len(targets) != len(views):
        raise ValueError(f"{len(views)} views but {len(targets)} targets")
    for j, (view, target) in enumerate(zip(views, targets)):
        if (target.height, target.width) != (view.height, view.width):
            raise ValueError(
                f"view {j}: target is {target.width}x{target.height}, "
                f"view is {view.width}x{view.height}"
            )
        if target.channels != scene.channels:
            raise ValueError(
                f"view {j}: target has {target.channels} channels, "
                f"scene bank has {scene.channels}"
            )


def colorize(
    scene: GaussianScene,
    views: list[CameraView],
    targets: list[ChannelImage],
    config: SolveConfig,
    raster: RasterConfig | None = None,
    threads: int = 1,
) -> SolveReport:
    """Solve new SH coefficients for the scene from posed target images.

    Writes coefficients in place for every Gaussian whose total visibility
    exceeds the configured threshold; all others keep their prior values and
    are listed in the report. The returned report carries the assembled
    systems for reuse by `refine`.
    """
    _check_inputs(scene, views, targets)
    if scene.sh_order != config.sh_order:
        raise ValueError(
            f"scene sh_order {scene.sh_order} does not match config sh_order {config.sh_order}"
        )
    raster = raster or RasterConfig()
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    projections = [_Projection(scene, view, raster) for view in views]
    timings["project"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    accs = []
    n = scene.n_gaussians
    m = basis_size(scene.sh_order)
    for proj, target in zip(projections, targets):
        vis, wt = _accumulate_projected(proj, raster, target.data, threads=threads)
        rows = np.zeros((n, m), dtype=np.float64)
        rows[proj.indices] = proj.basis
        accs.append(ViewAccumulators(visibility=vis, weighted_target=wt, basis_rows=rows))
    timings["accumulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    systems = assemble(accs, config)
    timings["assemble"] = time.perf_counter() - t0
    if not np.any(systems.total_visibility > config.min_total_visibility):
        raise ValueError("scene is invisible in every view; nothing to solve")

    t0 = time.perf_counter()
    coeffs = systems.solve_all()
    solved = systems.solvable
    scene.sh_coeffs[solved] = coeffs[solved].transpose(0, 2, 1)
    timings["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    view_metrics = []
    for proj, target in zip(projections, targets):
        proj.refresh_colors(scene)
        img = ChannelImage(data=render_projected(proj, raster, threads=threads))
        view_metrics.append(image_metrics(img, target))
    timings["render"] = time.perf_counter() - t0

    return SolveReport(
        n_gaussians=scene.n_gaussians,
        n_solved=int(np.count_nonzero(solved)),
        skipped=np.nonzero(~solved)[0],
        failed=systems.failed,
        timings=timings,
        view_metrics=view_metrics,
        systems=systems,
    )


def refine(
    scene: GaussianScene,
    views: list[CameraView],
    targets: list[ChannelImage],
    systems: GaussianSystems,
    config: SolveConfig,
    raster: RasterConfig | None = None,
    threads: int = 1,
) -> list[dict]:
    """Run config.n_refine residual passes, updating coefficients in place.

    Geometry quantities (visibilities, basis rows, Gram factors) are reused
    from `systems`; only the weighted residual targets are re-accumulated.
    Returns one trace row per step plus a final row with the post-update
    residuals.
    """
    _check_inputs(scene, views, targets)
    raster = raster or RasterConfig()
    if systems is None:
        raise ValueError("refine requires the systems assembled by colorize")

    projections = [_Projection(scene, view, raster) for view in views]
    n = scene.n_gaussians
    m = basis_size(scene.sh_order)
    lam = config.lambda_schedule
    trace: list[dict] = []

    def residual_pass() -> tuple[np.ndarray, list[float]]:
        rhs = np.zeros_like(systems.rhs)
        view_l2 = []
        for proj, target in zip(projections, targets):
            proj.refresh_colors(scene)
            img = render_projected(proj, raster, threads=threads)
            resid = target.data - img
            view_l2.append(float(np.mean(resid**2)))
            vis, wt = _accumulate_projected(proj, raster, resid, threads=threads)
            rows = np.zeros((n, m), dtype=np.float64)
            rows[proj.indices] = proj.basis
            above = vis > VISIBILITY_EPSILON
            wt = np.where(above[:, None], wt, 0.0)
            rhs += np.einsum("nm,nk->nmk", rows, wt)
        return rhs, view_l2

    for step in range(config.n_refine):
        rhs_resid, view_l2 = residual_pass()
        trace.append({"step": step, "view_l2": view_l2, "mean_l2": float(np.mean(view_l2))})
        coeff_block = scene.sh_coeffs.transpose(0, 2, 1)  # (n, m, channels)
        penalty = systems.total_visibility[:, None, None] * lam[None, :, None] * coeff_block
        delta = systems.solve_all(rhs_resid - penalty)
        solved = systems.solvable
        scene.sh_coeffs[solved] += delta[solved].transpose(0, 2, 1)

    # Residuals after the last update.
    view_l2 = []
    for proj, target in zip(projections, targets):
        proj.refresh_colors(scene)
        img = render_projected(proj, raster, threads=threads)
        view_l2.append(float(np.mean((target.data - img) ** 2)))
    trace.append({"step": config.n_refine, "view_l2": view_l2, "mean_l2": float(np.mean(view_l2))})
    return trace


def segment(
    scene: GaussianScene,
    views: list[CameraView],
    masks: list[ChannelImage],
    threshold: float,
    config: SolveConfig | None = None,
    raster: RasterConfig | None = None,
    threads: int = 1,
) -> tuple[GaussianScene, np.ndarray]:
    """Lift per-view masks into 3D and filter the scene by solved mask value.

    Masks are single-channel images in [0, 1]. The mask channel is solved
    view-independently (order 0, no refinement); Gaussians whose solved value
    falls below `threshold`, and Gaussians without enough visibility to solve,
    are dropped. Returns the filtered scene (geometry and original color
    coefficients preserved) plus the per-Gaussian mask values (NaN where
    unsolved).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    for j, mask in enumerate(masks):
        if mask.channels != 1:
            raise ValueError(f"mask {j} has {mask.channels} channels, expected 1")

    base = config or SolveConfig(sh_order=0)
    mask_config = SolveConfig(
        sh_order=0,
        lambda_schedule=np.asarray([base.lambda_schedule[0]]),
        n_refine=0,
        min_total_visibility=base.min_total_visibility,
    )
    work = scene.with_coeffs(
        np.zeros((scene.n_gaussians, 1, 1), dtype=np.float64), sh_order=0
    )
    report = colorize(work, views, masks, mask_config, raster=raster, threads=threads)

    mask_values = work.sh_coeffs[:, 0, 0] * SH_C0
    unsolved = np.ones(scene.n_gaussians, dtype=bool)
    unsolved[np.nonzero(report.systems.solvable)[0]] = False
    mask_values[unsolved] = np.nan
    keep = mask_values >= threshold
    return scene.subset(keep), mask_values

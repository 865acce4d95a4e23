"""First-order optimizer baselines over SH coefficients (geometry frozen).

These exist for speed/quality comparison against the direct solve: the same
mean-squared image objective is minimized by full-batch gradient steps using
Adam, AdamW, RMSprop, or Adagrad. Full-batch (all training views per step)
keeps the traces deterministic. Update rules follow the original published
formulations: bias-corrected first/second moments for Adam and AdamW,
decoupled weight decay for AdamW only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .adjoint import _accumulate_projected
from .rasterizer import RasterConfig, _Projection, render_projected
from .scene import CameraView, ChannelImage, GaussianScene
from .sh import basis_size

METHODS = ("adam", "adamw", "rmsprop", "adagrad")


@dataclass
class OptimizerConfig:
    """Method selection and hyperparameters; lr defaults match the comparison
    setup (0.0025 for adam/adamw/rmsprop, 0.1 for adagrad)."""

    method: str = "adam"
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    max_steps: int = 100
    time_budget: float | None = None
    eval_every: int = 10

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.learning_rate is None:
            self.learning_rate = 0.1 if self.method == "adagrad" else 0.0025
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class TraceRow:
    step: int
    seconds: float
    train_l2: float
    test_l2: float  # NaN when not evaluated this step


def write_trace(rows: list[TraceRow], path) -> None:
    """Delimited text serialization: step, seconds, train_L2, test_L2."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,seconds,train_l2,test_l2\n")
        for row in rows:
            fh.write(f"{row.step},{row.seconds:.6f},{row.train_l2:.12g},{row.test_l2:.12g}\n")


class _Update:
    """State and per-step update for one optimizer method."""

    def __init__(self, method: str, shape: tuple[int, ...]):
        self.method = method
        self.step = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def apply(self, coeffs: np.ndarray, grad: np.ndarray, opt: OptimizerConfig) -> None:
        self.step += 1
        lr = opt.learning_rate
        if self.method == "adam":
            g = grad + opt.weight_decay * coeffs
            self.m = opt.beta1 * self.m + (1.0 - opt.beta1) * g
            self.v = opt.beta2 * self.v + (1.0 - opt.beta2) * g * g
            m_hat = self.m / (1.0 - opt.beta1**self.step)
            v_hat = self.v / (1.0 - opt.beta2**self.step)
            coeffs -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
        elif self.method == "adamw":
            self.m = opt.beta1 * self.m + (1.0 - opt.beta1) * grad
            self.v = opt.beta2 * self.v + (1.0 - opt.beta2) * grad * grad
            m_hat = self.m / (1.0 - opt.beta1**self.step)
            v_hat = self.v / (1.0 - opt.beta2**self.step)
            coeffs -= lr * (m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * coeffs)
        elif self.method == "rmsprop":
            g = grad + opt.weight_decay * coeffs
            self.v = opt.beta2 * self.v + (1.0 - opt.beta2) * g * g
            coeffs -= lr * g / (np.sqrt(self.v) + opt.eps)
        else:  # adagrad
            g = grad + opt.weight_decay * coeffs
            self.v += g * g
            coeffs -= lr * g / (np.sqrt(self.v) + opt.eps)


def optimize(
    scene: GaussianScene,
    views: list[CameraView],
    targets: list[ChannelImage],
    opt: OptimizerConfig,
    test_views: list[CameraView] | None = None,
    test_targets: list[ChannelImage] | None = None,
    raster: RasterConfig | None = None,
    threads: int = 1,
) -> list[TraceRow]:
    """Gradient-descent colorization; updates the scene's SH bank in place.

    The objective is the mean squared pixel residual over all training views;
    gradients are accumulated over every view each step. Terminates after
    max_steps or once time_budget seconds have elapsed, whichever comes
    first. Returns the loss trace; test_l2 is evaluated on the held-out views
    every eval_every steps (NaN in between).
    """
    if not views:
        raise ValueError("no training views given")
    if len(targets) != len(views):
        raise ValueError(f"{len(views)} views but {len(targets)} targets")
    if (test_views is None) != (test_targets is None):
        raise ValueError("test_views and test_targets must be given together")
    for j, target in enumerate(targets):
        if target.channels != scene.channels:
            raise ValueError(
                f"view {j}: target has {target.channels} channels, "
                f"scene bank has {scene.channels}"
            )
    raster = raster or RasterConfig()

    projections = [_Projection(scene, view, raster) for view in views]
    test_projections = [_Projection(scene, view, raster) for view in (test_views or [])]
    n = scene.n_gaussians
    m = basis_size(scene.sh_order)
    n_pixels = sum(t.data.size for t in targets)
    state = _Update(opt.method, scene.sh_coeffs.shape)

    def test_l2() -> float:
        if not test_projections:
            return float("nan")
        total, count = 0.0, 0
        for proj, target in zip(test_projections, test_targets):
            proj.refresh_colors(scene)
            img = render_projected(proj, raster, threads=threads)
            total += float(np.sum((img - target.data) ** 2))
            count += target.data.size
        return total / count

    rows: list[TraceRow] = []
    start = time.perf_counter()
    for step in range(1, opt.max_steps + 1):
        grad = np.zeros_like(scene.sh_coeffs)
        train_sq = 0.0
        for proj, target in zip(projections, targets):
            proj.refresh_colors(scene)
            img = render_projected(proj, raster, threads=threads)
            resid = img - target.data
            train_sq += float(np.sum(resid**2))
            _, wt = _accumulate_projected(proj, raster, resid, threads=threads)
            rows_b = np.zeros((n, m), dtype=np.float64)
            rows_b[proj.indices] = proj.basis
            grad += 2.0 * np.einsum("nk,nm->nkm", wt, rows_b)
        grad /= n_pixels

        state.apply(scene.sh_coeffs, grad, opt)

        elapsed = time.perf_counter() - start
        evaluate = step % opt.eval_every == 0 or step == opt.max_steps
        out_of_time = opt.time_budget is not None and elapsed > opt.time_budget
        rows.append(
            TraceRow(
                step=step,
                seconds=elapsed,
                train_l2=train_sq / n_pixels,
                test_l2=test_l2() if (evaluate or out_of_time) else float("nan"),
            )
        )
        if out_of_time:
            break
    return rows

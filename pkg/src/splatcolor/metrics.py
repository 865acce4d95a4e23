"""Image comparison metrics: mean absolute error, mean squared error, PSNR."""

from __future__ import annotations

import math

import numpy as np

from .scene import ChannelImage


def _pair(a: ChannelImage, b: ChannelImage) -> tuple[np.ndarray, np.ndarray]:
    if a.data.shape != b.data.shape:
        raise ValueError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.data, b.data


def l1(a: ChannelImage, b: ChannelImage) -> float:
    da, db = _pair(a, b)
    return float(np.mean(np.abs(da - db)))


def l2(a: ChannelImage, b: ChannelImage) -> float:
    da, db = _pair(a, b)
    return float(np.mean((da - db) ** 2))


def psnr(a: ChannelImage, b: ChannelImage, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; infinity for identical images."""
    mse = l2(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def image_metrics(a: ChannelImage, b: ChannelImage) -> dict[str, float]:
    return {"l1": l1(a, b), "l2": l2(a, b), "psnr": psnr(a, b)}

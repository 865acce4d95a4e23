"""Core scene data types: Gaussian geometry, cameras, and channel images.

Geometry (means, scales, rotations, opacities) is frozen after construction;
only the spherical-harmonic coefficient bank is mutable, and it is written
solely by the solving routines between rendering passes. All in-memory
arithmetic is float64; file formats narrow to float32 at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sh import basis_size


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, shape (..., 4) -> (..., 3, 3).

    Quaternions are used as given (not renormalized); callers enforce unit norm.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    r[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    r[..., 0, 1] = 2.0 * (x * y - w * z)
    r[..., 0, 2] = 2.0 * (x * z + w * y)
    r[..., 1, 0] = 2.0 * (x * y + w * z)
    r[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    r[..., 1, 2] = 2.0 * (y * z - w * x)
    r[..., 2, 0] = 2.0 * (x * z - w * y)
    r[..., 2, 1] = 2.0 * (y * z + w * x)
    r[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return r


def covariance_from_scale_rotation(scale, rotation) -> np.ndarray:
    """3x3 covariance R S S^T R^T from per-axis scales and a unit quaternion.

    The factored storage keeps the matrix positive-semidefinite by
    construction; eigenvalues equal the squared scales. Rejects non-positive
    scales.
    """
    s = np.asarray(scale, dtype=np.float64).reshape(3)
    if np.any(s <= 0):
        raise ValueError(f"scales must be strictly positive, got {s}")
    r = quaternion_to_rotation(np.asarray(rotation, dtype=np.float64).reshape(4))
    m = r * s[None, :]
    return m @ m.T


def _covariances(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched R S S^T R^T, shapes (n, 3), (n, 4) -> (n, 3, 3)."""
    r = quaternion_to_rotation(rotations)
    m = r * scales[:, None, :]
    return m @ np.swapaxes(m, 1, 2)


@dataclass
class GaussianScene:
    """A set of anisotropic 3D Gaussians with per-channel SH color banks.

    sh_coeffs has shape (n_gaussians, channels, (sh_order+1)^2) and is the
    only mutable field. Value-level invariants (unit quaternions, positive
    scales, opacities in [0, 1]) are reported by `validate_scene` rather than
    enforced here, so that invalid data read from disk can still be inspected.
    """

    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh_coeffs: np.ndarray
    sh_order: int

    def __post_init__(self) -> None:
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64)
        n = self.means.shape[0]
        if self.means.shape != (n, 3):
            raise ValueError(f"means must have shape (n, 3), got {self.means.shape}")
        if self.scales.shape != (n, 3):
            raise ValueError(f"scales must have shape ({n}, 3), got {self.scales.shape}")
        if self.rotations.shape != (n, 4):
            raise ValueError(f"rotations must have shape ({n}, 4), got {self.rotations.shape}")
        if self.opacities.shape != (n,):
            raise ValueError(f"opacities must have shape ({n},), got {self.opacities.shape}")
        if self.sh_order < 0:
            raise ValueError(f"sh_order must be >= 0, got {self.sh_order}")
        m = basis_size(self.sh_order)
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != m:
            raise ValueError(
                f"sh_coeffs must have shape ({n}, channels, {m}), got {self.sh_coeffs.shape}"
            )

    @property
    def n_gaussians(self) -> int:
        return self.means.shape[0]

    @property
    def channels(self) -> int:
        return self.sh_coeffs.shape[1]

    def covariances(self) -> np.ndarray:
        """(n, 3, 3) world-space covariances from the factored storage."""
        return _covariances(self.scales, self.rotations)

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            means=self.means.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            sh_order=self.sh_order,
        )

    def with_coeffs(self, sh_coeffs: np.ndarray, sh_order: int) -> "GaussianScene":
        """Same geometry with a replacement coefficient bank."""
        return GaussianScene(
            means=self.means.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            sh_coeffs=np.array(sh_coeffs, dtype=np.float64),
            sh_order=sh_order,
        )

    def subset(self, selector) -> "GaussianScene":
        """Scene restricted to the selected Gaussians (bool mask or index array)."""
        idx = np.asarray(selector)
        return GaussianScene(
            means=self.means[idx],
            scales=self.scales[idx],
            rotations=self.rotations[idx],
            opacities=self.opacities[idx],
            sh_coeffs=self.sh_coeffs[idx],
            sh_order=self.sh_order,
        )


def validate_scene(scene: GaussianScene) -> list[str]:
    """Check per-Gaussian value invariants; returns one message per violation.

    An empty list means the scene is valid. Each message names the Gaussian
    index and the failed invariant.
    """
    violations: list[str] = []
    norms = np.linalg.norm(scene.rotations, axis=1)
    for i in np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]:
        violations.append(f"gaussian {i}: quaternion norm {norms[i]:.8g} is not 1 within 1e-6")
    for i in np.nonzero(np.any(scene.scales <= 0, axis=1))[0]:
        violations.append(f"gaussian {i}: scales {scene.scales[i]} not strictly positive")
    bad_opacity = (scene.opacities < 0) | (scene.opacities > 1)
    for i in np.nonzero(bad_opacity)[0]:
        violations.append(f"gaussian {i}: opacity {scene.opacities[i]:.8g} outside [0, 1]")
    return violations


@dataclass
class CameraView:
    """Pinhole camera: world-to-camera rigid transform plus pixel intrinsics.

    The camera looks down its +z axis; a point at camera coordinates
    (tx, ty, tz) projects to pixel (fx*tx/tz + cx, fy*ty/tz + cy) with pixel
    centers at integer coordinates.
    """

    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        self.world_to_camera = np.ascontiguousarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {self.world_to_camera.shape}")
        r = self.world_to_camera[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation block of world_to_camera is not orthonormal within 1e-6")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def camera_position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class ChannelImage:
    """H x W x K raster of float64 samples (row-major, channel-interleaved).

    Serves as rendered output, ground-truth target, and per-pixel weight
    image. All values must be finite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"image data must be (height, width, channels), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, width: int, height: int, channels: int) -> "ChannelImage":
        return cls(data=np.zeros((height, width, channels), dtype=np.float64))

"""Real spherical-harmonic basis evaluation for view-dependent splat colors.

Band-major ordering (band 0, then band 1 with m = -1, 0, +1, ...) with the
hard-coded constants conventional in splatting renderers, up to band 3.
The same basis is used at render time and at solve time; consistency between
the two is the only requirement, so no alternative conventions are offered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 1/sqrt(4*pi): the constant band-0 basis value.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

SQRT_4PI = float(np.sqrt(4.0 * np.pi))

MAX_ORDER = 3


def basis_size(order: int) -> int:
    """Number of basis functions for a maximum band `order`."""
    return (order + 1) ** 2


@dataclass(frozen=True)
class ShBasis:
    """Basis values Y_m(d) for one direction, band-major, length (order+1)^2."""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def basis_values(order: int, directions: np.ndarray) -> np.ndarray:
    """Evaluate the basis for a batch of unit directions.

    `directions` has shape (n, 3); the result has shape (n, (order+1)^2).
    Directions are assumed unit-length; use `sh_basis` for validated
    single-direction evaluation.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"sh order must be in [0, {MAX_ORDER}], got {order}")
    d = np.asarray(directions, dtype=np.float64)
    n = d.shape[0]
    out = np.empty((n, basis_size(order)), dtype=np.float64)
    out[:, 0] = SH_C0
    if order == 0:
        return out
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    if order == 1:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    if order == 2:
        return out
    out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis(order: int, direction) -> ShBasis:
    """Basis values at a single unit direction.

    Rejects non-unit directions (tolerance 1e-6 on the norm) and orders
    outside [0, 3].
    """
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(d))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    return ShBasis(values=basis_values(order, d[None, :])[0])


def eval_color(coeffs, basis: ShBasis) -> np.ndarray:
    """Color of a splat seen from the basis direction: per-channel dot product.

    `coeffs` has shape (channels, n_basis) or (n_basis,); the result is the
    matching (channels,) vector (or scalar array for 1-d input). Strictly
    linear: no clamping and no constant offset.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[-1] != len(basis.values):
        raise ValueError(
            f"coefficient count {c.shape[-1]} does not match basis length {len(basis.values)}"
        )
    return c @ basis.values

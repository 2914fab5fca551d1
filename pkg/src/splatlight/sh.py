"""Real spherical-harmonics basis (degree <= 3) and its direction gradient.

Sign conventions follow the usual 3DGS layout so that checkpoints from the
two worlds line up coefficient-for-coefficient.
"""
from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)

MAX_DEGREE = 3


def num_bases(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(N, B)`` and their gradients ``(N, B, 3)`` w.r.t. the
    (unit) direction components ``x, y, z``."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}]")
    n = dirs.shape[0]
    nb = num_bases(degree)
    val = np.zeros((n, nb))
    grad = np.zeros((n, nb, 3))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)

    def put(k, v, gx, gy, gz):
        val[:, k] = v
        grad[:, k, 0] = gx
        grad[:, k, 1] = gy
        grad[:, k, 2] = gz

    put(0, C0 * one, zero, zero, zero)
    if degree >= 1:
        put(1, -C1 * y, zero, -C1 * one, zero)
        put(2, C1 * z, zero, zero, C1 * one)
        put(3, -C1 * x, -C1 * one, zero, zero)
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        put(4, C2[0] * x * y, C2[0] * y, C2[0] * x, zero)
        put(5, C2[1] * y * z, zero, C2[1] * z, C2[1] * y)
        put(6, C2[2] * (2 * zz - xx - yy), -2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z)
        put(7, C2[3] * x * z, C2[3] * z, zero, C2[3] * x)
        put(8, C2[4] * (xx - yy), 2 * C2[4] * x, -2 * C2[4] * y, zero)
    if degree >= 3:
        put(9, C3[0] * y * (3 * xx - yy),
            C3[0] * 6 * x * y, C3[0] * (3 * xx - 3 * yy), zero)
        put(10, C3[1] * x * y * z,
            C3[1] * y * z, C3[1] * x * z, C3[1] * x * y)
        put(11, C3[2] * y * (4 * zz - xx - yy),
            C3[2] * (-2 * x * y), C3[2] * (4 * zz - xx - 3 * yy), C3[2] * 8 * y * z)
        put(12, C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[3] * (-6 * x * z), C3[3] * (-6 * y * z), C3[3] * (6 * zz - 3 * xx - 3 * yy))
        put(13, C3[4] * x * (4 * zz - xx - yy),
            C3[4] * (4 * zz - 3 * xx - yy), C3[4] * (-2 * x * y), C3[4] * 8 * x * z)
        put(14, C3[5] * z * (xx - yy),
            C3[5] * 2 * x * z, C3[5] * (-2 * y * z), C3[5] * (xx - yy))
        put(15, C3[6] * x * (xx - 3 * yy),
            C3[6] * (3 * xx - 3 * yy), C3[6] * (-6 * x * y), zero)
    return val, grad


def rgb_to_sh0(rgb: np.ndarray) -> np.ndarray:
    """Inverse of the degree-0 colour decode ``c = C0 * f + 0.5``."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0


def sh0_to_rgb(f0: np.ndarray) -> np.ndarray:
    return np.asarray(f0, dtype=np.float64) * C0 + 0.5

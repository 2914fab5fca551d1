"""Image containers, PNG/PFM IO and separable convolution.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in {1, 3}
and dtype float64.  Display images live in [0, 1]; derivative maps are
unbounded.  Every filter here uses edge replication at the borders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np


class ImageFormatError(ValueError):
    """Raised when an image file cannot be decoded."""


def as_image(data) -> np.ndarray:
    """Coerce ``data`` into an ``(H, W, C)`` float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW, HxWx1 or HxWx3 data, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ImageFormatError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise ImageFormatError(f"{path}: malformed PFM dimensions")
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read()
    count = width * height * channels
    if len(raw) < 4 * count:
        raise ImageFormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(raw[: 4 * count], dtype=dtype).reshape(height, width, channels)
    # PFM scanlines run bottom-to-top
    return np.ascontiguousarray(data[::-1]).astype(np.float64)


def _write_pfm(img: np.ndarray, path: Path) -> None:
    header = b"PF\n" if img.shape[2] == 3 else b"Pf\n"
    h, w = img.shape[:2]
    payload = np.ascontiguousarray(img[::-1].astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(payload.tobytes())


def load_image(path) -> np.ndarray:
    """Load an 8/16-bit PNG or a PFM file as an ``(H, W, C)`` float image.

    Integer formats are scaled by their maximum code value; PFM floats are
    returned unchanged (as float64).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() == ".pfm":
        return _read_pfm(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"{path}: unreadable image")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"{path}: unsupported bit depth {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 3:
        raw = raw[:, :, ::-1]
    elif raw.shape[2] == 4:
        raw = raw[:, :, 2::-1]
    else:
        raise ImageFormatError(f"{path}: unsupported channel count {raw.shape[2]}")
    return raw.astype(np.float64) / scale


def save_image(img, path, bits: int = 8) -> None:
    """Write ``img`` to ``path``.

    ``.pfm`` stores float32 values as-is (derivative maps, priors, depths).
    Anything else is written as PNG after clamping to [0, 1] and quantising
    to ``bits`` (8 or 16).
    """
    img = as_image(img)
    if not np.all(np.isfinite(img)):
        raise ValueError("refusing to save an image containing NaN/Inf")
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        _write_pfm(img, path)
        return
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 255 if bits == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * top).astype(np.uint8 if bits == 8 else np.uint16)
    if q.shape[2] == 3:
        q = q[:, :, ::-1]
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"could not write image: {path}")


# ---------------------------------------------------------------------------
# kernels and convolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel1D:
    """Odd-length 1D filter; ``taps[radius + t]`` is the weight at offset ``t``."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size % 2 != 1:
            raise ValueError("kernel taps must be a 1D odd-length array")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def radius(self) -> int:
        return self.taps.size // 2

    @classmethod
    def identity(cls) -> "Kernel1D":
        return cls(np.array([1.0]))


def gaussian_kernel(sigma: float, order: int = 0, radius: int | None = None) -> Kernel1D:
    """Sampled Gaussian (``order=0``) or Gaussian-derivative (``order=1``) kernel.

    The default radius is ``ceil(3 * sigma)``.  Order-0 taps sum to one.
    Order-1 taps are scaled so that filtering the ramp ``g(x) = x`` returns
    exactly 1, i.e. the filter is a calibrated d/dx.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    r = int(math.ceil(3.0 * sigma)) if radius is None else int(radius)
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    if order == 0:
        return Kernel1D(g / g.sum())
    d = -t * g
    # out(x) = sum_t k(t) f(x - t); for f = x this is -sum_t t k(t)
    d = d / -(t * d).sum()
    # exact antisymmetry keeps derivative-of-constant at exactly zero
    d = 0.5 * (d - d[::-1])
    return Kernel1D(d)


def _convolve_axis(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = taps.size // 2
    if r == 0:
        return arr * taps[0]
    n = arr.shape[axis]
    idx = np.arange(n)
    out = taps[r] * arr
    for t in range(1, r + 1):
        # offset +t reads x - t, offset -t reads x + t (edge replicated)
        lo = np.take(arr, np.clip(idx - t, 0, n - 1), axis=axis)
        hi = np.take(arr, np.clip(idx + t, 0, n - 1), axis=axis)
        out = out + (taps[r + t] * lo + taps[r - t] * hi)
    return out


def _convolve_axis_adjoint(grad: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = taps.size // 2
    if r == 0:
        return grad * taps[0]
    n = grad.shape[axis]
    g = np.moveaxis(grad, axis, 0)
    acc = np.zeros((n + 2 * r,) + g.shape[1:], dtype=np.float64)
    # forward: out[x] += k[t] * in[clip(x - t)]; pad coordinate x - t + r
    for j, t in enumerate(range(-r, r + 1)):
        start = r - t
        acc[start:start + n] += taps[j] * g
    out = acc[r:r + n].copy()
    out[0] += acc[:r].sum(axis=0)
    out[-1] += acc[r + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def convolve_separable(img, kx: Kernel1D, ky: Kernel1D) -> np.ndarray:
    """Per-channel separable convolution, ``kx`` along columns, ``ky`` along rows."""
    arr = np.asarray(img, dtype=np.float64)
    out = _convolve_axis(arr, kx.taps, axis=1)
    return _convolve_axis(out, ky.taps, axis=0)


def convolve_separable_adjoint(grad, kx: Kernel1D, ky: Kernel1D) -> np.ndarray:
    """Transpose of :func:`convolve_separable` (used by backward passes)."""
    g = np.asarray(grad, dtype=np.float64)
    out = _convolve_axis_adjoint(g, ky.taps, axis=0)
    return _convolve_axis_adjoint(out, kx.taps, axis=1)

"""Reference-free loss terms with analytic adjoints, plus PSNR/SSIM metrics.

Every loss returns ``(value, adjoint...)`` where adjoints are gradients of
the scalar value w.r.t. the named inputs, with the same shapes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .imagecore import Kernel1D, convolve_separable, convolve_separable_adjoint, gaussian_kernel

PRIOR_WEIGHT = 0.1
DEPTH_WEIGHT = 0.1
SSIM_LAMBDA = 0.2
PCC_MIN_STD = 1e-8

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def l1(x, y):
    """Mean absolute error and its subgradient w.r.t. ``x``."""
    _check_shapes(x, y)
    d = np.asarray(x, dtype=np.float64) - y
    return float(np.abs(d).mean()), np.sign(d) / d.size


def modulated_target(I_in, theta: float) -> np.ndarray:
    """Input rescaled to mean intensity ``theta``, clamped to [0, 1]."""
    I_in = np.asarray(I_in, dtype=np.float64)
    m = I_in.mean()
    if not m > 0:
        raise ValueError("exposure loss needs an input image with positive mean")
    return np.clip(theta / m * I_in, 0.0, 1.0)


def exposure_loss(R, I_in, theta: float):
    _check_shapes(R, I_in)
    return l1(R, modulated_target(I_in, theta))


def prior_loss(Pr, P):
    return l1(Pr, P)


# ---------------------------------------------------------------------------
# Pearson correlation and depth supervision
# ---------------------------------------------------------------------------

def pcc_with_grad(X, Y):
    """PCC over all entries and its gradient w.r.t. ``X``.

    Constant inputs (std <= 1e-8) fall back to ``PCC = 0`` with zero
    gradient and a warning.
    """
    _check_shapes(X, Y)
    x = np.asarray(X, dtype=np.float64)
    y = np.asarray(Y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float((xc * xc).sum())
    syy = float((yc * yc).sum())
    n = x.size
    if math.sqrt(sxx / n) <= PCC_MIN_STD or math.sqrt(syy / n) <= PCC_MIN_STD:
        warnings.warn("PCC of a constant patch is undefined; using 0", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(x)
    denom = math.sqrt(sxx * syy)
    r = float((xc * yc).sum()) / denom
    grad = yc / denom - r * xc / sxx
    return r, grad


def pcc(X, Y) -> float:
    return pcc_with_grad(X, Y)[0]


def patch_grid(h: int, w: int, patch: int) -> list[tuple[int, int, int, int]]:
    """Full, non-overlapping ``patch x patch`` windows; the whole image when
    it is smaller than one patch."""
    if h < patch or w < patch:
        return [(0, 0, h, w)]
    return [(y, x, patch, patch) for y in range(0, h - patch + 1, patch)
            for x in range(0, w - patch + 1, patch)]


def select_patches(n_patches: int, rng: np.random.Generator, fraction: float = 0.5) -> np.ndarray:
    k = max(1, int(n_patches * fraction))
    return np.sort(rng.choice(n_patches, size=k, replace=False))


@dataclass
class DepthTerms:
    global_: float
    local: float

    @property
    def total(self) -> float:
        return self.global_ + self.local


def depth_loss(Dr, D, rng: np.random.Generator, patch: int = 128, fraction: float = 0.5):
    """Global plus patch-local ``1 - PCC``.

    Returns ``(DepthTerms, adjoint on Dr)``.
    """
    _check_shapes(Dr, D)
    dr = np.asarray(Dr, dtype=np.float64)
    d = np.asarray(D, dtype=np.float64)
    r, g = pcc_with_grad(dr, d)
    glob = 1.0 - r
    grad = -g
    boxes = patch_grid(dr.shape[0], dr.shape[1], patch)
    chosen = select_patches(len(boxes), rng, fraction)
    local = 0.0
    for i in chosen:
        y, x, h, w = boxes[i]
        rp, gp = pcc_with_grad(dr[y:y + h, x:x + w], d[y:y + h, x:x + w])
        local += (1.0 - rp) / len(chosen)
        grad[y:y + h, x:x + w] -= gp / len(chosen)
    return DepthTerms(glob, local), grad


# ---------------------------------------------------------------------------
# denoising
# ---------------------------------------------------------------------------

def total_variation(R):
    """Anisotropic TV with forward differences, normalised by pixel count."""
    R = np.asarray(R, dtype=np.float64)
    dx = R[:, 1:] - R[:, :-1]
    dy = R[1:, :] - R[:-1, :]
    value = (np.abs(dx).sum() + np.abs(dy).sum()) / R.size
    g = np.zeros_like(R)
    sx = np.sign(dx) / R.size
    sy = np.sign(dy) / R.size
    g[:, 1:] += sx
    g[:, :-1] -= sx
    g[1:, :] += sy
    g[:-1, :] -= sy
    return float(value), g


def denoise_loss(R, R_K):
    """``mean((R - R_K)^2) + TV(R)``; returns ``(value, dR, dR_K)``."""
    _check_shapes(R, R_K)
    R = np.asarray(R, dtype=np.float64)
    diff = R - R_K
    mse = float((diff * diff).mean())
    gm = 2.0 * diff / diff.size
    tv, gtv = total_variation(R)
    return mse + tv, gm + gtv, -gm


# ---------------------------------------------------------------------------
# SSIM / reconstruction
# ---------------------------------------------------------------------------

def ssim_window() -> Kernel1D:
    return gaussian_kernel(SSIM_SIGMA, order=0, radius=SSIM_RADIUS)


def _ssim_parts(X, Y):
    k = ssim_window()

    def filt(a):
        return convolve_separable(a, k, k)

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = filt(X), filt(Y)
    sxx = filt(X * X) - mx * mx
    syy = filt(Y * Y) - my * my
    sxy = filt(X * Y) - mx * my
    a1 = 2 * mx * my + c1
    a2 = 2 * sxy + c2
    b1 = mx * mx + my * my + c1
    b2 = sxx + syy + c2
    return (a1 * a2) / (b1 * b2), (mx, my, a1, a2, b1, b2)


def ssim_map(X, Y) -> np.ndarray:
    _check_shapes(X, Y)
    return _ssim_parts(np.asarray(X, np.float64), np.asarray(Y, np.float64))[0]


def ssim(X, Y) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, edge-replicated borders)."""
    return float(ssim_map(X, Y).mean())


def ssim_with_grad(X, Y):
    """Mean SSIM and its gradient w.r.t. ``X``."""
    _check_shapes(X, Y)
    X = np.asarray(X, np.float64)
    Y = np.asarray(Y, np.float64)
    smap, (mx, my, a1, a2, b1, b2) = _ssim_parts(X, Y)
    n = smap.size
    # partials of the map w.r.t. local statistics, already scaled by 1/n
    d_mx = (2 * my * a2 / (b1 * b2) - 2 * mx * smap / b1) / n
    d_sxx = -smap / b2 / n
    d_sxy = 2 * a1 / (b1 * b2) / n
    # sxx = f(X^2) - mx^2, sxy = f(XY) - mx my
    d_mx_total = d_mx - 2 * mx * d_sxx - my * d_sxy
    k = ssim_window()

    def adj(a):
        return convolve_separable_adjoint(a, k, k)

    grad = adj(d_mx_total) + 2 * X * adj(d_sxx) + Y * adj(d_sxy)
    return float(smap.mean()), grad


def reconstruction_loss(R, Lr, I_in, lam: float = SSIM_LAMBDA):
    """``(1 - lam) L1(R*Lr, I_in) + lam (1 - SSIM(R*Lr, I_in))``.

    Returns ``(value, l1_value, ssim_loss_value, dR, dLr)``.
    """
    _check_shapes(R, I_in)
    _check_shapes(Lr, I_in)
    R = np.asarray(R, np.float64)
    Lr = np.asarray(Lr, np.float64)
    I_out = R * Lr
    l1v, g1 = l1(I_out, I_in)
    s, gs = ssim_with_grad(I_out, I_in)
    value = (1 - lam) * l1v + lam * (1 - s)
    g_out = (1 - lam) * g1 - lam * gs
    return value, l1v, 1 - s, g_out * Lr, g_out * R


def psnr(X, Y) -> float:
    """PSNR in dB for [0, 1] images; ``inf`` when identical."""
    _check_shapes(X, Y)
    mse = float(np.mean((np.asarray(X, np.float64) - Y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class LossBundle:
    exp: float = 0.0
    prior: float = 0.0
    depth_global: float = 0.0
    depth_local: float = 0.0
    de: float = 0.0
    rec_l1: float = 0.0
    rec_ssim: float = 0.0
    lam: float = SSIM_LAMBDA
    weights: dict = field(default_factory=lambda: {"exp": 1.0, "prior": 1.0, "depth": 1.0, "de": 1.0, "rec": 1.0})
    adjoints: dict = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> float:
        return self.depth_global + self.depth_local

    @property
    def rec(self) -> float:
        return (1 - self.lam) * self.rec_l1 + self.lam * self.rec_ssim

    @property
    def total(self) -> float:
        w = self.weights
        return (w["exp"] * self.exp + w["prior"] * PRIOR_WEIGHT * self.prior
                + w["depth"] * DEPTH_WEIGHT * self.depth + w["de"] * self.de + w["rec"] * self.rec)

    def as_dict(self) -> dict:
        return {"exp": self.exp, "prior": self.prior, "depth": self.depth,
                "de": self.de, "rec": self.rec, "total": self.total}

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


def compute_losses(R, R_K, R0, Pr, Dr, Lr, I_in, P, D, theta, rng, *,
                   weights=None, patch: int = 128, pdm: bool = True) -> LossBundle:
    """Evaluate every enabled term and assemble the adjoints per input map.

    ``weights`` toggles terms (0 disables); ``R_K`` is the penultimate PDM
    stage.  Adjoint keys: ``R``, ``R_K``, ``Pr``, ``Dr``, ``Lr``.
    """
    w = {"exp": 1.0, "prior": 1.0, "depth": 1.0, "de": 1.0, "rec": 1.0}
    w.update(weights or {})
    b = LossBundle(weights=w)
    gR = np.zeros_like(R)
    gRK = np.zeros_like(R)
    gPr = np.zeros_like(Pr)
    gDr = np.zeros_like(Dr)
    gLr = np.zeros_like(Lr)
    if w["exp"]:
        b.exp, g = exposure_loss(R, I_in, theta)
        gR += w["exp"] * g
    if w["prior"]:
        b.prior, g = prior_loss(Pr, P)
        gPr += w["prior"] * PRIOR_WEIGHT * g
    if w["depth"]:
        terms, g = depth_loss(Dr, D, rng, patch=patch)
        b.depth_global, b.depth_local = terms.global_, terms.local
        gDr += w["depth"] * DEPTH_WEIGHT * g
    if w["de"]:
        b.de, g1, g2 = denoise_loss(R, R_K)
        gR += w["de"] * g1
        gRK += w["de"] * g2
    if w["rec"]:
        _, b.rec_l1, b.rec_ssim, g1, g2 = reconstruction_loss(R, Lr, I_in, b.lam)
        gR += w["rec"] * g1
        gLr += w["rec"] * g2
    b.adjoints = {"R": gR, "R_K": gRK, "Pr": gPr, "Dr": gDr, "Lr": gLr}
    return b

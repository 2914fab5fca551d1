"""Illumination-invariant structure prior and the stand-in depth target.

The prior is built on the Gaussian colour model: RGB is mapped linearly to
spectral intensity, slope and curvature planes; each plane is differentiated
with Gaussian-derivative filters and divided by the local intensity, which
cancels any global illumination gain.  The three ratio gradients are folded
into one magnitude map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import as_image, convolve_separable, gaussian_kernel

# rows: E, E_lambda, E_lambdalambda
RGB_TO_SPECTRAL = np.array([
    [0.06, 0.63, 0.27],
    [0.30, 0.04, -0.35],
    [0.34, -0.60, 0.17],
])


@dataclass(frozen=True)
class PriorConfig:
    beta: float = 1.0
    gamma: float = 1.0
    sigma: float = 1.0
    epsilon: float = 1e-4
    normalize_percentile: float = 99.0

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.normalize_percentile <= 100:
            raise ValueError("normalize_percentile must lie in (0, 100]")


@dataclass
class SpectralTriple:
    E: np.ndarray
    E_lambda: np.ndarray
    E_lambdalambda: np.ndarray

    def planes(self):
        return self.E, self.E_lambda, self.E_lambdalambda


def rgb_to_spectral(img) -> SpectralTriple:
    img = as_image(img)
    if img.shape[2] != 3:
        raise ValueError("spectral transform needs a 3-channel image")
    s = img @ RGB_TO_SPECTRAL.T
    return SpectralTriple(s[:, :, 0:1], s[:, :, 1:2], s[:, :, 2:3])


def ratio_gradients(img, cfg: PriorConfig = PriorConfig()):
    """Per-plane ``(d/dx, d/dy)`` of each spectral plane divided by ``E + eps``.

    ``E`` in the denominator is measured at the same Gaussian scale as the
    derivatives.
    """
    spec = rgb_to_spectral(img)
    g0 = gaussian_kernel(cfg.sigma, 0)
    g1 = gaussian_kernel(cfg.sigma, 1)
    denom = convolve_separable(spec.E, g0, g0) + cfg.epsilon
    out = []
    for plane in spec.planes():
        gx = convolve_separable(plane, g1, g0)
        gy = convolve_separable(plane, g0, g1)
        out.append((gx / denom, gy / denom))
    return out


def prior_magnitude(img, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    """Un-normalised invariant edge strength (single channel)."""
    (ex, ey), (lx, ly), (llx, lly) = ratio_gradients(img, cfg)
    sq = (ex * ex + ey * ey) + cfg.beta * (lx * lx + ly * ly) + cfg.gamma * (llx * llx + lly * lly)
    return np.sqrt(sq)


def extract_prior(img, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    """Structure prior in [0, 1]: edge magnitude over its percentile value."""
    mag = prior_magnitude(img, cfg)
    ref = max(float(np.percentile(mag, cfg.normalize_percentile)), cfg.epsilon)
    return np.clip(mag / ref, 0.0, 1.0)


def synthesize_depth_target(cloud, cam, cfg=None) -> np.ndarray:
    """Depth stand-in: alpha-normalised composite of camera-space centre
    depths, min/max normalised to [0, 1].  Uncovered pixels take the far
    end of the range."""
    from .render import render
    from .scene import project

    if len(cloud) == 0:
        raise ValueError("cannot synthesise depth from an empty cloud")
    z = project(cloud, cam).depths
    probe = cloud.copy()
    # route z through the illumination channel (exp attribute, z > 0 in front)
    probe.illum = np.repeat(np.log(np.maximum(z, 1e-12))[:, None], 3, axis=1)
    out = render(probe, cam, cfg=cfg)
    acc = 1.0 - out.transmittance
    covered = acc > 1e-6
    depth = np.where(covered, out.Lr[:, :, 0] / np.where(covered, acc, 1.0), 0.0)
    if covered.any():
        depth = np.where(covered, depth, depth[covered].max())
    lo, hi = depth.min(), depth.max()
    if hi - lo <= 1e-12:
        return np.zeros(depth.shape + (1,))
    return ((depth - lo) / (hi - lo))[:, :, None]

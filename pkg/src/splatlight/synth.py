"""Desk-scale synthetic scenes with a known clean appearance.

A random ground-truth cloud is laid out as a slab facing a fan of cameras.
Primitives are small enough that thin gaps remain between them, which gives
the scene real geometric structure.  Colours are piecewise constant over a
few Voronoi regions around a common mid-grey level.  Clean renders are kept as held-out references; training
inputs are the power-law darkened renders plus Gaussian noise.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import sh as shmod
from .imagecore import save_image
from .prior import PriorConfig, extract_prior, synthesize_depth_target
from .render import RenderConfig, render
from .scene import Camera, GaussianCloud, SceneDataset, load_manifest, logit, write_manifest, write_ply


@dataclass
class SynthSpec:
    n_gaussians: int = 300
    n_views: int = 8
    resolution: int = 64
    gamma_d: float = 2.5
    noise_sigma: float = 0.02
    seed: int = 0
    # scene design
    color_mean: float = 0.5
    color_contrast: float = 0.04
    n_regions: int = 8
    half_width: float = 1.0
    thickness: float = 0.3
    scale_range: tuple = (0.06, 0.14)
    opacity_range: tuple = (0.85, 0.98)
    camera_distance: float = 3.0
    fov_deg: float = 32.0
    max_view_angle_deg: float = 20.0
    point_fraction: float = 0.5
    point_jitter: float = 0.02
    prior_sigma: float = 3.0

    def __post_init__(self):
        if self.n_views < 2:
            raise ValueError("need at least two views")
        if self.n_gaussians < 1 or self.resolution < 4:
            raise ValueError("n_gaussians must be >= 1 and resolution >= 4")
        if not self.gamma_d > 0 or self.noise_sigma < 0:
            raise ValueError("gamma_d must be positive and noise_sigma non-negative")
        if not 0 < self.point_fraction <= 1:
            raise ValueError("point_fraction must lie in (0, 1]")
        self.scale_range = tuple(self.scale_range)
        self.opacity_range = tuple(self.opacity_range)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth options: {sorted(unknown)}")
        return cls(**d)


def degrade(clean: np.ndarray, gamma_d: float, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Power-law exposure change plus additive Gaussian noise, clipped to [0, 1]."""
    out = np.power(np.clip(clean, 0.0, 1.0), gamma_d)
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def ground_truth_cloud(spec: SynthSpec, rng: np.random.Generator) -> GaussianCloud:
    n = spec.n_gaussians
    cloud = GaussianCloud.zeros(n, max_sh_degree=0)
    hw = spec.half_width
    cloud.positions = np.column_stack([
        rng.uniform(-hw, hw, n), rng.uniform(-hw, hw, n),
        rng.uniform(-spec.thickness / 2, spec.thickness / 2, n),
    ])
    lo, hi = spec.scale_range
    cloud.log_scales = rng.uniform(math.log(lo), math.log(hi), (n, 3))
    q = rng.normal(size=(n, 4))
    cloud.rotations = q / np.linalg.norm(q, axis=1, keepdims=True)
    cloud.opacity_logits = logit(rng.uniform(*spec.opacity_range, (n, 1)))
    # piecewise-constant colour regions in the slab plane
    seeds = rng.uniform(-hw, hw, (spec.n_regions, 2))
    offsets = rng.uniform(-1.0, 1.0, (spec.n_regions, 3)) * spec.color_contrast
    region = np.argmin(((cloud.positions[:, None, :2] - seeds[None]) ** 2).sum(-1), axis=1)
    colors = np.clip(spec.color_mean + offsets[region], 0.0, 1.0)
    cloud.sh[:, 0, :] = shmod.rgb_to_sh0(colors)
    return cloud


def camera_fan(spec: SynthSpec, rng: np.random.Generator) -> list[Camera]:
    """Cameras on a spherical cap in front of the slab, all aimed at the origin."""
    cams = []
    max_a = math.radians(spec.max_view_angle_deg)
    for i in range(spec.n_views):
        az = 2 * math.pi * (i + rng.uniform(0, 0.5)) / spec.n_views
        el = max_a * math.sqrt(rng.uniform(0.25, 1.0))
        d = np.array([math.sin(el) * math.cos(az), math.sin(el) * math.sin(az), math.cos(el)])
        eye = -spec.camera_distance * d  # looking along +z towards the slab
        cams.append(Camera.look_at(eye, np.zeros(3), np.array([0.0, -1.0, 0.0]),
                                   spec.fov_deg, spec.resolution, spec.resolution))
    return cams


def synth_dataset(spec: SynthSpec | dict, out_dir) -> SceneDataset:
    """Write a complete scene directory and return its loaded manifest."""
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    out = Path(out_dir)
    for sub in ("images", "references", "priors", "depths"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(spec.seed)
    rng_scene, rng_cam, rng_noise, rng_pts = (np.random.default_rng(s) for s in ss.spawn(4))
    gt = ground_truth_cloud(spec, rng_scene)
    cams = camera_fan(spec, rng_cam)
    pcfg = PriorConfig(sigma=spec.prior_sigma)
    rcfg = RenderConfig()
    names = {k: [] for k in ("images", "references", "priors", "depths")}
    for i, cam in enumerate(cams):
        clean = np.clip(render(gt, cam, cfg=rcfg).R0, 0.0, 1.0)
        noisy = degrade(clean, spec.gamma_d, spec.noise_sigma, rng_noise)
        stem = f"view_{i:02d}"
        save_image(noisy, out / "images" / f"{stem}.png", bits=16)
        save_image(clean, out / "references" / f"{stem}.png", bits=16)
        save_image(extract_prior(noisy, pcfg), out / "priors" / f"{stem}.pfm")
        save_image(synthesize_depth_target(gt, cam), out / "depths" / f"{stem}.pfm")
        names["images"].append(f"images/{stem}.png")
        names["references"].append(f"references/{stem}.png")
        names["priors"].append(f"priors/{stem}.pfm")
        names["depths"].append(f"depths/{stem}.pfm")
    # sparse, jittered "SfM" points carrying the darkened colours
    m = max(1, int(round(spec.point_fraction * len(gt))))
    pick = np.sort(rng_pts.choice(len(gt), size=m, replace=False))
    pts = gt.positions[pick] + rng_pts.normal(0.0, spec.point_jitter, (m, 3))
    cols = np.clip(shmod.sh0_to_rgb(gt.sh[pick, 0, :]), 0, 1) ** spec.gamma_d
    write_ply(out / "points.ply", pts, cols)
    write_manifest(out / "manifest.json", cams, names["images"], names["priors"], names["depths"],
                   "points.ply", names["references"])
    (out / "synth_spec.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return load_manifest(out / "manifest.json")

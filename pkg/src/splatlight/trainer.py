"""Reference-free optimisation loop: render -> PDM -> losses -> backward -> Adam."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .imagecore import load_image
from .pdm import PdmWeights, pdm_backward, pdm_forward
from .prior import PriorConfig, extract_prior, synthesize_depth_target
from .render import RenderConfig, render, render_backward
from .scene import (
    PARAM_FIELDS, Camera, GaussianCloud, GradientBundle, SceneDataset, init_cloud,
    quat_to_rotmat, save_checkpoint, scene_extent,
)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A loss term or gradient went non-finite."""


@dataclass
class TrainConfig:
    iterations: int = 15000
    densify_until: int = 5000
    densify_from: int = 500
    densify_interval: int = 100
    sh_degree_start: int = 1
    sh_degree_step: int = 1000
    max_sh_degree: int = 3
    theta: float = 0.5
    # learning rates (positions are multiplied by the scene extent)
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_structure: float = 5e-3
    lr_depth: float = 5e-3
    lr_illum: float = 5e-3
    lr_noise: float = 1e-3
    lr_pdm: float = 1e-3
    # loss toggles / weights (0 disables a term)
    loss_weights: dict = field(default_factory=lambda: {"exp": 1.0, "prior": 1.0, "depth": 1.0, "de": 1.0, "rec": 1.0})
    use_pdm: bool = True
    pdm_warmup: int = 0
    depth_patch: int | None = None
    densify_grad_threshold: float = 1.6e-4
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    background: tuple = (0.0, 0.0, 0.0)
    tile_size: int = 16
    min_alpha: float = 1.0 / 255.0
    min_transmittance: float = 1e-4
    threads: int = 1
    checkpoint_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        rates = [v for k, v in asdict(self).items() if k.startswith("lr_")]
        if any(not r >= 0 for r in rates):
            raise ValueError("learning rates must be non-negative")
        if self.densify_until > self.iterations and self.iterations > 0:
            self.densify_until = self.iterations
        w = {"exp": 1.0, "prior": 1.0, "depth": 1.0, "de": 1.0, "rec": 1.0}
        unknown = set(self.loss_weights) - set(w)
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")
        w.update(self.loss_weights)
        self.loss_weights = w
        self.background = tuple(float(v) for v in self.background)

    def render_config(self) -> RenderConfig:
        return RenderConfig(tile_size=self.tile_size, min_alpha=self.min_alpha,
                            min_transmittance=self.min_transmittance, threads=self.threads)

    def patch_size(self, height: int, width: int) -> int:
        if self.depth_patch:
            return self.depth_patch
        return 32 if max(height, width) < 256 else 128

    def sh_degree_at(self, step: int) -> int:
        return min(self.max_sh_degree, self.sh_degree_start + step // max(1, self.sh_degree_step))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15
SH_REST_DIV = 20.0


@dataclass
class AdamState:
    """First/second moments per parameter array; keys are cloud field names
    plus ``pdm.<i>`` for network arrays."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, cloud: GaussianCloud, pdm_w: PdmWeights | None) -> "AdamState":
        st = cls()
        for k in PARAM_FIELDS:
            st.m[k] = np.zeros_like(getattr(cloud, k))
            st.v[k] = np.zeros_like(getattr(cloud, k))
        if pdm_w is not None:
            for i, a in enumerate(pdm_w.arrays()):
                st.m[f"pdm.{i}"] = np.zeros_like(a)
                st.v[f"pdm.{i}"] = np.zeros_like(a)
        return st

    def update(self, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        m = self.m[key] = ADAM_BETA1 * self.m[key] + (1 - ADAM_BETA1) * grad
        v = self.v[key] = ADAM_BETA2 * self.v[key] + (1 - ADAM_BETA2) * grad * grad
        t = self.step
        mhat = m / (1 - ADAM_BETA1 ** t)
        vhat = v / (1 - ADAM_BETA2 ** t)
        return param - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)

    def remap_rows(self, keep: np.ndarray, n_new: int) -> None:
        """Keep rows ``keep`` of every cloud moment and append ``n_new`` zero rows."""
        for k in PARAM_FIELDS:
            for store in (self.m, self.v):
                a = store[k][keep]
                store[k] = np.concatenate([a, np.zeros((n_new,) + a.shape[1:])])

    def audit(self, cloud: GaussianCloud) -> None:
        for k in PARAM_FIELDS:
            shape = getattr(cloud, k).shape
            if self.m[k].shape != shape or self.v[k].shape != shape:
                raise AssertionError(f"optimizer state for {k} has shape {self.m[k].shape}, cloud {shape}")


# ---------------------------------------------------------------------------
# training state and one step
# ---------------------------------------------------------------------------

@dataclass
class View:
    camera: Camera
    image: np.ndarray
    prior: np.ndarray
    depth: np.ndarray
    reference: np.ndarray | None = None


@dataclass
class TrainState:
    adam: AdamState
    extent: float
    rng_patch: np.random.Generator
    rng_densify: np.random.Generator
    grad_accum: np.ndarray
    grad_count: np.ndarray
    step: int = 0

    @classmethod
    def create(cls, cloud, pdm_w, extent: float, seed: int) -> "TrainState":
        ss = np.random.SeedSequence(seed)
        _, s_patch, s_dens = ss.spawn(3)
        return cls(AdamState.for_params(cloud, pdm_w), extent,
                   np.random.default_rng(s_patch), np.random.default_rng(s_dens),
                   np.zeros(len(cloud)), np.zeros(len(cloud)))


@dataclass
class StepResult:
    losses: losses.LossBundle
    grads: GradientBundle
    pdm_grads: PdmWeights | None
    render: object = None
    R: np.ndarray | None = None


def _cloud_lrs(cfg: TrainConfig, step: int, extent: float) -> dict:
    frac = min(1.0, step / max(1, cfg.iterations))
    if cfg.lr_position_init > 0 and cfg.lr_position_final > 0:
        lpos = math.exp((1 - frac) * math.log(cfg.lr_position_init) + frac * math.log(cfg.lr_position_final))
    else:
        lpos = cfg.lr_position_init
    return {
        "positions": lpos * extent, "rotations": cfg.lr_rotation, "log_scales": cfg.lr_scale,
        "opacity_logits": cfg.lr_opacity, "sh": cfg.lr_sh, "structure_logits": cfg.lr_structure,
        "illum": cfg.lr_illum, "depth_logits": cfg.lr_depth, "noise": cfg.lr_noise,
    }


def forward_backward(cloud: GaussianCloud, pdm_w: PdmWeights | None, view: View,
                     cfg: TrainConfig, rng_patch: np.random.Generator, weights=None) -> StepResult:
    """One forward pass through renderer, PDM and losses, then the full
    backward pass.  No parameters are modified."""
    weights = dict(cfg.loss_weights if weights is None else weights)
    cam = view.camera
    out = render(cloud, cam, cfg.background, cfg.render_config())
    use_pdm = cfg.use_pdm and pdm_w is not None
    if use_pdm:
        trace = pdm_forward(out.R0, out.Ngs, pdm_w)
        R, R_K = trace.output, trace.R[-2]
    else:
        trace = None
        R = R_K = out.R0
    bundle = losses.compute_losses(
        R, R_K, out.R0, out.Pr, out.Dr, out.Lr, view.image, view.prior, view.depth,
        cfg.theta, rng_patch, weights=weights, patch=cfg.patch_size(cam.height, cam.width),
    )
    for name, value in bundle.as_dict().items():
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss term {name!r}")
    adj = bundle.adjoints
    if use_pdm:
        pdm_grads, gR0, gNgs = pdm_backward(trace, pdm_w, adj["R"], {len(trace.R) - 1: adj["R_K"]})
    else:
        pdm_grads = None
        gR0 = adj["R"] + adj["R_K"]
        gNgs = np.zeros_like(out.Ngs)
    grads = render_backward(cloud, cam, out, {
        "R0": gR0, "Pr": adj["Pr"], "Dr": adj["Dr"], "Lr": adj["Lr"], "Ngs": gNgs,
    })
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name!r}")
    return StepResult(bundle, grads, pdm_grads, out, R)


def train_step(cloud: GaussianCloud, pdm_w: PdmWeights | None, view: View,
               cfg: TrainConfig, state: TrainState) -> StepResult:
    """Forward/backward plus one Adam update, in place on ``cloud`` / ``pdm_w``."""
    try:
        res = forward_backward(cloud, pdm_w, view, cfg, state.rng_patch)
    except NumericalError as exc:
        raise NumericalError(f"step {state.step}: {exc}") from exc
    state.adam.step += 1
    lrs = _cloud_lrs(cfg, state.step, state.extent)
    # higher-order SH bands use a 20x smaller rate than the DC term
    sh_rate = np.full((cloud.sh.shape[1], 1), lrs["sh"] / SH_REST_DIV)
    sh_rate[0] = lrs["sh"]
    lrs["sh"] = sh_rate
    for k in PARAM_FIELDS:
        setattr(cloud, k, state.adam.update(k, getattr(cloud, k), getattr(res.grads, k), lrs[k]))
    cloud.normalize_rotations()
    if res.pdm_grads is not None and state.step >= cfg.pdm_warmup:
        lr = cfg.lr_pdm
        new = [state.adam.update(f"pdm.{i}", a, g, lr)
               for i, (a, g) in enumerate(zip(pdm_w.arrays(), res.pdm_grads.arrays()))]
        pdm_w.kernels = new[:3]
        pdm_w.biases = new[3:]
    visible = np.any(res.grads.means2d != 0, axis=1)
    state.grad_accum[visible] += np.linalg.norm(res.grads.positions[visible], axis=1)
    state.grad_count[visible] += 1
    state.step += 1
    return res


# ---------------------------------------------------------------------------
# density control
# ---------------------------------------------------------------------------

SPLIT_SCALE_DIV = 1.6


def densify_and_prune(cloud: GaussianCloud, state: TrainState, cfg: TrainConfig) -> GaussianCloud:
    """Clone small / split large high-gradient primitives, prune transparent ones.

    Returns the new cloud; ``state`` (optimizer moments and gradient
    accumulators) is resized to match.
    """
    n = len(cloud)
    mean_grad = np.where(state.grad_count > 0, state.grad_accum / np.maximum(state.grad_count, 1), 0.0)
    hot = mean_grad > cfg.densify_grad_threshold
    max_scale = cloud.scales().max(axis=1) if n else np.zeros(0)
    bound = cfg.percent_dense * state.extent
    clone = hot & (max_scale <= bound)
    split = hot & (max_scale > bound)
    rng = state.rng_densify

    def sample_offsets(src: GaussianCloud, count: int) -> np.ndarray:
        if len(src) == 0:
            return np.zeros((count, 0, 3))
        q = src.rotations / np.linalg.norm(src.rotations, axis=1, keepdims=True)
        R = quat_to_rotmat(q)
        eps = rng.standard_normal((count, len(src), 3)) * src.scales()[None]
        return np.einsum("nij,knj->kni", R, eps)

    clones = cloud.select(clone).copy()
    clones.positions = clones.positions + sample_offsets(clones, 1)[0]
    parents = cloud.select(split)
    offs = sample_offsets(parents, 2)
    children = []
    for k in range(2):
        c = parents.copy()
        c.positions = c.positions + offs[k]
        c.log_scales = c.log_scales - math.log(SPLIT_SCALE_DIV)
        children.append(c)
    keep = np.flatnonzero(~split)
    new = cloud.select(keep)
    for extra in [clones] + children:
        new = GaussianCloud.concat(new, extra)
    n_added = len(new) - len(keep)
    state.adam.remap_rows(keep, n_added)

    alive = new.opacity() >= cfg.prune_opacity
    if not alive.all():
        new = new.select(alive)
        state.adam.remap_rows(np.flatnonzero(alive), 0)
    if len(new) == 0:
        warnings.warn("density control pruned every primitive; the cloud is empty", RuntimeWarning)
    state.grad_accum = np.zeros(len(new))
    state.grad_count = np.zeros(len(new))
    state.adam.audit(new)
    log.debug("densify: clone %d split %d prune %d -> %d", clone.sum(), split.sum(),
              int((~alive).sum()), len(new))
    return new


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

def load_views(dataset: SceneDataset, cloud_for_depth: GaussianCloud | None = None,
               prior_cfg: PriorConfig = PriorConfig()) -> list[View]:
    """Load inputs; missing priors are extracted, missing depths synthesised."""
    views = []
    for i, cam in enumerate(dataset.cameras):
        img = load_image(dataset.images[i])
        if img.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"{dataset.images[i]}: size {img.shape[:2]} disagrees with camera")
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        prior = load_image(dataset.priors[i]) if dataset.priors else extract_prior(img, prior_cfg)
        if dataset.depths:
            depth = load_image(dataset.depths[i])
        else:
            if cloud_for_depth is None:
                raise ValueError("no depth maps and no cloud to synthesise them from")
            depth = synthesize_depth_target(cloud_for_depth, cam)
        ref = load_image(dataset.references[i]) if dataset.references else None
        views.append(View(cam, img, prior[:, :, :1], depth[:, :, :1], ref))
    return views


def _view_order(n: int, rng: np.random.Generator):
    while True:
        yield from rng.permutation(n)


def train(dataset: SceneDataset, cfg: TrainConfig, out_dir, views: list[View] | None = None,
          callback=None):
    """Run the full schedule; writes checkpoints and ``metrics.jsonl`` into
    ``out_dir``.  Returns ``(cloud, pdm_weights, views)``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points, colors = dataset.load_points()
    cloud = init_cloud(points, colors, cfg.max_sh_degree)
    cloud.active_sh_degree = min(cfg.sh_degree_start, cfg.max_sh_degree)
    if views is None:
        views = load_views(dataset, cloud)
    pdm_w = PdmWeights.init(cfg.seed) if cfg.use_pdm else None
    extent = scene_extent([v.camera for v in views])
    state = TrainState.create(cloud, pdm_w, extent, cfg.seed)
    rng_views = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[0])
    order = _view_order(len(views), rng_views)
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    with open(out_dir / "metrics.jsonl", "w") as metrics:
        for step in range(cfg.iterations):
            cloud.active_sh_degree = cfg.sh_degree_at(step)
            view = views[next(order)]
            res = train_step(cloud, pdm_w, view, cfg, state)
            rec = {"step": step, **res.losses.as_dict(), "n_gaussians": len(cloud)}
            metrics.write(json.dumps(rec, sort_keys=True) + "\n")
            if callback is not None:
                callback(step, res, cloud)
            done = step + 1
            if (cfg.densify_from <= done < cfg.densify_until and done % cfg.densify_interval == 0):
                cloud = densify_and_prune(cloud, state, cfg)
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.iterations:
                save_checkpoint(out_dir / f"checkpoint_{done:06d}.ckpt", cloud, pdm_w, done)
    save_checkpoint(out_dir / "checkpoint.ckpt", cloud, pdm_w, cfg.iterations)
    return cloud, pdm_w, views


def evaluate(cloud: GaussianCloud, pdm_w: PdmWeights | None, views: list[View], cfg: TrainConfig) -> dict:
    """View-averaged quality figures for a trained scene.

    ``rec_psnr``: PSNR of ``R * L_r`` against the degraded input;
    ``mean_R``: mean of the enhanced output; ``prior_l1``: mean ``|P_r - P|``;
    ``psnr_R`` / ``psnr_baseline``: PSNR against the clean references of the
    clipped output and of the exposure-rescaled input (only when every view
    carries a reference).
    """
    acc = {"rec_psnr": [], "mean_R": [], "prior_l1": [], "psnr_R": [], "psnr_baseline": []}
    for v in views:
        out = render(cloud, v.camera, cfg.background, cfg.render_config())
        R = pdm_forward(out.R0, out.Ngs, pdm_w).output if cfg.use_pdm and pdm_w is not None else out.R0
        acc["rec_psnr"].append(losses.psnr(R * out.Lr, v.image))
        acc["mean_R"].append(float(R.mean()))
        acc["prior_l1"].append(float(np.abs(out.Pr - v.prior).mean()))
        if v.reference is not None:
            acc["psnr_R"].append(losses.psnr(np.clip(R, 0.0, 1.0), v.reference))
            acc["psnr_baseline"].append(losses.psnr(losses.modulated_target(v.image, cfg.theta), v.reference))
    return {k: float(np.mean(a)) for k, a in acc.items() if a and len(a) == len(views)}

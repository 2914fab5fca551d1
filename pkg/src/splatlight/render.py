"""Tile-based splatting of all channel families and its analytic backward pass.

Every channel (radiance, structure, depth, illumination, noise) shares one
set of compositing weights, so the rasterizer treats the five families as
an 11-column feature matrix and composites them in a single pass.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .scene import (
    CHANNEL_SLICES, NUM_FEATURES, Camera, GaussianCloud, GradientBundle, Projection,
    features, project, rotmat_grad_to_quat, view_colors,
)

CHANNELS = ("R0", "Pr", "Dr", "Lr", "Ngs")
_CHANNEL_COLS = {
    "R0": CHANNEL_SLICES["color"], "Pr": CHANNEL_SLICES["structure"],
    "Dr": CHANNEL_SLICES["depth"], "Lr": CHANNEL_SLICES["illum"],
    "Ngs": CHANNEL_SLICES["noise"],
}


@dataclass(frozen=True)
class RenderConfig:
    """Rasterizer knobs.

    ``min_alpha`` and ``min_transmittance`` are the contribution-skip and
    early-stop thresholds; setting both to zero gives the exhaustive
    compositing used for oracle comparisons (see :meth:`exact`).
    """

    tile_size: int = 16
    min_alpha: float = 1.0 / 255.0
    min_transmittance: float = 1e-4
    max_alpha: float = 0.99
    threads: int = 1

    @classmethod
    def exact(cls, **kw) -> "RenderConfig":
        return cls(min_alpha=0.0, min_transmittance=0.0, **kw)


@dataclass
class _TileAux:
    y0: int
    x0: int
    h: int
    w: int
    idx: np.ndarray          # (n,) primitive ids in compositing order
    alpha: np.ndarray        # (P, n) effective alpha (0 when skipped/stopped)
    gauss: np.ndarray        # (P, n) Gaussian falloff
    unclamped: np.ndarray    # (P, n) alpha below max_alpha and included
    T: np.ndarray            # (P, n) transmittance before each primitive
    T_final: np.ndarray      # (P,)
    dx: np.ndarray
    dy: np.ndarray


@dataclass
class RenderOutput:
    R0: np.ndarray
    Pr: np.ndarray
    Dr: np.ndarray
    Lr: np.ndarray
    Ngs: np.ndarray
    transmittance: np.ndarray
    contributors: np.ndarray
    n_culled: int = 0
    n_skipped: int = 0
    aux: dict = field(default_factory=dict, repr=False)

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)


def _tile_ranges(proj: Projection, opacity: np.ndarray, active: np.ndarray,
                 cam: Camera, cfg: RenderConfig):
    """Inclusive tile-index rectangles per primitive (empty when inactive)."""
    ts = cfg.tile_size
    ntx = -(-cam.width // ts)
    nty = -(-cam.height // ts)
    n = len(opacity)
    lo = np.zeros((n, 2), dtype=np.int64)
    hi = np.full((n, 2), -1, dtype=np.int64)
    if n == 0:
        return lo, hi, ntx, nty
    if cfg.min_alpha <= 0:
        lo[active] = 0
        hi[active] = (ntx - 1, nty - 1)
        return lo, hi, ntx, nty
    a, b, c = proj.cov2d[:, 0, 0], proj.cov2d[:, 0, 1], proj.cov2d[:, 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    # op * G >= min_alpha  =>  Mahalanobis^2 <= 2 ln(op / min_alpha)
    ratio = np.where(active, opacity / cfg.min_alpha, 1.0)
    reach = np.sqrt(2.0 * np.log(np.maximum(ratio, 1.0)) * np.maximum(lam, 0.0))
    reach = np.where(ratio > 1.0, reach, -1.0)
    mx, my = proj.means2d[:, 0], proj.means2d[:, 1]
    x0 = np.ceil(mx - reach)
    x1 = np.floor(mx + reach)
    y0 = np.ceil(my - reach)
    y1 = np.floor(my + reach)
    hit = active & (reach >= 0) & (x1 >= 0) & (x0 <= cam.width - 1) & (y1 >= 0) & (y0 <= cam.height - 1)
    fin = np.isfinite(x0) & np.isfinite(x1) & np.isfinite(y0) & np.isfinite(y1)
    hit &= fin
    x0 = np.clip(np.where(hit, x0, 0), 0, cam.width - 1).astype(np.int64)
    x1 = np.clip(np.where(hit, x1, 0), 0, cam.width - 1).astype(np.int64)
    y0 = np.clip(np.where(hit, y0, 0), 0, cam.height - 1).astype(np.int64)
    y1 = np.clip(np.where(hit, y1, 0), 0, cam.height - 1).astype(np.int64)
    lo[hit] = np.stack([x0 // ts, y0 // ts], axis=1)[hit]
    hi[hit] = np.stack([x1 // ts, y1 // ts], axis=1)[hit]
    return lo, hi, ntx, nty


def _composite_tile(y0, x0, h, w, idx, proj, opacity, feats, bg, cfg):
    ys, xs = np.mgrid[y0:y0 + h, x0:x0 + w]
    px = xs.reshape(-1).astype(np.float64)
    py = ys.reshape(-1).astype(np.float64)
    P = px.size
    n = idx.size
    out = np.zeros((P, NUM_FEATURES))
    out[:, :3] = bg
    if n == 0:
        aux = _TileAux(y0, x0, h, w, idx, np.zeros((P, 0)), np.zeros((P, 0)),
                       np.zeros((P, 0), bool), np.zeros((P, 0)), np.ones(P), np.zeros((P, 0)), np.zeros((P, 0)))
        return out, np.ones(P), np.zeros(P, np.int64), aux
    mu = proj.means2d[idx]
    con = proj.conic[idx]
    dx = px[:, None] - mu[None, :, 0]
    dy = py[:, None] - mu[None, :, 1]
    q = con[None, :, 0] * dx * dx + 2.0 * con[None, :, 1] * dx * dy + con[None, :, 2] * dy * dy
    gauss = np.exp(-0.5 * q)
    raw = opacity[idx][None, :] * gauss
    alpha = np.minimum(raw, cfg.max_alpha)
    include = alpha >= cfg.min_alpha if cfg.min_alpha > 0 else np.ones_like(alpha, dtype=bool)
    alpha = np.where(include, alpha, 0.0)
    if cfg.min_transmittance > 0:
        # transmittance is non-increasing, so the stop mask is a prefix
        include &= np.cumprod(1.0 - alpha, axis=1) >= cfg.min_transmittance
        alpha = np.where(include, alpha, 0.0)
    T_incl = np.cumprod(1.0 - alpha, axis=1)
    T = np.empty_like(T_incl)
    T[:, 0] = 1.0
    T[:, 1:] = T_incl[:, :-1]
    T_final = T_incl[:, -1]
    wts = alpha * T
    out = wts @ feats[idx]
    out[:, :3] += T_final[:, None] * bg[None, :]
    contrib = include.sum(axis=1)
    aux = _TileAux(y0, x0, h, w, idx, alpha, gauss, include & (raw < cfg.max_alpha),
                   T, T_final, dx, dy)
    return out, T_final, contrib, aux


def render(cloud: GaussianCloud, cam: Camera, bg=(0.0, 0.0, 0.0),
           cfg: RenderConfig | None = None) -> RenderOutput:
    """Composite all five channel families front-to-back.

    Radiance composites against ``bg``; attribute channels against zero.
    Primitives are globally depth-sorted (ties by index) and binned into
    ``cfg.tile_size`` tiles; each tile composites its own ordered list.
    """
    cfg = cfg or RenderConfig()
    bg = np.asarray(bg, dtype=np.float64).reshape(3)
    H, W = cam.height, cam.width
    proj = project(cloud, cam)
    feats = features(cloud, cam) if len(cloud) else np.zeros((0, NUM_FEATURES))
    opacity = cloud.opacity()
    active = proj.valid & (opacity > 0)
    lo, hi, ntx, nty = _tile_ranges(proj, opacity, active, cam, cfg)
    order = np.argsort(proj.depths, kind="stable")
    lo_s, hi_s = lo[order], hi[order]

    jobs = []
    ts = cfg.tile_size
    for ty in range(nty):
        for tx in range(ntx):
            sel = (lo_s[:, 0] <= tx) & (hi_s[:, 0] >= tx) & (lo_s[:, 1] <= ty) & (hi_s[:, 1] >= ty)
            y0, x0 = ty * ts, tx * ts
            jobs.append((y0, x0, min(ts, H - y0), min(ts, W - x0), order[sel]))

    def run(job):
        return _composite_tile(*job, proj, opacity, feats, bg, cfg)

    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    img = np.zeros((H, W, NUM_FEATURES))
    trans = np.ones((H, W))
    contrib = np.zeros((H, W), dtype=np.int64)
    tiles = []
    for (y0, x0, h, w, _), (out, tf, cnt, aux) in zip(jobs, results):
        img[y0:y0 + h, x0:x0 + w] = out.reshape(h, w, NUM_FEATURES)
        trans[y0:y0 + h, x0:x0 + w] = tf.reshape(h, w)
        contrib[y0:y0 + h, x0:x0 + w] = cnt.reshape(h, w)
        tiles.append(aux)

    return RenderOutput(
        R0=img[:, :, _CHANNEL_COLS["R0"]].copy(),
        Pr=img[:, :, _CHANNEL_COLS["Pr"]].copy(),
        Dr=img[:, :, _CHANNEL_COLS["Dr"]].copy(),
        Lr=img[:, :, _CHANNEL_COLS["Lr"]].copy(),
        Ngs=img[:, :, _CHANNEL_COLS["Ngs"]].copy(),
        transmittance=trans,
        contributors=contrib,
        n_culled=int(proj.culled.sum()),
        n_skipped=int(proj.degenerate.sum()),
        aux={"tiles": tiles, "proj": proj, "feats": feats, "opacity": opacity,
             "bg": bg, "n": len(cloud), "camera": cam.to_dict(), "cfg": cfg},
    )


def render_stats(output: RenderOutput) -> dict:
    """Deterministic summary used for logging and density diagnostics."""
    c = output.contributors
    return {
        "contributors_mean": float(c.mean()) if c.size else 0.0,
        "contributors_max": int(c.max()) if c.size else 0,
        "culled": int(output.n_culled),
        "skipped": int(output.n_skipped),
    }


def _stack_grad(grad_out, H, W) -> np.ndarray:
    if isinstance(grad_out, np.ndarray):
        if grad_out.shape != (H, W, NUM_FEATURES):
            raise ValueError("adjoint image must have shape (H, W, 11)")
        return grad_out
    g = np.zeros((H, W, NUM_FEATURES))
    for name, arr in grad_out.items():
        if name not in _CHANNEL_COLS:
            raise KeyError(f"unknown channel {name!r}")
        if arr is None:
            continue
        sl = _CHANNEL_COLS[name]
        g[:, :, sl] = np.asarray(arr, dtype=np.float64).reshape(H, W, sl.stop - sl.start)
    return g


def render_backward(cloud: GaussianCloud, cam: Camera, output: RenderOutput,
                    grad_out) -> GradientBundle:
    """Analytic gradients of ``<grad_out, render(cloud, cam)>``.

    ``grad_out`` maps channel names (``R0``, ``Pr``, ``Dr``, ``Lr``, ``Ngs``)
    to adjoint images, or is an ``(H, W, 11)`` array.  The bundle also
    carries the screen-space mean gradient in ``means2d``.
    """
    aux = output.aux
    if aux.get("n") != len(cloud) or aux.get("camera") != cam.to_dict():
        raise ValueError("render aux does not match the given cloud/camera")
    H, W = cam.height, cam.width
    g_img = _stack_grad(grad_out, H, W)
    proj: Projection = aux["proj"]
    feats = aux["feats"]
    opacity = aux["opacity"]
    bg = aux["bg"]
    n = len(cloud)

    g_feat = np.zeros((n, NUM_FEATURES))
    g_op = np.zeros(n)
    g_mu = np.zeros((n, 2))
    g_con = np.zeros((n, 3))

    for tile in aux["tiles"]:
        if tile.idx.size == 0:
            continue
        g = g_img[tile.y0:tile.y0 + tile.h, tile.x0:tile.x0 + tile.w].reshape(-1, NUM_FEATURES)
        idx = tile.idx
        alpha, T = tile.alpha, tile.T
        wts = alpha * T
        np.add.at(g_feat, idx, wts.T @ g)
        h = g @ feats[idx].T
        hw = h * wts
        suffix = hw.sum(axis=1, keepdims=True) - np.cumsum(hw, axis=1)
        b = g[:, :3] @ bg
        d_alpha = h * T - (suffix + (b * tile.T_final)[:, None]) / (1.0 - alpha)
        d_alpha = np.where(tile.unclamped, d_alpha, 0.0)
        gauss = tile.gauss
        np.add.at(g_op, idx, (d_alpha * gauss).sum(axis=0))
        dq = -0.5 * gauss * opacity[idx][None, :] * d_alpha
        con = proj.conic[idx]
        dx, dy = tile.dx, tile.dy
        gmx = -(dq * (2 * con[None, :, 0] * dx + 2 * con[None, :, 1] * dy)).sum(axis=0)
        gmy = -(dq * (2 * con[None, :, 1] * dx + 2 * con[None, :, 2] * dy)).sum(axis=0)
        np.add.at(g_mu, idx, np.stack([gmx, gmy], axis=1))
        gc = np.stack([(dq * dx * dx).sum(axis=0), (dq * 2 * dx * dy).sum(axis=0),
                       (dq * dy * dy).sum(axis=0)], axis=1)
        np.add.at(g_con, idx, gc)

    grads = GradientBundle.zeros_like(cloud)
    grads.means2d = g_mu
    if n == 0:
        return grads
    valid = proj.valid

    # conic -> 2D covariance -> camera covariance / Jacobian
    A, B, C = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    M = np.stack([np.stack([A, B], 1), np.stack([B, C], 1)], 1)
    gM = np.stack([np.stack([g_con[:, 0], 0.5 * g_con[:, 1]], 1),
                   np.stack([0.5 * g_con[:, 1], g_con[:, 2]], 1)], 1)
    g_cov2d = -M @ gM @ M
    J = proj.J
    Jt = np.transpose(J, (0, 2, 1))
    g_covcam = Jt @ g_cov2d @ J
    g_J = 2.0 * g_cov2d @ J @ proj.cov_cam
    g_cov3 = cam.R.T @ g_covcam @ cam.R

    Rm, s = proj.rotmat, proj.scales
    M3 = Rm * s[:, None, :]
    g_M3 = 2.0 * g_cov3 @ M3
    g_R = g_M3 * s[:, None, :]
    g_s = (g_M3 * Rm).sum(axis=1)
    grads.log_scales = np.where(valid[:, None], g_s * s, 0.0)
    qn = proj.qnorm
    g_qn = rotmat_grad_to_quat(qn, g_R)
    qlen = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    g_q = (g_qn - qn * (qn * g_qn).sum(axis=1, keepdims=True)) / np.maximum(qlen, 1e-12)
    grads.rotations = np.where(valid[:, None], g_q, 0.0)

    # camera-space centre from the Jacobian and the 2D mean
    tx, ty = proj.t_cam[:, 0], proj.t_cam[:, 1]
    z = np.where(valid, proj.t_cam[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = g_J[:, 0, 2] * (-fx / z ** 2) + g_mu[:, 0] * fx / z
    g_t[:, 1] = g_J[:, 1, 2] * (-fy / z ** 2) + g_mu[:, 1] * fy / z
    g_t[:, 2] = (g_J[:, 0, 0] * (-fx / z ** 2) + g_J[:, 0, 2] * (2 * fx * tx / z ** 3)
                 + g_J[:, 1, 1] * (-fy / z ** 2) + g_J[:, 1, 2] * (2 * fy * ty / z ** 3)
                 - g_mu[:, 0] * fx * tx / z ** 2 - g_mu[:, 1] * fy * ty / z ** 2)
    g_t[~valid] = 0.0
    g_pos = g_t @ cam.R

    op = opacity
    grads.opacity_logits = (g_op * op * (1.0 - op))[:, None]

    # features
    rgb, basis, bgrad, dirs, dist, positive = view_colors(cloud, cam)
    g_rgb = np.where(positive, g_feat[:, CHANNEL_SLICES["color"]], 0.0)
    nb = basis.shape[1]
    grads.sh[:, :nb, :] = basis[:, :, None] * g_rgb[:, None, :]
    g_basis = np.einsum("nbc,nc->nb", cloud.sh[:, :nb, :], g_rgb)
    g_dir = np.einsum("nb,nbk->nk", g_basis, bgrad)
    g_v = (g_dir - dirs * (dirs * g_dir).sum(axis=1, keepdims=True)) / np.maximum(dist, 1e-12)[:, None]
    grads.positions = g_pos + g_v

    p = cloud.structure()
    grads.structure_logits = (g_feat[:, 3] * p * (1 - p))[:, None]
    d = cloud.depth_attr()
    grads.depth_logits = (g_feat[:, 4] * d * (1 - d))[:, None]
    grads.illum = g_feat[:, CHANNEL_SLICES["illum"]] * cloud.illumination()
    grads.noise = g_feat[:, CHANNEL_SLICES["noise"]].copy()
    return grads

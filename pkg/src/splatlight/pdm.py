"""Progressive denoising: bootstrapped noise estimates refined by a tiny CNN.

Stage ``k`` estimates a noise map from the current image, refines it with
a shared three-layer 3x3 network and subtracts it from the raw render::

    N_hat_0 = (R_0 - blur(R_0) + N_gs) / 2
    N_hat_k = R_k - blur(R_k)                       (k >= 1)
    N_{k+1} = N_hat_k - F(N_hat_k)
    R_{k+1} = R_0 - N_{k+1}

Forward and backward are written out by hand (shifted-copy convolutions).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import Kernel1D, convolve_separable, convolve_separable_adjoint, gaussian_kernel

NUM_STAGES = 3
HIDDEN = 16
BLUR_SIGMA = 1.0
BLUR_RADIUS = 2  # 5x5 window


def blur_kernel() -> Kernel1D:
    return gaussian_kernel(BLUR_SIGMA, order=0, radius=BLUR_RADIUS)


def blur(img: np.ndarray) -> np.ndarray:
    k = blur_kernel()
    return convolve_separable(img, k, k)


def blur_adjoint(grad: np.ndarray) -> np.ndarray:
    k = blur_kernel()
    return convolve_separable_adjoint(grad, k, k)


@dataclass
class PdmWeights:
    """Conv taps ``(3, 3, C_in, C_out)`` and biases per layer (3 -> 16 -> 16 -> 3)."""

    kernels: list
    biases: list

    def __post_init__(self):
        if len(self.kernels) != 3 or len(self.biases) != 3:
            raise ValueError("PDM network has exactly three layers")
        self.kernels = [np.asarray(k, dtype=np.float64) for k in self.kernels]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, b in zip(self.kernels, self.biases):
            if k.ndim != 4 or k.shape[:2] != (3, 3) or b.shape != (k.shape[3],):
                raise ValueError("malformed PDM layer shapes")

    @classmethod
    def init(cls, seed: int = 0, hidden: int = HIDDEN) -> "PdmWeights":
        """He-normal taps, zero biases."""
        rng = np.random.default_rng(seed)
        plan = [(3, hidden), (hidden, hidden), (hidden, 3)]
        ks = [rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), size=(3, 3, cin, cout)) for cin, cout in plan]
        return cls(ks, [np.zeros(cout) for _, cout in plan])

    @classmethod
    def zeros(cls, hidden: int = HIDDEN) -> "PdmWeights":
        plan = [(3, hidden), (hidden, hidden), (hidden, 3)]
        return cls([np.zeros((3, 3, a, b)) for a, b in plan], [np.zeros(b) for _, b in plan])

    def arrays(self) -> list[np.ndarray]:
        return [*self.kernels, *self.biases]

    def named_arrays(self):
        for i, k in enumerate(self.kernels):
            yield f"w{i}", k
        for i, b in enumerate(self.biases):
            yield f"b{i}", b

    @classmethod
    def from_named_arrays(cls, arrays: dict) -> "PdmWeights":
        return cls([arrays[f"w{i}"] for i in range(3)], [arrays[f"b{i}"] for i in range(3)])

    def copy(self) -> "PdmWeights":
        return PdmWeights([k.copy() for k in self.kernels], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _shifts(x: np.ndarray) -> np.ndarray:
    """Edge-replicated 3x3 neighbourhoods, shift-major: ``(H, W, C) -> (9, H*W, C)``.

    Slice ``3*dy + dx`` holds the input sampled at offset ``(dy-1, dx-1)``.
    """
    H, W, C = x.shape
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.empty((9, H, W, C))
    for dy in range(3):
        for dx in range(3):
            out[3 * dy + dx] = p[dy:dy + H, dx:dx + W, :]
    return out.reshape(9, H * W, C)


def _unshift(g: np.ndarray, H: int, W: int) -> np.ndarray:
    """Adjoint of :func:`_shifts`: ``(9, H*W, C) -> (H, W, C)``."""
    C = g.shape[2]
    g = g.reshape(9, H, W, C)
    p = np.zeros((H + 2, W + 2, C))
    for dy in range(3):
        for dx in range(3):
            p[dy:dy + H, dx:dx + W, :] += g[3 * dy + dx]
    # fold replicated border back onto the edge pixels
    p[1, :, :] += p[0, :, :]
    p[H, :, :] += p[H + 1, :, :]
    p[:, 1, :] += p[:, 0, :]
    p[:, W, :] += p[:, W + 1, :]
    return p[1:H + 1, 1:W + 1, :]


@dataclass
class _NetCache:
    cols: list = field(default_factory=list)
    pre: list = field(default_factory=list)


def network_forward(x: np.ndarray, w: PdmWeights) -> tuple[np.ndarray, _NetCache]:
    """``F(x)``: conv-ReLU-conv-ReLU-conv with edge padding."""
    H, W, _ = x.shape
    cache = _NetCache()
    h = x
    for layer, (k, b) in enumerate(zip(w.kernels, w.biases)):
        cols = _shifts(h)
        taps = k.reshape(9, k.shape[2], k.shape[3])
        pre = np.matmul(cols, taps).sum(axis=0) + b
        cache.cols.append(cols)
        cache.pre.append(pre)
        out = np.maximum(pre, 0.0) if layer < 2 else pre
        h = out.reshape(H, W, k.shape[3])
    return h, cache


def network_backward(grad: np.ndarray, cache: _NetCache, w: PdmWeights):
    """Returns ``(dL/dx, [dL/dkernel], [dL/dbias])`` for one network call."""
    H, W, _ = grad.shape
    g = grad.reshape(H * W, -1)
    gks = [None] * 3
    gbs = [None] * 3
    for layer in (2, 1, 0):
        k = w.kernels[layer]
        if layer < 2:
            g = g * (cache.pre[layer] > 0)
        cols = cache.cols[layer]
        gks[layer] = np.matmul(cols.transpose(0, 2, 1), g).reshape(k.shape)
        gbs[layer] = g.sum(axis=0)
        taps = k.reshape(9, k.shape[2], k.shape[3])
        gcols = np.matmul(g, taps.transpose(0, 2, 1))
        g = _unshift(gcols, H, W).reshape(H * W, k.shape[2])
    return g.reshape(H, W, -1), gks, gbs


def bootstrap(R_k: np.ndarray, Ngs: np.ndarray, k: int) -> np.ndarray:
    """Initial noise estimate for stage ``k`` (high-pass residual, plus the
    rendered noise map averaged in at stage 0)."""
    R_k = np.asarray(R_k, dtype=np.float64)
    if R_k.shape != np.shape(Ngs):
        raise ValueError(f"shape mismatch: {R_k.shape} vs {np.shape(Ngs)}")
    hp = R_k - blur(R_k)
    if k == 0:
        return 0.5 * (hp + Ngs)
    return hp


@dataclass
class PdmTrace:
    R0: np.ndarray
    Ngs: np.ndarray
    N_hat: list
    N: list           # N_1 .. N_K
    R: list           # R_1 .. R_K
    caches: list = field(repr=False, default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.R[-1]


def pdm_forward(R0: np.ndarray, Ngs: np.ndarray, w: PdmWeights, stages: int = NUM_STAGES) -> PdmTrace:
    R0 = np.asarray(R0, dtype=np.float64)
    Ngs = np.asarray(Ngs, dtype=np.float64)
    if not np.all(np.isfinite(R0)):
        raise ValueError("PDM input contains non-finite values")
    if not w.is_finite():
        raise ValueError("PDM weights contain non-finite values")
    trace = PdmTrace(R0, Ngs, [], [], [])
    R_k = R0
    for k in range(stages):
        n_hat = bootstrap(R_k, Ngs, k)
        f, cache = network_forward(n_hat, w)
        n_next = n_hat - f
        R_k = R0 - n_next
        trace.N_hat.append(n_hat)
        trace.N.append(n_next)
        trace.R.append(R_k)
        trace.caches.append(cache)
    return trace


def pdm_backward(trace: PdmTrace, w: PdmWeights, grad_R, grad_intermediates=None):
    """Back-propagate through all stages.

    ``grad_R`` is the adjoint on the final output; ``grad_intermediates``
    optionally maps stage index ``j`` (1-based, ``R_j``) to extra adjoints.
    Returns ``(weight_grads, grad_R0, grad_Ngs)`` where ``weight_grads`` is a
    :class:`PdmWeights` holding gradients.
    """
    K = len(trace.R)
    if not trace.caches or trace.caches[0].cols[0].shape[2] != w.kernels[0].shape[2]:
        raise ValueError("trace does not match the given weights")
    extra = dict(grad_intermediates or {})
    gR = [np.zeros_like(trace.R0) for _ in range(K + 1)]  # index j -> R_j
    gR[K] = gR[K] + np.asarray(grad_R, dtype=np.float64)
    for j, g in extra.items():
        if not 1 <= j <= K:
            raise ValueError(f"no stage output R_{j}")
        gR[j] = gR[j] + g
    gR0 = np.zeros_like(trace.R0)
    gNgs = np.zeros_like(trace.R0)
    gks = [np.zeros_like(k) for k in w.kernels]
    gbs = [np.zeros_like(b) for b in w.biases]
    for k in range(K - 1, -1, -1):
        g_Rnext = gR[k + 1]
        gR0 += g_Rnext
        g_N = -g_Rnext
        g_f = -g_N
        g_in, dk, db = network_backward(g_f, trace.caches[k], w)
        for i in range(3):
            gks[i] += dk[i]
            gbs[i] += db[i]
        g_nhat = g_N + g_in
        if k == 0:
            half = 0.5 * g_nhat
            gR0 += half - blur_adjoint(half)
            gNgs += half
        else:
            gR[k] = gR[k] + g_nhat - blur_adjoint(g_nhat)
    return PdmWeights(gks, gbs), gR0, gNgs

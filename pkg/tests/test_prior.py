import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_convolve2d
from splatlight.imagecore import convolve_separable, gaussian_kernel
from splatlight.prior import (
    RGB_TO_SPECTRAL, PriorConfig, extract_prior, prior_magnitude, rgb_to_spectral,
    synthesize_depth_target,
)
from splatlight.scene import Camera, GaussianCloud, logit


def textured(seed, h=24, w=24):
    """Smooth random texture with values in (0.05, 0.95)."""
    r = np.random.default_rng(seed)
    img = r.random((h, w, 3))
    k = gaussian_kernel(1.5, 0)
    img = convolve_separable(img, k, k)
    img = (img - img.min()) / (img.max() - img.min())
    return 0.05 + 0.9 * img


def test_spectral_transform_examples():
    def px(rgb):
        s = rgb_to_spectral(np.array(rgb, float).reshape(1, 1, 3))
        return [float(p[0, 0, 0]) for p in s.planes()]
    assert px([1, 0, 0]) == pytest.approx([0.06, 0.3, 0.34])
    assert px([0, 0, 0]) == [0.0, 0.0, 0.0]
    assert px([1, 1, 1]) == pytest.approx([0.96, -0.01, -0.09])


def test_spectral_requires_rgb():
    with pytest.raises(ValueError):
        rgb_to_spectral(np.zeros((3, 3, 1)))
    with pytest.raises(ValueError):
        extract_prior(np.zeros((3, 3, 1)))


@pytest.mark.parametrize("value", [0.0, 0.3, 1.0])
def test_constant_image_gives_exact_zero(value):
    P = extract_prior(np.full((12, 10, 3), value))
    assert P.shape == (12, 10, 1)
    assert np.all(P == 0.0)


def test_half_intensity_prior_nearly_identical():
    img = textured(0)
    assert np.abs(extract_prior(img) - extract_prior(0.5 * img)).mean() <= 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.2, 0.5, 0.8]))
def test_scale_invariance(seed, c):
    img = textured(seed, 16, 16)
    assert np.abs(extract_prior(c * img) - extract_prior(img)).mean() <= 1e-2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 3.0), st.floats(0, 2), st.floats(0, 2))
def test_output_range(seed, sigma, beta, gamma):
    P = extract_prior(np.random.default_rng(seed).random((10, 12, 3)), PriorConfig(beta, gamma, sigma))
    assert np.all(np.isfinite(P)) and P.min() >= 0.0 and P.max() <= 1.0


def _oracle_prior(img, beta, gamma, sigma=1.0, eps=1e-4, pct=99.0):
    """Full pipeline from dense 2D convolutions and explicit per-pixel maths."""
    g0, g1 = gaussian_kernel(sigma, 0).taps, gaussian_kernel(sigma, 1).taps
    planes = [img @ RGB_TO_SPECTRAL[i] for i in range(3)]
    planes = [p[:, :, None] for p in planes]
    E_s = dense_convolve2d(planes[0], g0, g0)
    out = np.zeros(img.shape[:2])
    coef = [1.0, beta, gamma]
    for w, p in zip(coef, planes):
        gx = dense_convolve2d(p, g1, g0)[:, :, 0] / (E_s[:, :, 0] + eps)
        gy = dense_convolve2d(p, g0, g1)[:, :, 0] / (E_s[:, :, 0] + eps)
        out += w * (gx ** 2 + gy ** 2)
    mag = np.sqrt(out)
    ref = max(np.percentile(mag, pct), eps)
    return np.clip(mag / ref, 0, 1)[:, :, None]


def test_step_edge_against_dense_oracle():
    img = np.full((9, 16, 3), 0.2)
    img[:, 8:, 0] = 0.8
    P = extract_prior(img)
    assert np.abs(P - _oracle_prior(img, 1.0, 1.0)).max() <= 1e-6
    assert P[:, 7:9].min() > 0.5          # edge columns respond
    assert np.all(P[:, :3] == 0) and np.all(P[:, -3:] == 0)   # far from the edge: exactly flat


def test_intensity_only_term_matches_oracle():
    img = textured(3, 12, 14)
    P = extract_prior(img, PriorConfig(beta=0.0, gamma=0.0))
    assert np.abs(P - _oracle_prior(img, 0.0, 0.0)).max() <= 1e-6


def test_magnitude_weights_enter_linearly_in_square():
    img = textured(5, 10, 10)
    m_all = prior_magnitude(img, PriorConfig(beta=1.0, gamma=1.0)) ** 2
    m_e = prior_magnitude(img, PriorConfig(beta=0.0, gamma=0.0)) ** 2
    m_l = prior_magnitude(img, PriorConfig(beta=1.0, gamma=0.0)) ** 2 - m_e
    m_ll = prior_magnitude(img, PriorConfig(beta=0.0, gamma=1.0)) ** 2 - m_e
    assert np.allclose(m_all, m_e + m_l + m_ll, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(beta=-1), dict(gamma=-0.1), dict(sigma=0), dict(epsilon=0),
                                dict(normalize_percentile=0), dict(normalize_percentile=101)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PriorConfig(**kw)


# --- depth stand-in ---------------------------------------------------------

def _axis_camera(w=16, h=8, f=20.0):
    return Camera(np.eye(3), np.zeros(3), f, f, (w - 1) / 2, (h - 1) / 2, w, h)


def test_depth_single_gaussian_is_degenerate_zero():
    cam = _axis_camera()
    cloud = GaussianCloud.zeros(1)
    cloud.positions[0] = [0, 0, 2.0]
    cloud.log_scales[:] = math.log(5.0)
    cloud.opacity_logits[:] = logit(0.99)
    D = synthesize_depth_target(cloud, cam)
    assert D.shape == (8, 16, 1) and np.all(D == 0.0)


def test_depth_two_halves_is_bimodal():
    cam = _axis_camera()
    cloud = GaussianCloud.zeros(2)
    for i, (z, px) in enumerate([(1.0, 3.5), (3.0, 11.5)]):
        x = (px - cam.cx) * z / cam.fx
        cloud.positions[i] = [x, 0.0, z]
        # ~1 px wide in x, very tall in y
        cloud.log_scales[i] = [math.log(1.0 * z / cam.fx), math.log(10.0), math.log(0.01)]
    cloud.opacity_logits[:] = logit(0.95)
    D = synthesize_depth_target(cloud, cam)[:, :, 0]
    assert np.allclose(D[:, :8], 0.0, atol=1e-12)
    assert np.allclose(D[:, 8:], 1.0, atol=1e-12)


def test_depth_empty_cloud_errors():
    with pytest.raises(ValueError):
        synthesize_depth_target(GaussianCloud.empty(), _axis_camera())

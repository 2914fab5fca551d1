import json
import math
import warnings

import numpy as np
import pytest

from conftest import random_camera, random_cloud
from splatlight.imagecore import load_image
from splatlight.pdm import PdmWeights
from splatlight.scene import PARAM_FIELDS, Camera, init_cloud, load_checkpoint, load_manifest, logit
from splatlight.synth import SynthSpec, degrade, synth_dataset
from splatlight.trainer import (
    AdamState, TrainConfig, TrainState, View, densify_and_prune, forward_backward, train, train_step,
)

TERMS = ("exp", "prior", "depth", "de", "rec")
TINY_SPEC = dict(n_gaussians=30, n_views=2, resolution=16, seed=3)


def _toy_view(rng, size=16):
    cam = Camera(np.eye(3), np.zeros(3), 20, 20, (size - 1) / 2, (size - 1) / 2, size, size)
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.stack([0.1 + 0.1 * xs, 0.15 + 0.05 * ys, 0.1 + 0.05 * xs * ys], axis=2)
    prior = np.clip(np.exp(-((xs - 0.5) ** 2 + (ys - 0.5) ** 2) * 8), 0, 1)[:, :, None]
    depth = xs[:, :, None]
    return View(cam, img, prior, depth)


def _toy_cloud():
    c = init_cloud(np.array([[0.0, 0.0, 2.0]]), np.array([[0.1, 0.1, 0.1]]))
    c.log_scales[:] = math.log(0.5)
    return c


def _random_view(rng, cam):
    return View(cam, rng.random((cam.height, cam.width, 3)) * 0.3 + 0.05,
                rng.random((cam.height, cam.width, 1)), rng.random((cam.height, cam.width, 1)))


# --- config -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_sh=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(loss_weights={"bogus": 1.0})
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"iters": 3})
    assert TrainConfig(iterations=100).densify_until == 100
    cfg = TrainConfig(loss_weights={"prior": 0})
    assert cfg.loss_weights == {"exp": 1.0, "prior": 0, "depth": 1.0, "de": 1.0, "rec": 1.0}
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_default_rates_and_schedules():
    cfg = TrainConfig()
    assert (cfg.lr_position_init, cfg.lr_position_final) == (1.6e-4, 1.6e-6)
    assert (cfg.lr_sh, cfg.lr_opacity, cfg.lr_scale, cfg.lr_rotation) == (2.5e-3, 5e-2, 5e-3, 1e-3)
    assert (cfg.lr_structure, cfg.lr_depth, cfg.lr_illum, cfg.lr_noise, cfg.lr_pdm) == (5e-3, 5e-3, 5e-3, 1e-3, 1e-3)
    assert cfg.patch_size(64, 64) == 32 and cfg.patch_size(512, 512) == 128
    assert [cfg.sh_degree_at(s) for s in (0, 999, 1000, 2000, 9000)] == [1, 1, 2, 3, 3]


# --- steps ------------------------------------------------------------------

def test_zero_rates_leave_parameters_unchanged(rng):
    zero = {k: 0.0 for k in TrainConfig.__dataclass_fields__ if k.startswith("lr_")}
    cfg = TrainConfig(iterations=10, **zero)
    cloud, view = random_cloud(rng, n=6), _random_view(rng, random_camera(rng, 12, 12))
    w = PdmWeights.init(0)
    before, wb = cloud.copy(), w.copy()
    state = TrainState.create(cloud, w, 1.0, 0)
    for _ in range(3):
        res = train_step(cloud, w, view, cfg, state)
        assert math.isfinite(res.losses.total)
    for k in PARAM_FIELDS:
        if k == "rotations":   # renormalisation only
            q = before.rotations / np.linalg.norm(before.rotations, axis=1, keepdims=True)
            assert np.allclose(cloud.rotations, q, atol=1e-15)
        else:
            assert np.array_equal(getattr(cloud, k), getattr(before, k)), k
    for a, b in zip(w.arrays(), wb.arrays()):
        assert np.array_equal(a, b)


def test_toy_loss_strictly_decreases(rng):
    cfg = TrainConfig(iterations=50)
    cloud, view = _toy_cloud(), _toy_view(rng)
    w = PdmWeights.init(0)
    state = TrainState.create(cloud, w, 1.0, 0)
    totals = [train_step(cloud, w, view, cfg, state).losses.total for _ in range(50)]
    assert all(b < a for a, b in zip(totals, totals[1:])), np.diff(totals)


@pytest.mark.parametrize("use_pdm", [True, False])
def test_gradient_is_sum_of_per_term_gradients(rng, use_pdm):
    cfg = TrainConfig(use_pdm=use_pdm, depth_patch=4)
    cloud, view = random_cloud(rng, n=8), _random_view(rng, random_camera(rng, 12, 12))
    w = PdmWeights.init(0) if use_pdm else None
    full = forward_backward(cloud, w, view, cfg, np.random.default_rng(5))
    parts = [forward_backward(cloud, w, view, cfg, np.random.default_rng(5),
                              weights={t: float(t == term) for t in TERMS}) for term in TERMS]
    for k in PARAM_FIELDS:
        total = sum(getattr(p.grads, k) for p in parts)
        assert np.allclose(getattr(full.grads, k), total, rtol=1e-9, atol=1e-14), k
    if use_pdm:
        for i, a in enumerate(full.pdm_grads.arrays()):
            assert np.allclose(a, sum(p.pdm_grads.arrays()[i] for p in parts), rtol=1e-9, atol=1e-14)


def test_gradient_flow_audit(rng):
    cfg = TrainConfig(depth_patch=4)
    cloud, view = random_cloud(rng, n=8, degree=2), _random_view(rng, random_camera(rng, 12, 12))
    w = PdmWeights.init(0)

    def touched(term):
        r = forward_backward(cloud, w, view, cfg, np.random.default_rng(0),
                             weights={t: float(t == term) for t in TERMS})
        pdm = r.pdm_grads is not None and any(np.any(a != 0) for a in r.pdm_grads.arrays())
        return {k for k in PARAM_FIELDS if np.any(getattr(r.grads, k) != 0)} | ({"pdm"} if pdm else set())

    geometry = {"positions", "rotations", "log_scales", "opacity_logits"}
    assert touched("prior") == geometry | {"structure_logits"}
    assert touched("depth") == geometry | {"depth_logits"}
    assert touched("exp") == geometry | {"sh", "noise", "pdm"}
    assert touched("de") == geometry | {"sh", "noise", "pdm"}
    assert touched("rec") == geometry | {"sh", "noise", "illum", "pdm"}


# --- density control --------------------------------------------------------

def _state(cloud, extent=1.0):
    return TrainState.create(cloud, None, extent, 0)


def test_no_gradients_only_prunes(rng):
    cloud = random_cloud(rng, n=6)
    cloud.opacity_logits[2] = logit(0.001)
    st = _state(cloud)
    new = densify_and_prune(cloud, st, TrainConfig())
    assert len(new) == 5
    assert np.array_equal(new.positions, np.delete(cloud.positions, 2, axis=0))
    st.adam.audit(new)


def test_clone_small_hot_primitive(rng):
    cloud = random_cloud(rng, n=4, scale=(0.001, 0.002))
    st = _state(cloud)
    st.adam.m["positions"][:] = 7.0
    st.grad_accum[1], st.grad_count[1] = 1.0, 1.0
    new = densify_and_prune(cloud, st, TrainConfig())
    assert len(new) == 5
    assert np.array_equal(new.positions[:4], cloud.positions)
    assert np.array_equal(new.log_scales[4], cloud.log_scales[1])
    offset = new.positions[4] - cloud.positions[1]
    assert 0 < np.linalg.norm(offset) < 0.02
    assert np.all(st.adam.m["positions"][4] == 0) and np.all(st.adam.m["positions"][:4] == 7.0)
    assert st.grad_accum.shape == (5,) and np.all(st.grad_accum == 0)


def test_split_large_hot_primitive(rng):
    cloud = random_cloud(rng, n=3, scale=(0.3, 0.5))
    st = _state(cloud)
    st.grad_accum[0], st.grad_count[0] = 1.0, 1.0
    new = densify_and_prune(cloud, st, TrainConfig())
    assert len(new) == 4
    assert np.allclose(new.log_scales[2:], cloud.log_scales[0] - math.log(1.6))
    st.adam.audit(new)


def test_prune_everything_warns(rng):
    cloud = random_cloud(rng, n=3)
    cloud.opacity_logits[:] = -20.0
    st = _state(cloud)
    with pytest.warns(RuntimeWarning, match="empty"):
        new = densify_and_prune(cloud, st, TrainConfig())
    assert len(new) == 0
    st.adam.audit(new)


def test_adam_shapes_follow_cloud(rng):
    cloud = random_cloud(rng, n=5)
    st = AdamState.for_params(cloud, PdmWeights.init(0))
    assert {f"pdm.{i}" for i in range(6)} <= set(st.m)
    st.remap_rows(np.array([0, 2]), 3)
    assert st.m["sh"].shape == (5, 16, 3)
    with pytest.raises(AssertionError):
        st.audit(cloud.select(np.arange(4)))


def test_adam_first_step_moves_by_lr():
    st = AdamState({"x": np.zeros(3)}, {"x": np.zeros(3)}, step=1)
    out = st.update("x", np.zeros(3), np.array([2.0, -0.5, 0.0]), 0.1)
    assert np.allclose(out, [-0.1, 0.1, 0.0])


# --- full runs --------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    synth_dataset(TINY_SPEC, d)
    return load_manifest(d / "manifest.json")


def test_zero_iterations_checkpoint_is_init(tiny_scene, tmp_path):
    cfg = TrainConfig(iterations=0, seed=4)
    train(tiny_scene, cfg, tmp_path)
    cloud, w, step = load_checkpoint(tmp_path / "checkpoint.ckpt")
    pts, cols = tiny_scene.load_points()
    init = init_cloud(pts, cols, cfg.max_sh_degree)
    assert step == 0
    for k in PARAM_FIELDS:
        assert np.array_equal(getattr(cloud, k), getattr(init, k))
    for a, b in zip(w.arrays(), PdmWeights.init(4).arrays()):
        assert np.array_equal(a, b)
    assert (tmp_path / "metrics.jsonl").read_text() == ""


def test_fixed_seed_is_deterministic(tiny_scene, tmp_path):
    cfg = TrainConfig(iterations=12, densify_from=4, densify_interval=4, densify_grad_threshold=1e-3,
                      checkpoint_every=5, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        train(tiny_scene, cfg, tmp_path / "a")
        train(tiny_scene, cfg, tmp_path / "b")
    la = (tmp_path / "a" / "metrics.jsonl").read_text()
    assert la == (tmp_path / "b" / "metrics.jsonl").read_text()
    assert len(la.splitlines()) == 12
    rec = json.loads(la.splitlines()[-1])
    assert set(rec) == {"step", "exp", "prior", "depth", "de", "rec", "total", "n_gaussians"}
    for name in ("checkpoint_000005.ckpt", "checkpoint_000010.ckpt", "checkpoint.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    resolved = json.loads((tmp_path / "a" / "config.resolved.json").read_text())
    assert TrainConfig.from_dict(resolved) == cfg


# --- synthetic data ---------------------------------------------------------

def test_degrade_examples(rng):
    clean = rng.random((4, 4, 3))
    assert np.array_equal(degrade(clean, 1.0, 0.0, rng), clean)
    assert degrade(np.full((1, 1, 1), 0.5), 3.0, 0.0, rng)[0, 0, 0] == pytest.approx(0.125)


def test_identity_degradation_inputs_equal_references(tmp_path):
    ds = synth_dataset({**TINY_SPEC, "gamma_d": 1.0, "noise_sigma": 0.0}, tmp_path)
    for img, ref in zip(ds.images, ds.references):
        assert np.array_equal(load_image(img), load_image(ref))


def test_synth_is_byte_identical(tmp_path):
    synth_dataset(TINY_SPEC, tmp_path / "a")
    synth_dataset(TINY_SPEC, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_views=1)
    with pytest.raises(ValueError):
        SynthSpec.from_dict({"views": 3})
    assert SynthSpec().n_gaussians == 300 and SynthSpec().resolution == 64

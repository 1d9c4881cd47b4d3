from __future__ import annotations

import numpy as np
import pytest

from instlift import geometry as geo
from instlift import label_field as lf
from instlift import scene as sc
from instlift.errors import FormatError, LabelOutOfRange, UnmappedId

UNIT = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def test_query_at_node_and_midpoint():
    f = lf.LabelField.zeros(UNIT, [3], 2, dtype=np.float64)
    rng = np.random.default_rng(0)
    f.density[0][...] = rng.uniform(0, 5, (3, 3, 3))
    f.logits[0][...] = rng.normal(size=(3, 3, 3, 3))
    sigma, logits = lf.sample_field(f, (0.5, 0.0, 1.0))
    assert sigma == pytest.approx(f.density[0][1, 0, 2])
    assert np.allclose(logits, f.logits[0][1, 0, 2])
    sigma, logits = lf.sample_field(f, (0.25, 0.5, 0.5))
    assert sigma == pytest.approx(0.5 * (f.density[0][0, 1, 1] + f.density[0][1, 1, 1]))
    assert np.allclose(logits, 0.5 * (f.logits[0][0, 1, 1] + f.logits[0][1, 1, 1]))


def test_levels_add_and_density_is_rectified():
    f = lf.LabelField.zeros(UNIT, [2, 3], 1, dtype=np.float64)
    f.density[0][...] = 2.0
    f.density[1][...] = -5.0
    f.logits[0][...] = 1.0
    f.logits[1][...] = 0.5
    sigma, logits = lf.sample_field(f, (0.3, 0.3, 0.3))
    assert sigma == 0.0 and np.allclose(logits, 1.5)


def test_outside_bounds():
    f = lf.LabelField.zeros(UNIT, [2], 1)
    f.density[0][...] = 1.0
    sigma, logits = lf.sample_field(f, (1.5, 0.5, 0.5))
    assert sigma == 0.0 and np.array_equal(logits, f.background)


def test_zero_field_is_background():
    f = lf.LabelField.zeros(UNIT, [4], 3)
    dist, _, wsum = lf.render_rays(f, [[0.5, 0.5, -1.0]], [[0, 0, 1.0]])
    assert wsum[0] == 0.0 and dist[0].argmax() == 0
    assert np.allclose(dist[0], lf.softmax(f.background))


def slab_field():
    f = lf.LabelField.zeros(UNIT, [(2, 2, 65)], 2, dtype=np.float64)
    f.density[0][:, :, 20:24] = 64.0     # sigma * delta = 1 at fully covered samples
    f.density[0][:, :, 40:44] = 640.0    # sigma * delta = 10
    f.logits[0][:, :, 20:24, 1] = 5.0
    f.logits[0][:, :, 40:44, 2] = 5.0
    return f


def test_opaque_slab():
    f = lf.LabelField.zeros(UNIT, [(2, 2, 65)], 1, dtype=np.float64)
    f.density[0][:, :, 30:34] = 6400.0
    f.logits[0][:, :, 30:34, 1] = 5.0
    dist, _, wsum = lf.render_rays(f, [[0.5, 0.5, -1.0]], [[0, 0, 1.0]])
    assert dist[0].argmax() == 1 and wsum[0] >= 0.99


def test_two_slabs_against_recursion():
    f = slab_field()
    cfg = lf.RenderConfig(samples_per_ray=64)
    o, d = np.array([0.5, 0.5, -1.0]), np.array([0.0, 0.0, 1.0])
    ts = 1.0 + (np.arange(64) + 0.5) / 64
    delta = 1.0 / 64
    trans, z, ws = 1.0, np.zeros(3), []
    for t in ts:
        sigma, logits = lf.sample_field(f, o + t * d)
        alpha = 1.0 - np.exp(-sigma * delta)
        w = trans * alpha
        ws.append(w)
        z += w * logits
        trans *= 1.0 - alpha
    z += (1.0 - sum(ws)) * f.background
    want = np.exp(z - z.max())
    want /= want.sum()
    dist, depth, wsum = lf.render_rays(f, o[None], d[None], cfg)
    assert np.abs(dist[0] - want).max() < 1e-9
    assert abs(wsum[0] - sum(ws)) < 1e-9
    assert dist[0].argmax() == want.argmax() == 1
    sig = np.array([lf.sample_field(f, o + t * d)[0] for t in ts])
    assert np.abs(lf.composite_weights(sig, np.full(64, delta)) - np.array(ws)).max() < 1e-12


def test_paint_empty_oracle():
    f = lf.LabelField.zeros(UNIT, [4, 8], 2)
    f.density[1][...] = 3.0
    out = lf.paint_from_oracle(f, np.zeros((8, 8, 8), int), {})
    assert all(not g.any() for g in out.density + out.logits)


def test_paint_sphere_center_ray():
    s = sc.build_scene([("sphere", 7, (0, 0, 0), 0.5)])
    bounds = ((-1, -1, -1), (1, 1, 1))
    f = lf.LabelField.zeros(bounds, [16, 32], 1)
    f = lf.paint_from_oracle(f, sc.voxel_instance_oracle(s, 32, bounds, nodes=True), {7: 1})
    dist, _, wsum = lf.render_rays(f, [[0, 0, -3.0]], [[0, 0, 1.0]])
    assert dist[0].argmax() == 1 and wsum[0] > 0.99
    with pytest.raises(UnmappedId):
        lf.paint_from_oracle(f, sc.voxel_instance_oracle(s, 32, bounds, nodes=True), {})
    with pytest.raises(LabelOutOfRange):
        lf.paint_from_oracle(f, sc.voxel_instance_oracle(s, 32, bounds, nodes=True), {7: 2})


def test_downsampled_render_shape():
    f = lf.LabelField.zeros(UNIT, [4], 1)
    k = geo.Intrinsics(20.0, 20.0, 15.5, 12.0, 32, 25)
    labels, prob = lf.render_view(f, (geo.look_at((3, 3, 3), (0.5, 0.5, 0.5)), k), downsample=2)
    assert labels.shape == prob.shape == (12, 16)


def _fd_field(seed=0):
    rng = np.random.default_rng(seed)
    f = lf.LabelField.zeros(((-1, -1, -1), (1, 1, 1)), [4], 2, dtype=np.float64)
    f.density[0][...] = rng.uniform(0.0, 2.0, (4, 4, 4))
    f.logits[0][...] = rng.normal(size=(4, 4, 4, 3))
    o = np.array([[-2.0, 0.1, 0.2], [0.3, -2.0, -0.1], [0.2, 0.3, -2.0]])
    d = np.array([[1.0, 0.05, 0.0], [0.0, 1.0, 0.1], [0.1, -0.05, 1.0]])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return f, o, d, np.array([1, 2, 0])


def test_label_gradient_finite_differences():
    f, o, d, y = _fd_field()
    cfg = lf.RenderConfig(samples_per_ray=32)
    (g,) = lf.label_gradient(f, o, d, y, cfg)
    num = np.zeros_like(g)
    eps = 1e-6
    grid = f.logits[0]
    for idx in np.ndindex(grid.shape):
        old = grid[idx]
        grid[idx] = old + eps
        up = lf.label_loss(f, o, d, y, cfg)
        grid[idx] = old - eps
        dn = lf.label_loss(f, o, d, y, cfg)
        grid[idx] = old
        num[idx] = (up - dn) / (2 * eps)
    scale = np.abs(num).max()
    assert scale > 1e-3
    rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-3 * scale)
    assert rel.max() < 1e-4


def test_training_leaves_density_untouched():
    f, _, _, _ = _fd_field(1)
    k = geo.Intrinsics(12.0, 12.0, 7.5, 7.5, 16, 16)
    pose = geo.look_at((0, -3, 0.5), (0, 0, 0))
    labels = np.zeros((16, 16), dtype=np.int64)
    labels[4:12, 4:12] = 1
    before = [g.copy() for g in f.density]
    res = lf.train(f, [lf.TrainFrame(pose, k, labels)], lf.TrainConfig(iterations=50, rays_per_batch=64))
    assert all(np.array_equal(a, b) for a, b in zip(before, res.field.density))
    assert not np.array_equal(res.field.logits[0], f.logits[0])


def test_single_label_training_converges():
    s = sc.build_scene([("sphere", 1, (0, 0, 0), 0.5)])
    bounds = ((-0.7, -0.7, -0.7), (0.7, 0.7, 0.7))
    k = geo.Intrinsics(40.0, 40.0, 15.5, 15.5, 32, 32)
    poses = sc.generate_trajectory("orbit", 6, {"radius": 2.0, "height": 0.5}, s)
    frames = [sc.ray_cast(s, (p, k)) for p in poses]
    f = lf.LabelField.zeros(bounds, [8, 16, 32], 1)
    f = lf.paint_density(f, sc.voxel_instance_oracle(s, 32, bounds, nodes=True))
    tf = [lf.TrainFrame(p, k, fr.instance_image) for p, fr in zip(poses, frames)]
    res = lf.train(f, tf, lf.TrainConfig(iterations=500, rays_per_batch=256, seed=3))
    ce = lf.evaluate_ce(res.field, tf, seed=3)
    assert ce < 0.01
    assert res.ce[-1] < res.ce[0]


def test_depth_mode_fits_geometry():
    s = sc.build_scene([("sphere", 1, (0, 0, 0), 0.5)])
    bounds = ((-0.7, -0.7, -0.7), (0.7, 0.7, 0.7))
    k = geo.Intrinsics(30.0, 30.0, 11.5, 11.5, 24, 24)
    poses = sc.generate_trajectory("orbit", 6, {"radius": 2.0, "height": 0.5}, s)
    frames = [sc.ray_cast(s, (p, k)) for p in poses]
    f = lf.LabelField.zeros(bounds, [8, 16], 1)
    tf = [lf.TrainFrame(p, k, fr.instance_image, fr.depth_image) for p, fr in zip(poses, frames)]
    cfg = lf.TrainConfig(iterations=300, rays_per_batch=256, density_mode="depth", seed=1)
    res = lf.train(f, tf, cfg, lf.RenderConfig(samples_per_ray=32))
    assert np.mean(res.density_loss[-20:]) < 0.5 * np.mean(res.density_loss[:20])
    assert all((g >= 0).all() for g in res.field.density)


def test_checkpoint_round_trip(tmp_path):
    f, _, _, _ = _fd_field(2)
    f = lf.LabelField(f.bounds, f.resolutions, f.n_labels,
                      [g.astype(np.float32) for g in f.density], [g.astype(np.float32) for g in f.logits])
    lf.save_field(tmp_path / "f.lf", f)
    g = lf.load_field(tmp_path / "f.lf")
    assert g.resolutions == f.resolutions and g.n_labels == f.n_labels
    assert all(np.array_equal(a, b) for a, b in zip(f.density + f.logits, g.density + g.logits))
    data = (tmp_path / "f.lf").read_bytes()
    (tmp_path / "bad.lf").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        lf.load_field(tmp_path / "bad.lf")
    (tmp_path / "short.lf").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        lf.load_field(tmp_path / "short.lf")


def test_loss_trace(tmp_path):
    res = lf.TrainResult(None, [0.5, 0.25], [0.0, 0.0])
    lf.write_loss_trace(tmp_path / "l.csv", res)
    assert (tmp_path / "l.csv").read_text().splitlines() == ["iteration,ce_loss,density_loss", "0,0.5,0", "1,0.25,0"]

from dataclasses import replace

import numpy as np
import pytest

from mvhand import cvi, model
from mvhand import diffcore as dc
from mvhand.config import ModelConfig


def _inputs(rng, T, V):
    lab = rng.uniform(70, 190, size=(T, V, 21, 2))
    conf = rng.uniform(0.5, 1.0, size=(T, V, 21))
    return lab, conf


def _params(cfg, seed=0, jitter=0.05):
    ps = model.new_params(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for k in ps.arrays:
        ps.arrays[k] = ps.arrays[k] + rng.normal(scale=jitter, size=ps.arrays[k].shape)
    return ps


def _permute_views(x, perm, k=21):
    """Permute view blocks of a (T, V*k, C) token tensor."""
    T, N, C = x.shape
    return x.reshape(T, N // k, k, C)[:, perm].reshape(T, N, C)


def test_full_scale_widths():
    cfg = ModelConfig(channels=(256, 512, 1024, 2048), c1=64, c2=512)
    assert cfg.c3 == 1792 and cfg.width == 2368
    assert 8 * 21 == 168


def test_default_shapes_and_flatten_width():
    cfg = ModelConfig()
    ps = model.new_params(cfg)
    assert ps["ref.theta.0.w"].shape[0] == 21 * 32 == 672
    p = ps.constants()
    lab, conf = _inputs(np.random.default_rng(0), 2, 8)
    single, refined = model.forward(p, lab, conf, cfg)
    assert refined.graph.shape == (2, 168, cfg.width)
    assert refined.theta.shape == (16, 16, 3) and refined.joints.shape == (16, 21, 3)
    assert np.array_equal(refined.joints.value,
                          __import__("mvhand").handmodel.forward_kinematics(refined.theta.value, single.beta.value).value)


def test_vsgfe_part_shapes(tiny_model_cfg):
    cfg = replace(tiny_model_cfg, grid=64)
    p = _params(cfg).constants()
    lab, conf = _inputs(np.random.default_rng(1), 1, 3)
    single, _ = model.forward(p, lab, conf, cfg)
    B = 3
    assert cvi.location_embed(p, single.joints, single.theta).shape == (B, 21, cfg.c1)
    assert cvi.saigb(p, single.pyramid[3], cfg).shape == (B, 21, cfg.c2)
    j2d = dc.constant(np.full((B, 21, 2), 100.0))
    assert cvi.jfs(single.pyramid, j2d, cfg).shape == (B, 21, cfg.c3)


def test_saigb_zero_input_zero_output():
    cfg = ModelConfig()
    p = model.new_params(cfg).constants()
    assert np.all(cvi.saigb(p, dc.constant(np.zeros((2, 2, 2, 64))), cfg).value == 0)


def test_jfs_constant_maps_give_identical_joint_features():
    cfg = ModelConfig()
    pyr = [dc.constant(np.full((1, 16 >> i, 16 >> i, c), float(i + 1))) for i, c in enumerate(cfg.channels)]
    coords = dc.constant(np.random.default_rng(2).uniform(-20, 280, size=(1, 21, 2)))
    out = cvi.jfs(pyr, coords, cfg).value
    assert np.all(out == out[:, :1])


def test_level_coords_centre_of_cells():
    cfg = ModelConfig()
    # pixel centre of the first level-1 cell (16 px wide) maps to coordinate 0
    c = cvi.level_coords(dc.constant(np.array([[[7.5, 23.5]]])), 0, cfg).value
    assert np.allclose(c, [[[0.0, 1.0]]])


def test_build_graph_token_layout():
    parts = [dc.constant(np.arange(8 * 21 * 2, dtype=float).reshape(8, 21, 2))]
    g = cvi.build_graph(parts, 8)
    assert g.shape == (1, 168, 2)
    assert cvi.build_graph([dc.constant(np.zeros((1, 21, 2)))], 1).shape == (1, 21, 2)
    with pytest.raises(dc.ShapeError):
        cvi.build_graph([dc.constant(np.zeros((7, 21, 2)))], 8)
    perm = [3, 1, 0, 2, 7, 5, 6, 4]
    permuted = cvi.build_graph([dc.constant(parts[0].value[perm])], 8)
    assert np.array_equal(permuted.value, _permute_views(g.value, perm))


def test_single_token_attention_is_value_path():
    C, rng = 4, np.random.default_rng(3)
    from mvhand.nn import ParamStore, linear
    ps = ParamStore(0)
    for proj in "qkvo":
        ps.add_linear(f"a.{proj}", C, C)
    p = ps.constants()
    g = dc.constant(rng.normal(size=(1, 1, C)))
    out, w = cvi.attention(p, g, "a", 2, return_weights=True)
    assert np.allclose(w.value, 1.0)
    assert np.allclose(out.value, linear(linear(g, p, "a.v"), p, "a.o").value)


def test_attention_weights_sum_to_one_over_active_tokens():
    cfg = ModelConfig()
    rng = np.random.default_rng(4)
    p = model.new_params(cfg).constants()
    V = 4
    g = dc.constant(rng.normal(size=(2, V * 21, cfg.width)))
    mask = cvi.token_mask(np.array([True, False, True, False]), 2, V)
    _, w = cvi.attention(p, g, "cva0", cfg.heads, mask, return_weights=True)
    w = w.value.reshape(2, cfg.heads, V * 21, V, 21)
    assert np.allclose(w.sum(axis=(-2, -1)), 1.0)
    assert np.all(w[:, :, :, [1, 3]] == 0.0)


def test_cva_token_permutation_equivariance():
    cfg = ModelConfig()
    rng = np.random.default_rng(5)
    p = _params(cfg).constants()
    g = rng.normal(size=(2, 5 * 21, cfg.width))
    perm = rng.permutation(5 * 21)
    out = cvi.cva(p, dc.constant(g), 0, cfg).value
    out_p = cvi.cva(p, dc.constant(g[:, perm]), 0, cfg).value
    assert np.abs(out_p - out[:, perm]).max() < 1e-9


def test_vsf_view_permutation_invariance():
    cfg = ModelConfig()
    rng = np.random.default_rng(6)
    p = _params(cfg).constants()
    V = 6
    g = rng.normal(size=(2, V * 21, cfg.width))
    perm = rng.permutation(V)
    a = cvi.vsf(p, dc.constant(g), 1, V).value
    b = cvi.vsf(p, dc.constant(_permute_views(g, perm)), 1, V).value
    assert np.abs(a - b).max() <= 1e-12
    per_view = a.reshape(2, V, 21, -1)
    assert np.all(per_view == per_view[:, :1])


def test_vsf_single_view_is_gcn():
    cfg = ModelConfig()
    p = _params(cfg).constants()
    g = dc.constant(np.random.default_rng(7).normal(size=(3, 21, cfg.width)))
    assert np.array_equal(cvi.vsf(p, g, 0, 1).value, cvi.adaptive_gcn(p, g, 0).value)


def test_vsf_ignores_masked_views():
    cfg = ModelConfig()
    rng = np.random.default_rng(8)
    p = _params(cfg).constants()
    V = 4
    g = rng.normal(size=(1, V * 21, cfg.width))
    mask = np.array([True, False, True, True])
    a = cvi.vsf(p, dc.constant(g), 0, V, mask).value
    g2 = g.copy().reshape(1, V, 21, -1)
    g2[:, 1] += 100.0
    b = cvi.vsf(p, dc.constant(g2.reshape(g.shape)), 0, V, mask).value
    assert np.array_equal(a, b)


def test_adjacency_rows_normalised():
    cfg = ModelConfig()
    p = model.new_params(cfg).constants()
    A = cvi.normalized_adjacency(p, 0).value
    assert np.allclose(A.sum(1), 1.0)
    adj = cvi.skeleton_adjacency()
    assert np.all(A[adj > 0].min() > A[adj == 0].max())


def test_dcvi_with_zeroed_output_layers_is_identity():
    cfg = ModelConfig()
    ps = _params(cfg)
    for b in range(cvi.NUM_BLOCKS):
        for name in (f"cva{b}.mlp.1", f"vsf{b}.gcn1"):
            ps.arrays[f"{name}.w"][:] = 0
            ps.arrays[f"{name}.b"][:] = 0
    g = dc.constant(np.random.default_rng(9).normal(size=(2, 3 * 21, cfg.width)))
    assert np.array_equal(cvi.dcvi(ps.constants(), g, cfg, 3).value, g.value)


def test_refine_view_permutation_consistency():
    cfg = ModelConfig()
    rng = np.random.default_rng(10)
    p = _params(cfg).constants()
    lab, conf = _inputs(rng, 2, 5)
    perm = rng.permutation(5)
    _, r = model.forward(p, lab, conf, cfg)
    _, rp = model.forward(p, lab[:, perm], conf[:, perm], cfg)
    a = r.joints.value.reshape(2, 5, 21, 3)[:, perm]
    b = rp.joints.value.reshape(2, 5, 21, 3)
    assert np.abs(a - b).max() < 1e-9
    assert np.abs(r.cam_t.value.reshape(2, 5, 2)[:, perm] - rp.cam_t.value.reshape(2, 5, 2)).max() < 1e-9


def test_all_but_one_view_masked_equals_single_view_run():
    cfg = ModelConfig()
    rng = np.random.default_rng(11)
    p = _params(cfg).constants()
    lab, conf = _inputs(rng, 2, 4)
    mask = np.array([False, False, True, False])
    _, r = model.forward(p, lab, conf, cfg, view_mask=mask)
    _, r1 = model.forward(p, lab[:, 2:3], conf[:, 2:3], cfg)
    a = r.joints.value.reshape(2, 4, 21, 3)[:, 2]
    assert np.abs(a - r1.joints.value.reshape(2, 21, 3)).max() < 1e-9


def test_empty_view_mask_rejected():
    with pytest.raises(ValueError):
        cvi.token_mask(np.zeros(3, dtype=bool), 1, 3)


def test_refine_deterministic():
    cfg = ModelConfig()
    p = model.new_params(cfg, 4).constants()
    lab, conf = _inputs(np.random.default_rng(12), 1, 3)
    a = model.forward(p, lab, conf, cfg)[1].joints.value
    b = model.forward(model.new_params(cfg, 4).constants(), lab, conf, cfg)[1].joints.value
    assert np.array_equal(a, b)


def test_cvi_end_to_end_gradient(tiny_model_cfg, directional_errors):
    from mvhand import losses
    from mvhand.camera import project_weak
    cfg = replace(tiny_model_cfg, grid=64)
    rng = np.random.default_rng(13)
    params = _params(cfg, 2).arrays
    lab, conf = _inputs(rng, 2, 3)
    target = rng.normal(scale=0.05, size=(2, 3, 21, 3))

    def loss(p):
        single, refined = model.forward(p, lab, conf, cfg)
        l2 = losses.l_2d(project_weak(refined.joints, refined.cam_s, refined.cam_t), lab.reshape(6, 21, 2))
        cf = losses.l_cf(dc.reshape(refined.joints, (2, 3, 21, 3)), target)
        return l2 + dc.scale(cf, 100.0)

    errs = directional_errors(loss, params, rng, directions=1)
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}

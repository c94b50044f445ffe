import numpy as np
import pytest

from hoigen.autodiff import Tensor, grad_check, no_grad
from hoigen.autodiff import functional as F
from hoigen.bench import interaction_flops
from hoigen.conditions import StubEmbedding
from hoigen.network import (ConditionInjector, Denoiser, ForwardTrace, InteractionBlock, LimbLayout,
                            ModelConfig, default_limb_groups, update_mask)
from hoigen.representation import SMPL23_GROUPS
from hoigen.ssm import block_flops


def tiny_config(**kw) -> ModelConfig:
    base = dict(d_model=16, n_joints=5, n_modules=2, k=1, d_state=4)
    base.update(kw)
    return ModelConfig(**base)


def run_model(model, rng, b=1, length=4, labels=None, trace=None):
    j = model.cfg.n_joints
    xh = Tensor(rng.standard_normal((b, length, j, 12)))
    xo = Tensor(rng.standard_normal((b, length, 12)))
    cond = model.conditions(StubEmbedding().embed_batch(labels or [0] * b),
                            rng.standard_normal((b, 6, 3)), np.full(b, 10))
    return model(xh, xo, cond, trace)


# ------------------------------------------------------------------- config
def test_config_guards_mask_budget():
    with pytest.raises(ValueError, match="exceeds J - 1"):
        ModelConfig(n_joints=24, n_modules=6, k=4)
    ModelConfig(n_joints=24, n_modules=6, k=3)


def test_config_heads_divide_width():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(d_model=10, heads=3)


def test_config_dict_roundtrip():
    cfg = tiny_config(score_mode="sequence")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------------- layout
def test_limb_layout_for_full_skeleton():
    layout = LimbLayout.build(SMPL23_GROUPS, 24)
    assert layout.n_separators == 4
    assert layout.length == 24 + 1 + 4
    virtual = 23
    assert layout.first[virtual] != layout.second[virtual]
    assert np.all(layout.first[:23] == layout.second[:23])
    # the virtual joint sits in both leg groups
    assert virtual in layout.groups[3] and virtual in layout.groups[4]


def test_layout_then_inverse_is_identity(rng):
    layout = LimbLayout.build(SMPL23_GROUPS, 24)
    h = rng.standard_normal((3, 24, 5))
    seps = rng.standard_normal((4, 5))
    np.testing.assert_array_equal(layout.invert_array(layout.apply_array(h, seps)), h)
    out = layout.invert(layout.apply(Tensor(h), Tensor(seps))).data
    np.testing.assert_array_equal(out, h)


def test_separator_outputs_never_reach_joints(rng):
    layout = LimbLayout.build(SMPL23_GROUPS, 24)
    y = rng.standard_normal((2, layout.length, 4))
    y[:, layout.is_separator()] = np.nan
    assert np.all(np.isfinite(layout.invert_array(y)))


def test_layout_rejects_incomplete_groups():
    with pytest.raises(ValueError, match="exactly once"):
        LimbLayout.build(((0, 1), (1, 2)), 4)


def test_default_groups_for_small_skeleton():
    assert default_limb_groups(4) == ((0,), (1,), (2,), (3,))


# -------------------------------------------------------------- projections
def test_projection_is_per_token(rng):
    model = Denoiser(tiny_config(), rng)
    xh = rng.standard_normal((1, 3, 5, 12))
    xo = rng.standard_normal((1, 3, 12))
    h0, o0 = model.project_in(Tensor(xh), Tensor(xo))
    xh[0, 1, 2] += 1.0
    h1, o1 = model.project_in(Tensor(xh), Tensor(xo))
    changed = np.argwhere(np.any(h0.data != h1.data, axis=-1))
    assert changed.tolist() == [[0, 1, 2]]
    np.testing.assert_array_equal(o0.data, o1.data)


def test_zero_input_zero_bias_gives_zero_latents(rng):
    model = Denoiser(tiny_config(), rng)
    model.embed_human.bias.data[:] = 0
    model.embed_object.bias.data[:] = 0
    h, o = model.project_in(Tensor(np.zeros((1, 2, 5, 12))), Tensor(np.zeros((1, 2, 12))))
    assert not h.data.any() and not o.data.any()


def test_pseudo_inverse_decoder_recovers_input(rng):
    model = Denoiser(tiny_config(), rng)
    for enc, dec in ((model.embed_human, model.decode_human), (model.embed_object, model.decode_object)):
        # Linear stores (in, out) weights: y = x W + b
        dec.weight.data[:] = np.linalg.pinv(enc.weight.data)
        dec.bias.data[:] = -enc.bias.data @ dec.weight.data
    xh = rng.standard_normal((1, 3, 5, 12))
    xo = rng.standard_normal((1, 3, 12))
    h, o = model.project_out(*model.project_in(Tensor(xh), Tensor(xo)))
    np.testing.assert_allclose(h.data, xh, atol=1e-6)
    np.testing.assert_allclose(o.data, xo, atol=1e-6)


# ---------------------------------------------------------------------- DCI
def test_condition_injector_keeps_motion_positions(rng):
    cfg = tiny_config()
    dci = ConditionInjector(cfg, rng)
    h = Tensor(rng.standard_normal((1, 5, 4, 16)))
    o = Tensor(rng.standard_normal((1, 4, 16)))
    c1 = rng.standard_normal((1, 3, 16))
    h1, o1 = dci(h, o, Tensor(c1))
    assert h1.shape == (1, 5, 4, 16) and o1.shape == (1, 4, 16)
    c2 = c1.copy()
    c2[:, 1] += 1.0
    h2, _ = dci(h, o, Tensor(c2))
    assert np.linalg.norm(h1.data - h2.data) > 0


def test_dropped_conditions_equal_explicit_null_tokens(rng):
    model = Denoiser(tiny_config(), rng)
    enc = model.conditions
    for p in (enc.null_text, enc.null_geometry):
        p.data[:] = rng.standard_normal(16)
    text = StubEmbedding().embed_batch([3])
    dropped = enc(text, rng.standard_normal((1, 6, 3)), np.array([7]), drop_text=True, drop_geometry=True)
    explicit = F.stack([enc.timestep(np.array([7])),
                        F.reshape(enc.null_text, (1, 16)), F.reshape(enc.null_geometry, (1, 16))], axis=1)
    xh = Tensor(rng.standard_normal((1, 3, 5, 12)))
    xo = Tensor(rng.standard_normal((1, 3, 12)))
    a, b = model(xh, xo, dropped), model(xh, xo, explicit)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


# ---------------------------------------------------------------------- DIB
def test_single_visible_joint_takes_all_object_attention(rng):
    block = InteractionBlock(tiny_config(), rng)
    block.out.weight.data[:] = 0
    visible = np.zeros((1, 2, 5), dtype=bool)
    visible[:, :, 3] = True
    _, _, scores, attn = block(Tensor(rng.standard_normal((1, 2, 5, 16))),
                               Tensor(rng.standard_normal((1, 2, 16))), visible)
    # the object attends to itself and joint 3 only; scores cover joint columns
    assert np.all(attn[..., 1 + np.array([0, 1, 2, 4])] == 0.0)
    np.testing.assert_allclose(attn[..., 0, [0, 4]].sum(-1), 1.0)
    assert np.all(scores[..., [0, 1, 2, 4]] == 0.0) and np.all(scores[..., 3] > 0)


def test_uniform_logits_give_uniform_scores(rng):
    block = InteractionBlock(tiny_config(), rng)
    for lin in (block.q, block.k):
        lin.weight.data[:] = 0
        lin.bias.data[:] = 0
    visible = np.array([[[True, False, True, True, False]]])
    _, _, scores, _ = block(Tensor(rng.standard_normal((1, 1, 5, 16))),
                            Tensor(rng.standard_normal((1, 1, 16))), visible)
    expected = np.where(visible, 1.0 / (visible.sum() + 1), 0.0)
    np.testing.assert_allclose(scores, expected, atol=1e-15)


def test_attention_rows_normalize_over_visible(rng):
    block = InteractionBlock(tiny_config(), rng)
    visible = rng.random((2, 3, 5)) < 0.6
    visible[..., 0] = True
    _, _, _, attn = block(Tensor(rng.standard_normal((2, 3, 5, 16))),
                          Tensor(rng.standard_normal((2, 3, 16))), visible)
    np.testing.assert_allclose(attn.sum(-1), 1.0)
    masked_cols = ~np.concatenate([np.ones((2, 3, 1), bool), visible], -1)
    assert np.all(attn.transpose(0, 1, 3, 2, 4)[np.broadcast_to(masked_cols[:, :, None, None], attn.shape
                                                                 ).transpose(0, 1, 3, 2, 4)] == 0.0)


def test_masked_joint_is_isolated_from_object(rng):
    block = InteractionBlock(tiny_config(), rng)
    h = rng.standard_normal((1, 2, 5, 16))
    o = Tensor(rng.standard_normal((1, 2, 16)))
    visible = np.ones((1, 2, 5), dtype=bool)
    visible[:, :, 1] = False
    _, o1, _, _ = block(Tensor(h), o, visible)
    h[:, :, 1] = 0.0
    h_out, o2, _, _ = block(Tensor(h), o, visible)
    np.testing.assert_array_equal(o1.data, o2.data)
    # frozen: the masked joint passes through unchanged
    np.testing.assert_array_equal(h_out.data[:, :, 1], 0.0)


def test_no_visible_joint_rejected(rng):
    block = InteractionBlock(tiny_config(), rng)
    with pytest.raises(ValueError, match="at least one visible"):
        block(Tensor(np.zeros((1, 1, 5, 16))), Tensor(np.zeros((1, 1, 16))), np.zeros((1, 1, 5), bool))


# --------------------------------------------------------------- mask update
def test_update_mask_bottom_k():
    out = update_mask(np.ones(5, bool), np.array([.4, .3, .1, .15, .05]), 2)
    assert set(np.flatnonzero(~out)) == {2, 4}


def test_update_mask_tie_goes_to_lower_index():
    out = update_mask(np.ones(4, bool), np.full(4, 0.25), 1)
    assert np.flatnonzero(~out).tolist() == [0]


def test_update_mask_ignores_already_masked(rng):
    visible = np.array([True, False, True, True])
    out = update_mask(visible, np.array([0.5, 0.0, 0.2, 0.3]), 1)
    assert out.tolist() == [True, False, False, True]


def test_update_mask_sequence_mode():
    scores = np.array([[0.1, 0.6, 0.4], [0.5, 0.2, 0.4]])
    # frame means 0.3, 0.4, 0.4: joint 0 goes in every frame, though frame 1 alone would drop joint 1
    out = update_mask(np.ones((2, 3), bool), scores, 1, mode="sequence")
    assert out.tolist() == [[False, True, True]] * 2


def test_update_mask_precondition():
    with pytest.raises(ValueError, match="cannot mask"):
        update_mask(np.array([True, True, False]), np.zeros(3), 2)


def test_mask_schedule_full_skeleton(rng):
    cfg = ModelConfig(d_model=8, n_joints=24, n_modules=6, k=3, d_state=2, depth=1)
    model = Denoiser(cfg, rng)
    trace = ForwardTrace()
    with no_grad():
        run_model(model, rng, b=2, length=3, labels=[0, 4], trace=trace)
    counts = [v.sum(-1) for v in trace.visible]
    for i, c in enumerate(counts):
        assert np.all(c == 24 - 3 * i)
    for a, b in zip(trace.visible, trace.visible[1:]):
        assert not np.any(b & ~a)
    for vis, (attn1, attn2) in zip(trace.visible, trace.attention):
        masked = ~np.concatenate([np.ones(vis.shape[:2] + (1,), bool), vis], -1)
        for attn in (attn1, attn2):
            cols = np.broadcast_to(masked[:, :, None, None, :], attn.shape)
            assert np.all(attn[cols] == 0.0)


# ------------------------------------------------------------- whole model
def test_forward_shape_and_determinism(rng):
    model = Denoiser(tiny_config(), rng)
    a = run_model(model, np.random.default_rng(5), b=2, length=6, labels=[1, 2])
    b = run_model(model, np.random.default_rng(5), b=2, length=6, labels=[1, 2])
    assert a[0].shape == (2, 6, 5, 12) and a[1].shape == (2, 6, 12)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_single_frame_forward_is_finite(rng):
    model = Denoiser(tiny_config(), rng)
    h, o = run_model(model, rng, length=1)
    assert np.all(np.isfinite(h.data)) and np.all(np.isfinite(o.data))


def test_wrong_joint_count_rejected(rng):
    model = Denoiser(tiny_config(), rng)
    with pytest.raises(F.ShapeError, match="5 joint tokens"):
        model(Tensor(np.zeros((1, 2, 4, 12))), Tensor(np.zeros((1, 2, 12))), Tensor(np.zeros((1, 3, 16))))


def test_full_model_gradients(rng):
    model = Denoiser(tiny_config(), rng)
    xh = Tensor(rng.standard_normal((1, 4, 5, 12)))
    xo = Tensor(rng.standard_normal((1, 4, 12)))
    text = StubEmbedding().embed_batch([2])
    pts = rng.standard_normal((1, 6, 3))

    def loss(xh, xo, *params):
        cond = model.conditions(text, pts, np.array([10]))
        h, o = model(xh, xo, cond)
        return (h * h).sum() + (o * o).sum()

    err = grad_check(loss, [xh, xo] + model.parameters(), max_coords=3, seed=1)
    assert err < 1e-4


def test_scan_and_interaction_flops_linear_in_length():
    cfg = ModelConfig()
    for length in (16, 64, 256):
        assert block_flops(cfg.mamba, 25, 2 * length) == 2 * block_flops(cfg.mamba, 25, length)
        assert interaction_flops(2 * length, 24, 128) == 2 * interaction_flops(length, 24, 128)
    # quadratic in the per-frame token count
    core = interaction_flops(1, 24, 128) - 25 * 8 * 128 * 128
    assert core == 25 * 25 * (4 * 128 + 5)

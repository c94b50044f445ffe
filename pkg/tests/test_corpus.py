import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hoigen.corpus import (CONTACT_JOINTS, LABEL_NAMES, LABELS, SceneScript, generate_clip,
                           generate_corpus, read_corpus, write_corpus)
from hoigen.metrics import contact_distance
from hoigen.primitives import PrimitiveObject
from hoigen.representation import DEFAULT_SKELETON, detect_foot_contact

SHAPES = [PrimitiveObject("sphere", (0.3,)), PrimitiveObject("box", (0.2, 0.5, 0.35)),
          PrimitiveObject("cylinder", (0.15, 0.6))]


@pytest.mark.parametrize("obj", SHAPES, ids=lambda o: o.kind)
def test_sdf_sign_matches_rejection_oracle(obj, rng):
    p = rng.uniform(-1.5, 1.5, (1000, 3)) * obj.bounding_half_extent()
    inside = obj.contains(p)
    sdf = obj.sdf(p)
    assert 0 < inside.sum() < 1000
    assert np.array_equal(sdf < 0, inside)


@pytest.mark.parametrize("obj", SHAPES, ids=lambda o: o.kind)
def test_surface_samples_have_zero_sdf(obj, rng):
    np.testing.assert_allclose(obj.sdf(obj.surface_points(500, rng)), 0.0, atol=1e-12)


@pytest.mark.parametrize("obj", SHAPES, ids=lambda o: o.kind)
def test_sdf_gradient_has_unit_norm(obj, rng):
    p = rng.uniform(-2, 2, (400, 3)) * obj.bounding_half_extent()
    h = 1e-6
    grad = np.stack([(obj.sdf(p + h * e) - obj.sdf(p - h * e)) / (2 * h) for e in np.eye(3)], -1)
    norms = np.linalg.norm(grad, axis=-1)
    # finite differences straddle creases for a few points; almost everywhere means most
    assert np.mean(np.abs(norms - 1) < 1e-5) > 0.95


def test_sdf_examples():
    assert PrimitiveObject("sphere", (1.0,)).sdf([0, 0, 2.0]) == 1.0
    assert PrimitiveObject("box", (2.0, 2.0, 2.0)).sdf([0, 0, 0]) == -1.0
    assert PrimitiveObject("cylinder", (1.0, 2.0)).sdf([0, 3.0, 0]) == 2.0


def test_invalid_primitive():
    with pytest.raises(ValueError, match="unknown primitive"):
        PrimitiveObject("cone", (1.0,))
    with pytest.raises(ValueError, match="positive"):
        PrimitiveObject("box", (1.0, 0.0, 1.0))


def test_labels_cover_templates():
    assert len(LABELS) == len(LABEL_NAMES) == 8
    assert {t for t, _ in LABELS} == set(CONTACT_JOINTS)


def test_unknown_template():
    with pytest.raises(ValueError, match="unknown template"):
        generate_clip(SceneScript("dance", "box"))


def test_too_short_rejected():
    with pytest.raises(ValueError, match="at least 10 frames"):
        generate_clip(SceneScript("push", "box", 9))


@pytest.mark.parametrize("length", [10, 11, 17, 64])
def test_every_label_generates_at_length(length):
    for t, k in LABELS:
        generate_clip(SceneScript(t, k, length, 1)).validate(DEFAULT_SKELETON)


def test_generation_is_deterministic():
    a = generate_clip(SceneScript("push", "box", 24, 5))
    b = generate_clip(SceneScript("push", "box", 24, 5))
    np.testing.assert_array_equal(a.global_positions(), b.global_positions())
    np.testing.assert_array_equal(a.object_trans, b.object_trans)
    np.testing.assert_array_equal(a.object_points, b.object_points)


@pytest.mark.parametrize("label", range(8))
def test_clips_are_valid_and_in_contact(label):
    t, k = LABELS[label]
    for seed in range(3):
        clip = generate_clip(SceneScript(t, k, 32, seed))
        clip.validate(DEFAULT_SKELETON)
        assert clip.contact_flags.any()
        assert contact_distance(clip, clip) <= 0.01


@given(st.integers(0, 10_000))
def test_push_moves_object_with_hand(seed):
    clip = generate_clip(SceneScript("push", "box", 32, seed))
    hand = clip.global_positions()[:, clip.contact_joint]
    flags = clip.contact_flags
    both = flags[1:] & flags[:-1]
    np.testing.assert_allclose(np.diff(clip.object_trans, axis=0)[both], np.diff(hand, axis=0)[both],
                               atol=1e-9)


def test_stance_mask_matches_contact_detection():
    agree = []
    for clip in generate_corpus(16, 32, 3):
        agree.append(np.mean(clip.foot_contact == detect_foot_contact(clip)))
    assert min(agree) >= 0.95


def test_corpus_roundtrip_on_disk(tmp_path):
    clips = generate_corpus(3, 16, 1)
    write_corpus(tmp_path, clips)
    back = read_corpus(tmp_path)
    assert list(back) == ["clip_0000", "clip_0001", "clip_0002"]
    assert (tmp_path / "labels.tsv").read_text().splitlines()[0] == "0\tpush the box"
    for c, b in zip(clips, back.values()):
        np.testing.assert_allclose(b.global_positions(), c.global_positions(), atol=1e-5)
        assert b.label == c.label and b.object_kind == c.object_kind

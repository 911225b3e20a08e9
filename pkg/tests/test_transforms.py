"""Augmentation policy gate, geometry oracles and classifier input prep."""

import numpy as np
import pytest

from lungtriage.labels import ROLE_TRAIN
from lungtriage.transforms import (
    AugmentationPolicy,
    IntensityWindow,
    augment,
    extract_slices,
    normalize_intensity,
    prepare_classifier_input,
    sample_seed,
)
from lungtriage.volume import SegmentationMask, SliceImage2D, Volume3D


def rich_policy():
    return AugmentationPolicy(
        scale_range=(0.9, 1.1),
        rotation_range_deg=(-15.0, 15.0),
        translation_range_vox=(-3.0, 3.0),
        affine_jitter=0.02,
        flip_axes=("x", "y"),
        contrast_range=(0.8, 1.2),
    )


# -- normalization -----------------------------------------------------------

def test_normalize_window_endpoints():
    vol = Volume3D(np.array([[[-1000.0, 400.0, -300.0]]], dtype=np.float32))
    out = normalize_intensity(vol, IntensityWindow(-1000, 400))
    assert out.voxels[0, 0, 0] == 0.0
    assert out.voxels[0, 0, 1] == 1.0
    assert out.voxels[0, 0, 2] == pytest.approx(0.5)


def test_normalize_clamps_outside():
    vol = Volume3D(np.array([[[-2000.0, 1500.0]]], dtype=np.float32))
    out = normalize_intensity(vol, IntensityWindow(-1000, 400))
    assert out.voxels.min() == 0.0 and out.voxels.max() == 1.0


def test_window_invariant():
    with pytest.raises(ValueError):
        IntensityWindow(10, 10)


# -- policy gate --------------------------------------------------------------

def test_role_test_is_identity():
    rng = np.random.default_rng(0)
    vol = Volume3D(rng.random((10, 10, 10), dtype=np.float32))
    mask = SegmentationMask((rng.random((10, 10, 10)) > 0.7).astype(np.uint8), "seg2")
    out_img, out_mask = augment((vol, mask), rich_policy(), "test", seed=123)
    assert np.array_equal(out_img.voxels, vol.voxels)
    assert np.array_equal(out_mask.labels, mask.labels)


def test_role_inference_is_identity():
    rng = np.random.default_rng(1)
    vol = Volume3D(rng.random((8, 8, 8), dtype=np.float32))
    out_img, _ = augment((vol, None), rich_policy(), "inference", seed=5)
    assert np.array_equal(out_img.voxels, vol.voxels)


def test_train_differs_with_nondegenerate_ranges():
    rng = np.random.default_rng(2)
    vol = Volume3D(rng.random((10, 10, 10), dtype=np.float32))
    out_img, _ = augment((vol, None), rich_policy(), ROLE_TRAIN, seed=3)
    assert not np.array_equal(out_img.voxels, vol.voxels)


def test_policy_cannot_target_test_role():
    with pytest.raises(ValueError):
        AugmentationPolicy(apply_roles=frozenset({"train", "test"}))


def test_determinism():
    rng = np.random.default_rng(4)
    vol = Volume3D(rng.random((12, 10, 8), dtype=np.float32))
    mask = SegmentationMask((rng.random((12, 10, 8)) > 0.8).astype(np.uint8), "seg2")
    policy = rich_policy()
    a_img, a_mask = augment((vol, mask), policy, ROLE_TRAIN, seed=77)
    b_img, b_mask = augment((vol, mask), policy, ROLE_TRAIN, seed=77)
    assert np.array_equal(a_img.voxels, b_img.voxels)
    assert np.array_equal(a_mask.labels, b_mask.labels)
    c_img, _ = augment((vol, mask), policy, ROLE_TRAIN, seed=78)
    assert not np.array_equal(a_img.voxels, c_img.voxels)


# -- geometry oracles ---------------------------------------------------------

def test_flip_involution():
    rng = np.random.default_rng(5)
    vol = Volume3D(rng.random((6, 7, 8), dtype=np.float32))
    policy = AugmentationPolicy(flip_axes=("x",))
    # find a seed whose coin says "flip"
    for seed in range(50):
        out, _ = augment((vol, None), policy, ROLE_TRAIN, seed=seed)
        if not np.array_equal(out.voxels, vol.voxels):
            break
    else:
        pytest.fail("no flipping seed found")
    again, _ = augment((out, None), policy, ROLE_TRAIN, seed=seed)
    assert np.array_equal(again.voxels, vol.voxels)
    assert np.array_equal(out.voxels, vol.voxels[::-1, :, :])


def test_rotation_90_marked_voxel_oracle():
    # 9^3 grid, marked voxel one step +x from center; rotating 90 degrees
    # in the x-y plane must move it one step +y from center.
    shape = (9, 9, 9)
    center = (4, 4, 4)
    marked = (5, 4, 4)
    img = np.zeros(shape, dtype=np.float32)
    img[marked] = 1.0
    mask = np.zeros(shape, dtype=np.uint8)
    mask[marked] = 1
    policy = AugmentationPolicy(rotation_range_deg=(90.0, 90.0))
    out_img, out_mask = augment(
        (Volume3D(img), SegmentationMask(mask, "seg2")), policy, ROLE_TRAIN, seed=0
    )
    # independent oracle: brute-force location of the maximum
    flat_idx = np.argmax(out_img.voxels)
    found = np.unravel_index(flat_idx, shape)
    expected = (4, 5, 4)  # rotation (x,y)->(-y,x) applied to offset (1,0,0)
    assert found == expected
    assert out_mask.labels[expected] == 1
    assert out_mask.labels.sum() == 1


def test_integer_translation_exact():
    shape = (9, 9, 9)
    rng = np.random.default_rng(6)
    img = rng.random(shape).astype(np.float32)
    policy = AugmentationPolicy(translation_range_vox=(2.0, 2.0))
    out, _ = augment((Volume3D(img), None), policy, ROLE_TRAIN, seed=0)
    # content moves +2 along every axis; interior must match exactly
    np.testing.assert_allclose(out.voxels[2:, 2:, 2:], img[:-2, :-2, :-2], atol=1e-6)


def test_geometry_pairing_mask_vs_delta_image():
    # single labeled voxel and a delta image agree on the transformed location
    shape = (11, 11, 11)
    voxel = (7, 4, 6)
    img = np.zeros(shape, dtype=np.float32)
    img[voxel] = 1.0
    mask = np.zeros(shape, dtype=np.uint8)
    mask[voxel] = 1
    policy = AugmentationPolicy(
        rotation_range_deg=(-20, 20), translation_range_vox=(-2, 2), flip_axes=("x", "y")
    )
    for seed in range(5):
        out_img, out_mask = augment(
            (Volume3D(img), SegmentationMask(mask, "seg2")), policy, ROLE_TRAIN, seed=seed
        )
        img_loc = np.unravel_index(np.argmax(out_img.voxels), shape)
        mask_locs = np.argwhere(out_mask.labels == 1)
        assert len(mask_locs) >= 1
        dist = np.min(np.linalg.norm(mask_locs - np.array(img_loc), axis=1))
        assert dist <= 1.0  # nearest-neighbor vs linear argmax may differ by one cell


def test_constant_preservation_without_padding():
    vol = Volume3D(np.full((8, 8, 8), 0.37, dtype=np.float32))
    policy = AugmentationPolicy(flip_axes=("x", "y", "z"), crop_size=(6, 6, 6))
    out, _ = augment((vol, None), policy, ROLE_TRAIN, seed=1)
    assert np.allclose(out.voxels, 0.37)


def test_pad_fill_value():
    vol = Volume3D(np.full((4, 4, 4), 0.5, dtype=np.float32))
    policy = AugmentationPolicy(pad_to=(6, 6, 6), fill_value=0.0)
    out, _ = augment((vol, None), policy, ROLE_TRAIN, seed=0)
    assert out.shape == (6, 6, 6)
    assert out.voxels[0, 0, 0] == 0.0
    assert out.voxels[2, 2, 2] == 0.5


def test_crop_size_and_error():
    rng = np.random.default_rng(8)
    vol = Volume3D(rng.random((10, 10, 10), dtype=np.float32))
    policy = AugmentationPolicy(crop_size=(4, 5, 6))
    out, _ = augment((vol, None), policy, ROLE_TRAIN, seed=0)
    assert out.shape == (4, 5, 6)
    with pytest.raises(ValueError, match="crop"):
        augment((vol, None), AugmentationPolicy(crop_size=(11, 4, 4)), ROLE_TRAIN, seed=0)


def test_label_closure():
    rng = np.random.default_rng(9)
    labels = rng.integers(0, 4, size=(10, 10, 10)).astype(np.uint8)
    vol = Volume3D(rng.random((10, 10, 10), dtype=np.float32))
    policy = rich_policy()
    for seed in range(5):
        _, out_mask = augment(
            (vol, SegmentationMask(labels, "seg4")), policy, ROLE_TRAIN, seed=seed
        )
        assert set(np.unique(out_mask.labels)) <= set(np.unique(labels))


def test_mask_uses_nearest_interpolation():
    labels = np.zeros((9, 9, 9), dtype=np.uint8)
    labels[4:6, 4:6, 4:6] = 3
    vol = Volume3D(np.zeros((9, 9, 9), dtype=np.float32))
    policy = AugmentationPolicy(rotation_range_deg=(-30, 30))
    _, out_mask = augment((vol, SegmentationMask(labels, "seg4")), policy, ROLE_TRAIN, seed=2)
    assert set(np.unique(out_mask.labels)) <= {0, 3}  # no blended label values


def test_contrast_only_touches_image():
    rng = np.random.default_rng(10)
    vol = Volume3D(rng.random((6, 6, 6), dtype=np.float32))
    mask = SegmentationMask(np.ones((6, 6, 6), dtype=np.uint8), "seg2")
    policy = AugmentationPolicy(contrast_range=(1.5, 1.5))
    out_img, out_mask = augment((vol, mask), policy, ROLE_TRAIN, seed=0)
    assert np.array_equal(out_mask.labels, mask.labels)
    assert not np.array_equal(out_img.voxels, vol.voxels)


def test_grayscale_collapses_channels():
    rng = np.random.default_rng(11)
    img = SliceImage2D(rng.random((8, 8, 3), dtype=np.float32))
    policy = AugmentationPolicy(grayscale=True)
    out, _ = augment((img, None), policy, ROLE_TRAIN, seed=0)
    assert np.allclose(out.pixels[..., 0], out.pixels[..., 1])
    assert np.allclose(out.pixels[..., 0], img.pixels.mean(axis=2))


# -- slicing ------------------------------------------------------------------

def test_extract_slices_shapes():
    vol = Volume3D(np.zeros((4, 5, 6), dtype=np.float32))
    slices = extract_slices(vol, "z")
    assert len(slices) == 6
    assert slices[0].pixels.shape == (4, 5)


def test_extract_slices_plane_content():
    voxels = np.zeros((4, 5, 6), dtype=np.float32)
    voxels[:, :, 2] = 1.0
    slices = extract_slices(Volume3D(voxels), "z")
    assert np.all(slices[2].pixels == 1.0)
    assert np.all(slices[0].pixels == 0.0)


def test_extract_slices_direct_indexing_oracle():
    rng = np.random.default_rng(12)
    voxels = rng.random((7, 6, 5), dtype=np.float32)
    vol = Volume3D(voxels)
    got = extract_slices(vol, "y", indices=[3])[0]
    expected = voxels[:, 3, :]  # independent direct indexing
    assert np.array_equal(got.pixels, expected)


def test_extract_slices_out_of_range():
    vol = Volume3D(np.zeros((4, 4, 4), dtype=np.float32))
    with pytest.raises(IndexError):
        extract_slices(vol, "x", indices=[4])


# -- classifier input ---------------------------------------------------------

def test_prepare_classifier_input_shape():
    sl = SliceImage2D(np.random.default_rng(13).random((512, 512), dtype=np.float32))
    out = prepare_classifier_input(sl)
    assert out.pixels.shape == (224, 224, 3)
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_prepare_classifier_input_identity_at_224():
    rng = np.random.default_rng(14)
    px = rng.random((224, 224, 3), dtype=np.float32)
    out = prepare_classifier_input(SliceImage2D(px))
    np.testing.assert_allclose(out.pixels, px, atol=1e-6)


def test_prepare_classifier_input_constant():
    out = prepare_classifier_input(SliceImage2D(np.full((37, 61), 0.7, dtype=np.float32)))
    np.testing.assert_allclose(out.pixels, 0.7, atol=1e-6)


def test_prepare_classifier_replicates_channels():
    px = np.zeros((10, 10), dtype=np.float32)
    px[2, 3] = 1.0
    out = prepare_classifier_input(SliceImage2D(px))
    assert np.array_equal(out.pixels[..., 0], out.pixels[..., 1])
    assert np.array_equal(out.pixels[..., 1], out.pixels[..., 2])


def test_sample_seed_stable():
    assert sample_seed(1, "case-a", 2) == sample_seed(1, "case-a", 2)
    assert sample_seed(1, "case-a", 2) != sample_seed(1, "case-a", 3)
    assert sample_seed(1, "case-a", 2) != sample_seed(2, "case-a", 2)

"""Segmenter architecture, guidance-map math and inference contracts."""

import numpy as np
import pytest
import torch

from lungtriage.errors import ClickOutOfBoundsError
from lungtriage.segmenter import (
    GuidanceClick,
    GuidanceMaps,
    SegmenterConfig,
    build_segmenter,
    make_guidance_maps,
    segment,
    simulate_clicks,
)
from lungtriage.volume import SegmentationMask, Volume3D


@pytest.fixture(scope="module")
def tiny_seg4():
    return build_segmenter(SegmenterConfig(out_channels=4, base_channels=4, weight_seed=0))


# -- architecture ----------------------------------------------------------------

def test_output_channels_match_scheme():
    for out_channels, scheme in ((2, "seg2"), (4, "seg4")):
        model = build_segmenter(SegmenterConfig(out_channels=out_channels, base_channels=4))
        assert model.head.out_channels == out_channels
        assert model.kind == scheme
        assert model.architecture_summary()["out_channels"] == out_channels


def test_levels_and_skips(tiny_seg4):
    summary = tiny_seg4.architecture_summary()
    assert summary["levels"] == 4
    assert summary["skip_connections"] == 3
    assert summary["in_channels"] == 3


def test_channel_doubling_sequence():
    for base in (4, 8, 16):
        model = build_segmenter(SegmenterConfig(out_channels=4, base_channels=base))
        assert model.architecture_summary()["encoder_channels"] == (
            base, 2 * base, 4 * base, 8 * base,
        )


def test_conv_block_structure(tiny_seg4):
    # every encoder level: two 3x3x3 convs each followed by BN then ReLU
    for encoder in tiny_seg4.encoders:
        kinds = [type(m).__name__ for m in encoder.body]
        assert kinds == ["Conv3d", "BatchNorm3d", "ReLU", "Conv3d", "BatchNorm3d", "ReLU"]
        convs = [m for m in encoder.body if isinstance(m, torch.nn.Conv3d)]
        assert all(m.kernel_size == (3, 3, 3) for m in convs)


def test_upconv_geometry(tiny_seg4):
    for up in tiny_seg4.upconvs:
        assert up.kernel_size == (2, 2, 2)
        assert up.stride == (2, 2, 2)
    assert tiny_seg4.pool.kernel_size == 2 and tiny_seg4.pool.stride == 2


def test_head_is_1x1x1(tiny_seg4):
    assert tiny_seg4.head.kernel_size == (1, 1, 1)


def test_shape_law(tiny_seg4):
    with torch.no_grad():
        out = tiny_seg4(torch.zeros(1, 3, 64, 64, 32))
    assert tuple(out.shape) == (1, 4, 64, 64, 32)


def test_indivisible_dims_rejected(tiny_seg4):
    with pytest.raises(ValueError, match="divisible"):
        tiny_seg4(torch.zeros(1, 3, 60, 64, 32))


def test_config_validation():
    with pytest.raises(ValueError):
        SegmenterConfig(out_channels=3)
    with pytest.raises(ValueError):
        SegmenterConfig(base_channels=3)
    with pytest.raises(ValueError):
        SegmenterConfig(levels=5)


# -- guidance maps ------------------------------------------------------------------

def test_no_clicks_zero_fields():
    maps = make_guidance_maps([], (8, 8, 8))
    assert not maps.positive.any()
    assert not maps.negative.any()


def test_single_click_unit_peak():
    maps = make_guidance_maps([GuidanceClick((3, 4, 5), "positive")], (8, 9, 10), sigma_vox=2.0)
    assert maps.positive[3, 4, 5] == pytest.approx(1.0)
    assert maps.positive.max() == pytest.approx(1.0)
    assert np.unravel_index(np.argmax(maps.positive), maps.positive.shape) == (3, 4, 5)
    assert not maps.negative.any()


def test_two_clicks_max_of_singles_oracle():
    shape = (12, 12, 12)
    clicks = [GuidanceClick((2, 3, 4), "positive"), GuidanceClick((9, 8, 7), "positive")]
    combined = make_guidance_maps(clicks, shape, sigma_vox=1.5)

    # independent oracle: exhaustive two single-click fields, voxelwise max
    def single_field(voxel):
        field = np.zeros(shape)
        for ix in range(shape[0]):
            for iy in range(shape[1]):
                for iz in range(shape[2]):
                    d_sq = (ix - voxel[0]) ** 2 + (iy - voxel[1]) ** 2 + (iz - voxel[2]) ** 2
                    field[ix, iy, iz] = np.exp(-d_sq / (2 * 1.5**2))
        return field

    expected = np.maximum(single_field((2, 3, 4)), single_field((9, 8, 7)))
    np.testing.assert_allclose(combined.positive, expected, atol=1e-6)


def test_polarities_independent():
    clicks = [GuidanceClick((1, 1, 1), "positive"), GuidanceClick((6, 6, 6), "negative")]
    maps = make_guidance_maps(clicks, (8, 8, 8))
    only_pos = make_guidance_maps([clicks[0]], (8, 8, 8))
    only_neg = make_guidance_maps([clicks[1]], (8, 8, 8))
    assert np.array_equal(maps.positive, only_pos.positive)
    assert np.array_equal(maps.negative, only_neg.negative)


def test_out_of_bounds_click_reports_index():
    clicks = [GuidanceClick((1, 1, 1), "positive"), GuidanceClick((8, 0, 0), "negative")]
    with pytest.raises(ClickOutOfBoundsError) as err:
        make_guidance_maps(clicks, (8, 8, 8))
    assert err.value.click_index == 1


def test_click_validation():
    with pytest.raises(ValueError):
        GuidanceClick((1, 2), "positive")
    with pytest.raises(ValueError):
        GuidanceClick((1, 2, 3), "maybe")


def test_sigma_validation():
    with pytest.raises(ValueError):
        make_guidance_maps([], (4, 4, 4), sigma_vox=0.0)


# -- inference ------------------------------------------------------------------------

def test_zero_guidance_equals_none(tiny_seg4):
    rng = np.random.default_rng(0)
    vol = Volume3D(rng.random((16, 16, 16), dtype=np.float32))
    scores_none, mask_none = segment(tiny_seg4, vol, None)
    scores_zero, mask_zero = segment(tiny_seg4, vol, GuidanceMaps.zeros(vol.shape))
    assert np.array_equal(scores_none, scores_zero)
    assert np.array_equal(mask_none.labels, mask_zero.labels)


def test_segment_deterministic(tiny_seg4):
    rng = np.random.default_rng(1)
    vol = Volume3D(rng.random((16, 16, 16), dtype=np.float32))
    _, mask_a = segment(tiny_seg4, vol)
    _, mask_b = segment(tiny_seg4, vol)
    assert np.array_equal(mask_a.labels, mask_b.labels)


def test_segment_scores_shape_and_labels(tiny_seg4):
    rng = np.random.default_rng(2)
    vol = Volume3D(rng.random((16, 16, 8), dtype=np.float32))
    scores, mask = segment(tiny_seg4, vol)
    assert scores.shape == (16, 16, 8, 4)
    assert mask.scheme == "seg4"
    assert set(np.unique(mask.labels)) <= {0, 1, 2, 3}
    # argmax consistency, ties toward lower id (np.argmax first-max)
    assert np.array_equal(mask.labels, np.argmax(scores, axis=-1))


def test_guidance_shape_mismatch(tiny_seg4):
    vol = Volume3D(np.zeros((16, 16, 16), dtype=np.float32))
    with pytest.raises(ValueError, match="guidance"):
        segment(tiny_seg4, vol, GuidanceMaps.zeros((8, 8, 8)))


def test_guidance_changes_output(tiny_seg4):
    rng = np.random.default_rng(3)
    vol = Volume3D(rng.random((16, 16, 16), dtype=np.float32))
    scores_zero, _ = segment(tiny_seg4, vol)
    maps = make_guidance_maps([GuidanceClick((8, 8, 8), "positive")], vol.shape)
    scores_click, _ = segment(tiny_seg4, vol, maps)
    assert not np.array_equal(scores_zero, scores_click)


def test_simulate_clicks_bounds_and_polarity():
    labels = np.zeros((10, 10, 10), dtype=np.uint8)
    labels[4:6, 4:6, 4:6] = 3
    mask = SegmentationMask(labels, "seg4")
    rng = np.random.default_rng(7)
    for _ in range(10):
        clicks = simulate_clicks(mask, rng, lesion_id=3)
        for c in clicks:
            if c.polarity == "positive":
                assert mask.labels[c.voxel] == 3
            else:
                assert mask.labels[c.voxel] != 3


def test_simulate_clicks_no_lesion():
    mask = SegmentationMask(np.zeros((6, 6, 6), dtype=np.uint8), "seg4")
    clicks = simulate_clicks(mask, np.random.default_rng(0), lesion_id=3)
    assert all(c.polarity == "negative" for c in clicks)

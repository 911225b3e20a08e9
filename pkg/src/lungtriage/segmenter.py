"""Click-guided 3D U-Net for lesion segmentation.

Four resolution levels. Each encoder level runs two 3x3x3 convolutions
(batch norm before ReLU), doubling the channel count within the level,
then a 2x2x2 max pool of stride 2 between levels; outputs per level form
the sequence base*(1, 2, 4, 8). Each decoder level applies a 2x2x2
up-convolution of stride 2, concatenates the same-resolution encoder
features over a skip connection, and runs two more 3x3x3 convolutions.
A final 1x1x1 convolution maps to one channel per label category.

Convolutions use same-padding, so the output grid equals the input grid;
spatial dims must be divisible by 8 (three pooling steps).

The three input channels are the normalized image plus two click-derived
guidance fields: a positive map marking lesion areas of interest and a
negative map marking areas to exclude. Each map is the voxelwise maximum
of unit-peak Gaussians centered on that polarity's clicks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ClickOutOfBoundsError
from .labels import SCHEME_SEG2, SCHEME_SEG4, scheme_num_labels
from .volume import SegmentationMask, Volume3D

LEVELS = 4
IN_CHANNELS = 3
DEFAULT_GUIDANCE_SIGMA = 2.0

_SCHEME_BY_OUT = {2: SCHEME_SEG2, 4: SCHEME_SEG4}


@dataclass
class SegmenterConfig:
    levels: int = LEVELS
    in_channels: int = IN_CHANNELS
    out_channels: int = 4
    base_channels: int = 16
    bn_before_relu: bool = True
    weight_seed: int = 0

    def __post_init__(self):
        if self.levels != LEVELS:
            raise ValueError("this architecture is fixed at 4 resolution levels")
        if self.out_channels not in _SCHEME_BY_OUT:
            raise ValueError(f"out_channels must be 2 or 4, got {self.out_channels}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ValueError("base_channels must be an even number >= 2")

    @property
    def scheme(self) -> str:
        return _SCHEME_BY_OUT[self.out_channels]

    @classmethod
    def for_scheme(cls, scheme: str, **kwargs) -> "SegmenterConfig":
        return cls(out_channels=scheme_num_labels(scheme), **kwargs)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base_channels": self.base_channels,
            "bn_before_relu": self.bn_before_relu,
            "weight_seed": self.weight_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterConfig":
        return cls(**d)


@dataclass
class GuidanceClick:
    voxel: tuple
    polarity: str

    def __post_init__(self):
        self.voxel = tuple(int(v) for v in self.voxel)
        if len(self.voxel) != 3:
            raise ValueError(f"click voxel must have 3 coordinates, got {self.voxel}")
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"polarity must be positive or negative, got {self.polarity!r}")


@dataclass
class GuidanceMaps:
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        self.positive = np.asarray(self.positive, dtype=np.float32)
        self.negative = np.asarray(self.negative, dtype=np.float32)
        if self.positive.shape != self.negative.shape:
            raise ValueError("positive and negative maps must be co-shaped")

    @classmethod
    def zeros(cls, shape) -> "GuidanceMaps":
        return cls(np.zeros(shape, dtype=np.float32), np.zeros(shape, dtype=np.float32))


def make_guidance_maps(clicks, shape, sigma_vox: float = DEFAULT_GUIDANCE_SIGMA) -> GuidanceMaps:
    """Render clicks into per-polarity scalar fields.

    Each field is the voxelwise max of unit-peak Gaussians with std
    sigma_vox centered at that polarity's clicks; no clicks of a polarity
    leaves its field identically zero. An out-of-bounds click raises
    ClickOutOfBoundsError carrying the offending click index.
    """
    if sigma_vox <= 0:
        raise ValueError("sigma_vox must be > 0")
    shape = tuple(shape)
    maps = GuidanceMaps.zeros(shape)
    xs, ys, zs = np.ogrid[: shape[0], : shape[1], : shape[2]]
    for index, click in enumerate(clicks):
        v = click.voxel
        if any(not 0 <= v[a] < shape[a] for a in range(3)):
            raise ClickOutOfBoundsError(index, v, shape)
        d_sq = (xs - v[0]) ** 2 + (ys - v[1]) ** 2 + (zs - v[2]) ** 2
        bump = np.exp(-d_sq / (2.0 * sigma_vox**2)).astype(np.float32)
        target = maps.positive if click.polarity == "positive" else maps.negative
        np.maximum(target, bump, out=target)
    return maps


class _ConvBlock(nn.Module):
    """Two 3x3x3 same-padded convolutions, each BN (optional) then ReLU."""

    def __init__(self, in_channels, mid_channels, out_channels, bn=True):
        super().__init__()
        def unit(cin, cout):
            layers = [nn.Conv3d(cin, cout, 3, padding=1, bias=not bn)]
            if bn:
                layers.append(nn.BatchNorm3d(cout))
            layers.append(nn.ReLU(inplace=True))
            return layers

        self.body = nn.Sequential(*unit(in_channels, mid_channels), *unit(mid_channels, out_channels))

    def forward(self, x):
        return self.body(x)


class SegmenterModel(nn.Module):
    """4-level 3D U-Net with skip connections and a 1x1x1 output head."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        b = config.base_channels
        bn = config.bn_before_relu
        self.encoder_channels = tuple(b * (2**i) for i in range(LEVELS))  # (b, 2b, 4b, 8b)

        enc = []
        in_ch = config.in_channels
        for out_ch in self.encoder_channels:
            enc.append(_ConvBlock(in_ch, out_ch // 2, out_ch, bn=bn))
            in_ch = out_ch
        self.encoders = nn.ModuleList(enc)
        self.pool = nn.MaxPool3d(2, stride=2)

        ups, dec = [], []
        for level in reversed(range(LEVELS - 1)):  # 2, 1, 0
            deep = self.encoder_channels[level + 1]
            skip = self.encoder_channels[level]
            ups.append(nn.ConvTranspose3d(deep, deep, 2, stride=2))
            dec.append(_ConvBlock(deep + skip, skip, skip, bn=bn))
        self.upconvs = nn.ModuleList(ups)
        self.decoders = nn.ModuleList(dec)
        self.head = nn.Conv3d(self.encoder_channels[0], config.out_channels, 1)

        for m in self.modules():
            if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d)):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.constant_(m.bias, 0.0)
            elif isinstance(m, nn.BatchNorm3d):
                nn.init.constant_(m.weight, 1.0)
                nn.init.constant_(m.bias, 0.0)

    @property
    def kind(self) -> str:
        return self.config.scheme

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spatial = x.shape[2:]
        divisor = 2 ** (LEVELS - 1)
        if any(s % divisor for s in spatial):
            raise ValueError(
                f"input spatial dims {tuple(spatial)} must be divisible by {divisor} "
                f"({LEVELS - 1} pooling steps of stride 2)"
            )
        skips = []
        for i, encoder in enumerate(self.encoders):
            x = encoder(x)
            if i < LEVELS - 1:
                skips.append(x)
                x = self.pool(x)
        for up, decoder, skip in zip(self.upconvs, self.decoders, reversed(skips)):
            x = up(x)
            x = decoder(torch.cat([x, skip], dim=1))
        return self.head(x)

    def architecture_summary(self) -> dict:
        return {
            "levels": LEVELS,
            "skip_connections": len(self.upconvs),
            "encoder_channels": self.encoder_channels,
            "in_channels": self.config.in_channels,
            "out_channels": self.config.out_channels,
            "bn_before_relu": self.config.bn_before_relu,
        }


def build_segmenter(config: SegmenterConfig | None = None) -> SegmenterModel:
    """Construct the segmenter with seeded weight init."""
    config = config or SegmenterConfig()
    torch.manual_seed(config.weight_seed)
    model = SegmenterModel(config)
    model.eval()
    return model


def stack_input_channels(volume: Volume3D, guidance: GuidanceMaps | None) -> np.ndarray:
    """Channel order: 0 image, 1 positive guidance, 2 negative guidance."""
    if guidance is None:
        guidance = GuidanceMaps.zeros(volume.shape)
    if guidance.positive.shape != volume.shape:
        raise ValueError(
            f"guidance shape {guidance.positive.shape} does not match volume {volume.shape}"
        )
    return np.stack([volume.voxels, guidance.positive, guidance.negative]).astype(np.float32)


def segment(model: SegmenterModel, volume: Volume3D, guidance: GuidanceMaps | None = None):
    """Per-voxel class scores and the argmax mask.

    The volume is expected normalized to [0, 1]. Returns
    (scores[x, y, z, class], SegmentationMask); argmax ties resolve to the
    lower label id.
    """
    channels = stack_input_channels(volume, guidance)
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(channels).unsqueeze(0))[0]
    scores = np.ascontiguousarray(logits.numpy().transpose(1, 2, 3, 0))
    labels = np.argmax(scores, axis=-1).astype(np.uint8)
    return scores, SegmentationMask(labels, model.kind)


def simulate_clicks(mask: SegmentationMask, rng, lesion_id: int,
                    max_positive: int = 5, max_negative: int = 5) -> list:
    """Seeded stand-in for expert clicks during automated training.

    Draws 0..max_positive positive clicks uniformly from lesion voxels and
    0..max_negative negative clicks from non-lesion voxels.
    """
    clicks = []
    lesion_voxels = np.argwhere(mask.labels == lesion_id)
    other_voxels = np.argwhere(mask.labels != lesion_id)
    n_pos = int(rng.integers(0, max_positive + 1)) if len(lesion_voxels) else 0
    n_neg = int(rng.integers(0, max_negative + 1)) if len(other_voxels) else 0
    if n_pos:
        picks = rng.integers(0, len(lesion_voxels), size=n_pos)
        clicks += [GuidanceClick(tuple(lesion_voxels[i]), "positive") for i in picks]
    if n_neg:
        picks = rng.integers(0, len(other_voxels), size=n_neg)
        clicks += [GuidanceClick(tuple(other_voxels[i]), "negative") for i in picks]
    return clicks

"""Three-class ResNet-50 built from scratch.

Structure: a stem (7x7 stride-2 convolution, batch norm, ReLU, 3x3
stride-2 max pool) followed by four stages of bottleneck residual blocks
(3, 4, 6, 3 of them; each block is a 1x1, 3x3, 1x1 convolution triple),
global average pooling and one fully connected layer. Counting the stem
plus three convolutions per block gives 1 + 3*(3+4+6+3) = 49 convolution
layers; with the fully connected head the network has 50 named layers.
Projection shortcuts at stage entries only match dimensions and are not
counted as layers. A 224x224x3 input reaches the pooling step as a
7x7x2048 feature map at the default width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .labels import CLASS_LABELS
from .transforms import extract_slices, prepare_classifier_input
from .volume import SliceImage2D, Volume3D

STAGE_BLOCK_COUNTS = (3, 4, 6, 3)
_BOTTLENECK_EXPANSION = 4


@dataclass
class ClassifierConfig:
    num_classes: int = 3
    stage_block_counts: tuple = STAGE_BLOCK_COUNTS
    input_shape: tuple = (224, 224, 3)
    base_width: int = 64  # 64 is the standard network; smaller for desk-scale tests
    weight_seed: int = 0

    def __post_init__(self):
        self.stage_block_counts = tuple(self.stage_block_counts)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")

    @property
    def conv_layer_count(self) -> int:
        return 1 + 3 * sum(self.stage_block_counts)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "stage_block_counts": list(self.stage_block_counts),
            "input_shape": list(self.input_shape),
            "base_width": self.base_width,
            "weight_seed": self.weight_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(
            num_classes=d["num_classes"],
            stage_block_counts=tuple(d["stage_block_counts"]),
            input_shape=tuple(d["input_shape"]),
            base_width=d.get("base_width", 64),
            weight_seed=d.get("weight_seed", 0),
        )


@dataclass
class ClassProbabilities:
    """Probability per triage class; components sum to 1."""

    p: dict

    def __post_init__(self):
        if set(self.p) != set(CLASS_LABELS):
            raise ValueError(f"expected probabilities for {CLASS_LABELS}, got {tuple(self.p)}")
        vec = self.as_vector()
        if np.any(vec < -1e-9) or np.any(vec > 1 + 1e-9) or abs(vec.sum() - 1.0) > 1e-6:
            raise ValueError(f"not a probability vector: {self.p}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.p[c] for c in CLASS_LABELS], dtype=np.float64)

    def predicted_label(self) -> str:
        # np.argmax keeps the first maximum, so ties resolve in
        # CLASS_LABELS order (COVID over Pneumonia over Normal).
        return CLASS_LABELS[int(np.argmax(self.as_vector()))]

    @classmethod
    def from_vector(cls, vec) -> "ClassProbabilities":
        vec = np.asarray(vec, dtype=np.float64)
        return cls({c: float(v) for c, v in zip(CLASS_LABELS, vec)})


class Bottleneck(nn.Module):
    def __init__(self, in_channels, width, stride=1, project=False):
        super().__init__()
        out_channels = width * _BOTTLENECK_EXPANSION
        self.conv1 = nn.Conv2d(in_channels, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, out_channels, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        self.projection = None
        if project:
            self.projection = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        identity = x if self.projection is None else self.projection(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ClassifierModel(nn.Module):
    """ResNet-50 with a pre-pool feature hook and architecture reporting."""

    kind = "classifier3"

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        w = config.base_width

        self.stem = nn.Sequential(
            nn.Conv2d(3, w, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(w),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        in_channels = w
        for stage_idx, blocks in enumerate(config.stage_block_counts):
            width = w * (2 ** stage_idx)
            stride = 1 if stage_idx == 0 else 2
            layers = [Bottleneck(in_channels, width, stride=stride, project=True)]
            in_channels = width * _BOTTLENECK_EXPANSION
            layers.extend(Bottleneck(in_channels, width) for _ in range(blocks - 1))
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_channels, config.num_classes)

        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.constant_(m.weight, 1.0)
                nn.init.constant_(m.bias, 0.0)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-pool feature map (7x7x2048 for a 224x224x3 input)."""
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.features(x))
        return self.fc(torch.flatten(x, 1))

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)

    def architecture_summary(self) -> dict:
        """Layer counts under the main-path counting convention."""
        main_convs = 1 + 3 * sum(len(s) for s in self.stages)
        projections = sum(1 for s in self.stages for b in s if b.projection is not None)
        fc_layers = 1
        return {
            "conv_layers": main_convs,
            "fc_layers": fc_layers,
            "named_layer_total": main_convs + fc_layers,
            "projection_blocks": projections,
            "stage_block_counts": tuple(len(s) for s in self.stages),
        }


def build_classifier(config: ClassifierConfig | None = None) -> ClassifierModel:
    """Construct the classifier with seeded weight init."""
    config = config or ClassifierConfig()
    torch.manual_seed(config.weight_seed)
    model = ClassifierModel(config)
    model.eval()
    return model


def _slice_to_tensor(slice224: SliceImage2D) -> torch.Tensor:
    px = slice224.pixels
    if px.ndim != 3 or px.shape != (224, 224, 3):
        raise ValueError(f"expected a 224x224x3 slice, got shape {px.shape}")
    return torch.from_numpy(np.ascontiguousarray(px.transpose(2, 0, 1))).float()


def classify_slice(model: ClassifierModel, slice224: SliceImage2D) -> ClassProbabilities:
    """Probabilities for one prepared slice (inference mode, deterministic)."""
    model.eval()
    with torch.no_grad():
        probs = model.predict_proba(_slice_to_tensor(slice224).unsqueeze(0))[0]
    return ClassProbabilities.from_vector(probs.numpy())


def aggregate_slice_probabilities(prob_vectors) -> ClassProbabilities:
    """Volume-level probabilities = mean of per-slice probabilities."""
    stack = np.stack([np.asarray(v, dtype=np.float64) for v in prob_vectors])
    mean = stack.mean(axis=0)
    return ClassProbabilities.from_vector(mean / mean.sum())


def classify_volume(model: ClassifierModel, volume: Volume3D, batch_size: int = 8):
    """Classify every axial slice and average the probabilities.

    Returns (ClassProbabilities, predicted_label); ties break toward the
    earlier class in CLASS_LABELS order.
    """
    slices = extract_slices(volume, "z")
    tensors = [_slice_to_tensor(prepare_classifier_input(s)) for s in slices]
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            batch = torch.stack(tensors[start : start + batch_size])
            probs.append(model.predict_proba(batch).numpy())
    merged = aggregate_slice_probabilities(np.concatenate(probs))
    return merged, merged.predicted_label()

"""Evaluation math: Dice overlap, accuracies, loss bookkeeping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .volume import SegmentationMask

REPORT_FORMAT_VERSION = 1


def _label_arrays(pred, truth):
    a = pred.labels if isinstance(pred, SegmentationMask) else np.asarray(pred)
    b = truth.labels if isinstance(truth, SegmentationMask) else np.asarray(truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice(pred, truth, label_id: int) -> float:
    """Dice similarity 2|A∩B| / (|A| + |B|) for one label id.

    Both label sets empty counts as perfect agreement (1.0).
    """
    a, b = _label_arrays(pred, truth)
    in_a = a == label_id
    in_b = b == label_id
    denom = int(in_a.sum()) + int(in_b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(in_a, in_b).sum()) / denom


def mean_dice_std(per_case_dice) -> tuple:
    """Arithmetic mean and population (N-denominator) std of case scores."""
    values = np.asarray(list(per_case_dice), dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty Dice list")
    return float(values.mean()), float(values.std(ddof=0))


def voxel_accuracy(pred, truth) -> float:
    """Fraction of voxels whose labels agree."""
    a, b = _label_arrays(pred, truth)
    return float(np.mean(a == b))


def classification_accuracy(preds, truths) -> float:
    """Fraction of equal labels over two equal-length sequences."""
    preds, truths = list(preds), list(truths)
    if not preds or len(preds) != len(truths):
        raise ValueError(f"length mismatch or empty: {len(preds)} vs {len(truths)}")
    return sum(p == t for p, t in zip(preds, truths)) / len(preds)


def steps_total(epochs: int, iterations_per_epoch: int) -> int:
    """Global update count: epochs * iterations per epoch."""
    if epochs < 1 or iterations_per_epoch < 1:
        raise ValueError("epochs and iterations_per_epoch must be positive")
    return epochs * iterations_per_epoch


@dataclass
class MetricsReport:
    """Per-run metric history plus Dice summaries."""

    train_loss: list = field(default_factory=list)          # one entry per epoch
    validation_metric: list = field(default_factory=list)   # one entry per epoch
    metric_name: str = ""
    per_case_dice: dict = field(default_factory=dict)       # case_id -> {label_id: dice}
    mean_dice: float | None = None
    std_dice: float | None = None
    epochs: int = 0
    iterations_per_epoch: int = 0
    format_version: int = REPORT_FORMAT_VERSION

    @property
    def total_steps(self) -> int:
        return steps_total(self.epochs, self.iterations_per_epoch) if self.epochs else 0

    def summarize_dice(self, label_id: int) -> None:
        scores = [case[label_id] for case in self.per_case_dice.values() if label_id in case]
        if scores:
            self.mean_dice, self.std_dice = mean_dice_std(scores)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["total_steps"] = self.total_steps
        # JSON object keys are strings; keep label ids round-trippable.
        payload["per_case_dice"] = {
            case: {str(k): v for k, v in scores.items()}
            for case, scores in self.per_case_dice.items()
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        payload.pop("total_steps", None)
        payload["per_case_dice"] = {
            case: {int(k): v for k, v in scores.items()}
            for case, scores in payload.get("per_case_dice", {}).items()
        }
        return cls(**payload)

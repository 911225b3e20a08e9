"""Classify-then-segment triage over single cases and whole manifests.

Every case is classified; only cases predicted COVID continue into the
segmenter (expert clicks, when present, become guidance maps, otherwise
guidance is zero). Batch runs collect per-case results plus a summary:
classification accuracy where truth labels exist and MeanDice +/- Std
over the segmented cases that have truth masks.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .classifier import ClassProbabilities, classify_volume
from .errors import CheckpointError
from .labels import SEG_SCHEME_LABELS
from .metrics import classification_accuracy, dice, mean_dice_std
from .overlay import export_overlay
from .segmenter import DEFAULT_GUIDANCE_SIGMA, make_guidance_maps, segment
from .training import CachedDataset, load_model
from .volume import SegmentationMask, Volume3D, save_mask

COVID = "COVID"


@dataclass
class TriageResult:
    case_id: str
    probabilities: ClassProbabilities
    predicted_label: str
    mask: SegmentationMask | None = None
    dice_per_label: dict | None = None
    timings: dict | None = None

    def __post_init__(self):
        if (self.mask is not None) != (self.predicted_label == COVID):
            raise ValueError("a mask is present exactly when the predicted label is COVID")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "probabilities": self.probabilities.p,
            "predicted_label": self.predicted_label,
            "has_mask": self.mask is not None,
            "dice_per_label": (
                {str(k): v for k, v in self.dice_per_label.items()}
                if self.dice_per_label is not None else None
            ),
            "timings": self.timings,
        }


def _as_model(obj, kinds, label):
    if isinstance(obj, (str, Path)):
        model, _ = load_model(obj)
    else:
        model = obj
    if model is not None and model.kind not in kinds:
        raise CheckpointError(f"{label}: got model kind {model.kind!r}, expected one of {kinds}")
    return model


def triage_case(classifier, segmenter, volume: Volume3D, clicks=None,
                truth_mask: SegmentationMask | None = None, scheme: str | None = None,
                guidance_sigma: float = DEFAULT_GUIDANCE_SIGMA, case_id: str = "case") -> TriageResult:
    """Run one case through the classify-then-segment routing.

    classifier/segmenter may be models or checkpoint paths. When `scheme`
    is given, the segmenter checkpoint must match it.
    """
    clf = _as_model(classifier, ("classifier3",), "classifier")
    seg_kinds = ("seg2", "seg4") if scheme is None else (scheme,)
    seg = _as_model(segmenter, seg_kinds, "segmenter") if segmenter is not None else None

    timings = {}
    t0 = time.perf_counter()
    probs, label = classify_volume(clf, volume)
    timings["classify_s"] = time.perf_counter() - t0

    mask = None
    dice_per_label = None
    if label == COVID and seg is not None:
        guidance = make_guidance_maps(clicks or [], volume.shape, guidance_sigma)
        t1 = time.perf_counter()
        _, mask = segment(seg, volume, guidance)
        timings["segment_s"] = time.perf_counter() - t1
        if truth_mask is not None:
            truth = truth_mask.to_seg2() if mask.scheme == "seg2" else truth_mask
            dice_per_label = {
                lid: dice(mask, truth, lid) for lid in SEG_SCHEME_LABELS[mask.scheme]
            }
    return TriageResult(case_id, probs, label, mask, dice_per_label, timings)


def _mean_foreground_dice(per_label: dict) -> float:
    fg = [v for k, v in per_label.items() if k != 0]
    return sum(fg) / len(fg)


def triage_batch(manifest, classifier, segmenter, out_dir=None, root=".",
                 scheme: str | None = None, hu_window=None):
    """Triage every record of a manifest.

    Returns (results sorted by case_id, summary dict). Per-case failures
    are recorded in the summary and do not stop the batch. When out_dir
    is set, per-case masks, center-slice overlays and a results.json are
    written there.
    """
    clf = _as_model(classifier, ("classifier3",), "classifier")
    seg_kinds = ("seg2", "seg4") if scheme is None else (scheme,)
    seg = _as_model(segmenter, seg_kinds, "segmenter") if segmenter is not None else None
    seg_scheme = seg.kind if seg is not None else "seg4"

    # triage runs over every record regardless of role
    dataset = CachedDataset(manifest, root, seg_scheme, role=None, hu_window=hu_window,
                            enabled=False)

    results, errors = [], {}
    for i, record in enumerate(dataset.records):
        try:
            entry = dataset.get(i)
            result = triage_case(clf, seg, entry["volume"], truth_mask=entry.get("mask"),
                                 scheme=scheme, case_id=record.case_id)
            results.append(result)
        except Exception as exc:  # per-case isolation
            errors[record.case_id] = f"{type(exc).__name__}: {exc}"
    results.sort(key=lambda r: r.case_id)

    labeled = [
        (r.predicted_label, rec.class_label)
        for r in results
        for rec in manifest.records
        if rec.case_id == r.case_id and rec.class_label
    ]
    summary = {
        "cases": len(manifest.records),
        "triaged": len(results),
        "errors": errors,
        "segmented": sum(1 for r in results if r.mask is not None),
    }
    if labeled:
        summary["classification_accuracy"] = classification_accuracy(
            [p for p, _ in labeled], [t for _, t in labeled]
        )
    per_case_dice = {
        r.case_id: _mean_foreground_dice(r.dice_per_label)
        for r in results
        if r.dice_per_label is not None
    }
    if per_case_dice:
        mean, std = mean_dice_std(list(per_case_dice.values()))
        summary["mean_dice"] = mean
        summary["std_dice"] = std
        summary["per_case_dice"] = per_case_dice

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, record in enumerate(dataset.records):
            result = next((r for r in results if r.case_id == record.case_id), None)
            if result is None or result.mask is None:
                continue
            save_mask(result.mask, out_dir / f"{record.case_id}_pred.nii.gz")
            entry = dataset.get(i)
            center = entry["volume"].shape[2] // 2
            export_overlay(entry["volume"], result.mask, "z", center,
                           out_dir / f"{record.case_id}_overlay.png")
        payload = {
            "summary": summary,
            "results": [r.to_dict() for r in results],
        }
        (out_dir / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True),
                                              encoding="utf-8")
    return results, summary

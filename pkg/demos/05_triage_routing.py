"""Triage routing and click refinement.

Every case is classified; only COVID-predicted cases reach segmentation.
Clicks turn into guidance maps that steer the segmenter, so a positive
click inside the lesion typically changes the predicted mask.
"""

from pathlib import Path

import numpy as np
import torch

from lungtriage.classifier import ClassifierConfig, build_classifier
from lungtriage.phantom import PhantomSpec, generate_phantom
from lungtriage.pipeline import triage_batch, triage_case
from lungtriage.segmenter import GuidanceClick, SegmenterConfig, build_segmenter
from lungtriage.volume import save_mask, save_volume
from lungtriage.manifest import CaseRecord, DatasetManifest

out = Path("demos/output/triage")
out.mkdir(parents=True, exist_ok=True)

# random-weight demo models; see demo 04 / the acceptance suite for real fits
classifier = build_classifier(ClassifierConfig(base_width=8, weight_seed=0))
segmenter = build_segmenter(SegmenterConfig(out_channels=4, base_channels=4, weight_seed=0))

# force routing decisions so the demo is deterministic: bias the head
with torch.no_grad():
    classifier.fc.weight.mul_(0.0)
    classifier.fc.bias.zero_()
    classifier.fc.bias[0] = 5.0  # always "COVID"

records = []
for i, cls in enumerate(("COVID", "Pneumonia", "Normal")):
    vol, mask, _ = generate_phantom(PhantomSpec(class_label=cls, shape=(32, 32, 32), seed=i))
    save_volume(vol, out / f"case-{i}.nii.gz")
    save_mask(mask, out / f"case-{i}_mask.nii.gz")
    records.append(CaseRecord(f"case-{i}", f"case-{i}.nii.gz", f"case-{i}_mask.nii.gz",
                              cls, "inference"))
manifest = DatasetManifest(records, "seg4", 0)

results, summary = triage_batch(manifest, classifier, segmenter,
                                out_dir=out / "batch", root=out)
for r in results:
    print(f"{r.case_id}: predicted {r.predicted_label:9s} mask: {r.mask is not None}")
print("summary:", {k: v for k, v in summary.items() if k != "per_case_dice"})

# click refinement on one case
vol, truth, _ = generate_phantom(PhantomSpec(class_label="COVID", shape=(32, 32, 32), seed=0))
baseline = triage_case(classifier, segmenter, vol, case_id="clicked")
lesion_voxel = tuple(int(v) for v in np.argwhere(truth.labels == 3)[0])
clicked = triage_case(classifier, segmenter, vol,
                      clicks=[GuidanceClick(lesion_voxel, "positive")], case_id="clicked")
changed = int(np.sum(baseline.mask.labels != clicked.mask.labels))
print(f"\none positive click at {lesion_voxel} changed {changed} voxels of the mask")

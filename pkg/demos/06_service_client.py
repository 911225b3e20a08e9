"""Drive the annotation HTTP service end to end (in-process client).

The same flow the browser tool uses: upload a volume, read the
classification banner, segment with accumulated clicks, fetch rendered
slices. Swap TestClient for a real server via
`lungtriage serve --classifier ... --segmenter ... --port 8000`.
"""

from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from lungtriage.classifier import ClassifierConfig, build_classifier
from lungtriage.phantom import PhantomSpec, generate_phantom
from lungtriage.segmenter import SegmenterConfig, build_segmenter
from lungtriage.service import create_app
from lungtriage.training import Checkpoint
from lungtriage.volume import save_mask, save_volume

out = Path("demos/output/service")
out.mkdir(parents=True, exist_ok=True)

def snapshot(model, kind, path):
    Checkpoint(kind, model.config.to_dict(),
               {k: v.clone() for k, v in model.state_dict().items()},
               {}, 1, "demo", 0.0).save(path)

snapshot(build_classifier(ClassifierConfig(base_width=8, weight_seed=0)),
         "classifier3", out / "clf.pt")
snapshot(build_segmenter(SegmenterConfig(out_channels=4, base_channels=4, weight_seed=0)),
         "seg4", out / "seg4.pt")

client = TestClient(create_app(classifier_ckpt=out / "clf.pt",
                               segmenter_ckpts={"seg4": out / "seg4.pt"}))
print("health:", client.get("/api/health").json()["status"])

volume, mask, _ = generate_phantom(PhantomSpec(class_label="COVID", shape=(32, 32, 32), seed=4))
save_volume(volume, out / "case.nii.gz")
save_mask(mask, out / "mask.nii.gz")

case_id = client.post("/api/cases", content=(out / "case.nii.gz").read_bytes()).json()["case_id"]
print("uploaded case:", case_id)

banner = client.post(f"/api/cases/{case_id}/classify").json()
print("classification banner:", banner["label"],
      {k: round(v, 3) for k, v in banner["probabilities"].items()})

# attach truth so segment responses carry Dice
client.post(f"/api/cases/{case_id}/truth?scheme=seg4",
            content=(out / "mask.nii.gz").read_bytes())

zero = client.post(f"/api/cases/{case_id}/segment",
                   json={"clicks": [], "scheme": "seg4"}).json()
print("zero-click lesion dice:", round(float(zero["dice"]["3"]), 3))

lesion = [int(v) for v in np.argwhere(mask.labels == 3)[0]]
clicked = client.post(f"/api/cases/{case_id}/segment", json={
    "clicks": [{"x": lesion[0], "y": lesion[1], "z": lesion[2], "polarity": "positive"}],
    "scheme": "seg4",
}).json()
print("after 1 positive click:", round(float(clicked["dice"]["3"]), 3),
      f"({clicked['click_count']} clicks accumulated)")

png = client.get(f"/api/cases/{case_id}/slices/z/16?overlay={clicked['mask_id']}")
(out / "slice_overlay.png").write_bytes(png.content)
print(f"wrote {out}/slice_overlay.png ({len(png.content)} bytes)")

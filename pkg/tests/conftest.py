"""Shared fixtures: small phantom datasets with assigned split roles."""

import numpy as np
import pytest

from lungtriage.labels import CLASS_LABELS
from lungtriage.manifest import CaseRecord, DatasetManifest
from lungtriage.phantom import PhantomSpec, generate_phantom
from lungtriage.volume import save_mask, save_volume


def build_phantom_cases(out_dir, roles, shape=(16, 16, 16), scheme="seg4", seed=0,
                        classes=None):
    """Write one phantom per requested role; returns a DatasetManifest.

    roles is a list of split roles, one per case; classes optionally pins
    the class label per case (default cycles COVID/Pneumonia/Normal).
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, role in enumerate(roles):
        cls = classes[i] if classes else CLASS_LABELS[i % 3]
        spec = PhantomSpec(class_label=cls, shape=shape, seed=seed + i)
        vol, mask, _ = generate_phantom(spec)
        image_path = f"case-{i:02d}.nii.gz"
        mask_path = f"case-{i:02d}_mask.nii.gz"
        save_volume(vol, out_dir / image_path)
        if scheme == "seg2":
            mask = mask.to_seg2()
        save_mask(mask, out_dir / mask_path)
        records.append(CaseRecord(
            case_id=f"case-{i:02d}", image_path=image_path, mask_path=mask_path,
            class_label=cls, split_role=role,
        ))
    manifest_scheme = scheme if scheme in ("seg2", "seg4") else "classification3"
    return DatasetManifest(records, manifest_scheme, seed)


@pytest.fixture
def seg4_dataset(tmp_path):
    manifest = build_phantom_cases(
        tmp_path / "data", roles=["train", "train", "validation"],
        shape=(16, 16, 16), scheme="seg4", classes=["COVID", "COVID", "COVID"],
    )
    return manifest, tmp_path / "data"


@pytest.fixture
def classify_dataset(tmp_path):
    manifest = build_phantom_cases(
        tmp_path / "data",
        roles=["train"] * 6 + ["validation"] * 3,
        shape=(24, 24, 24), scheme="seg4",
    )
    return manifest, tmp_path / "data"

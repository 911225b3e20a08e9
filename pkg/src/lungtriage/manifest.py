"""Dataset manifests: per-case bookkeeping and deterministic splits.

Manifest file format (UTF-8, one record per line):

    #lungtriage-manifest v1 scheme=<scheme> seed=<int>
    case_id<TAB>image_path<TAB>mask_path<TAB>class_label<TAB>split_role

mask_path and class_label may be empty. Lines starting with '#' after the
first are comments. The exact grammar is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ManifestError, SplitError
from .labels import (
    CLASS_LABELS,
    ROLE_INFERENCE,
    ROLE_TRAIN,
    ROLE_VALIDATION,
    SCHEME_CLASSIFICATION,
    SCHEME_SEG2,
    SCHEME_SEG4,
    SCHEMES,
    canonical_role,
)

_HEADER_PREFIX = "#lungtriage-manifest v1"

# Explicit split counts (train, validation, inference) for the two
# segmentation sets; classification splits fractionally 70/30.
SPLIT_COUNTS = {
    SCHEME_SEG4: (15, 3, 2),
    SCHEME_SEG2: (160, 39, 0),
}
TRAIN_FRACTION = 0.70


@dataclass
class CaseRecord:
    """One study: where its files live and how it participates in a run."""

    case_id: str
    image_path: str
    mask_path: str | None = None
    class_label: str | None = None
    split_role: str = ROLE_TRAIN

    def __post_init__(self):
        if not self.case_id:
            raise ManifestError("case_id must be nonempty")
        if self.class_label is not None and self.class_label not in CLASS_LABELS:
            raise ManifestError(
                f"case {self.case_id}: unknown class label {self.class_label!r}"
            )
        self.split_role = canonical_role(self.split_role)


@dataclass
class DatasetManifest:
    """Ordered case records plus the labeling scheme and split seed."""

    records: list
    labeling_scheme: str
    seed: int = 0

    def __post_init__(self):
        if self.labeling_scheme not in SCHEMES:
            raise ManifestError(f"unknown labeling scheme {self.labeling_scheme!r}")
        ids = [r.case_id for r in self.records]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ManifestError(f"duplicate case ids: {sorted(dupes)}")

    def records_for_role(self, role: str) -> list:
        role = canonical_role(role)
        return [r for r in self.records if r.split_role == role]

    def __len__(self) -> int:
        return len(self.records)


def split_dataset(records, scheme: str, seed: int, counts=None) -> DatasetManifest:
    """Assign split roles deterministically from (case ids, seed).

    classification3 splits fractionally: floor(0.70*N) cases train, the
    rest validation. seg4 uses explicit counts 15/3/2 and seg2 160/39;
    records beyond the explicit total also go to training. `counts` can
    override the per-role counts for desk-scale sets.
    """
    if not records:
        raise SplitError("no records to split")
    ids = [r.case_id for r in records]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate case ids in records")

    n = len(records)
    if counts is None and scheme == SCHEME_CLASSIFICATION:
        n_train = int(np.floor(TRAIN_FRACTION * n))
        counts = (n_train, n - n_train, 0)
    elif counts is None:
        counts = SPLIT_COUNTS[scheme]
    n_train, n_val, n_infer = counts
    required = n_train + n_val + n_infer
    if n < required:
        raise SplitError(
            f"scheme {scheme} requires at least {required} records, got {n}"
        )
    # Surplus records train; validation/inference keep their exact counts.
    n_train += n - required

    # The permutation is keyed by sorted case_id order, so the assignment
    # depends only on (set of ids, seed), not on input ordering.
    order = sorted(range(n), key=lambda i: records[i].case_id)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [order[p] for p in perm]

    roles = {}
    for pos, idx in enumerate(shuffled):
        if pos < n_train:
            roles[idx] = ROLE_TRAIN
        elif pos < n_train + n_val:
            roles[idx] = ROLE_VALIDATION
        else:
            roles[idx] = ROLE_INFERENCE
    assigned = [replace(records[i], split_role=roles[i]) for i in range(n)]
    return DatasetManifest(assigned, scheme, seed)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = [f"{_HEADER_PREFIX} scheme={manifest.labeling_scheme} seed={manifest.seed}"]
    for r in manifest.records:
        lines.append(
            "\t".join(
                [
                    r.case_id,
                    r.image_path,
                    r.mask_path or "",
                    r.class_label or "",
                    r.split_role,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path):
    """Parse a manifest file.

    Returns (manifest, warnings). Referenced files that do not exist are
    reported as warnings, one per dangling path; duplicate ids are fatal.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise ManifestError(f"{path}: missing manifest header line")
    header = dict(
        part.split("=", 1) for part in lines[0][len(_HEADER_PREFIX):].split() if "=" in part
    )
    scheme = header.get("scheme")
    try:
        seed = int(header.get("seed", "0"))
    except ValueError as exc:
        raise ManifestError(f"{path}: bad seed in header") from exc

    records = []
    warnings = []
    base = path.parent
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields")
        case_id, image_path, mask_path, class_label, split_role = fields
        records.append(
            CaseRecord(
                case_id=case_id,
                image_path=image_path,
                mask_path=mask_path or None,
                class_label=class_label or None,
                split_role=split_role,
            )
        )
        for kind, p in (("image", image_path), ("mask", mask_path)):
            if p and not (base / p if not Path(p).is_absolute() else Path(p)).exists():
                warnings.append(f"case {case_id}: {kind} path does not exist: {p}")

    return DatasetManifest(records, scheme, seed), warnings


def resolve_path(manifest_path, record_path: str) -> Path:
    """Record paths are relative to the manifest file unless absolute."""
    p = Path(record_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p

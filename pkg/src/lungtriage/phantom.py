"""Synthetic CT-like phantoms with known lung/lesion geometry.

Phantoms stand in for clinical scans at desk scale: two ellipsoid lungs
inside a soft-tissue body, class-conditional lesions (patchy multi-blob
texture for COVID, smooth diffuse domes for Pneumonia, none for Normal),
plus Gaussian noise. Intensities are already normalized to [0, 1].
Everything is a pure function of the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import PhantomError
from .labels import CLASS_LABELS, SCHEME_SEG4
from .manifest import CaseRecord, DatasetManifest
from .volume import SegmentationMask, Volume3D, save_mask, save_volume

AIR = 0.03
BODY = 0.68
LUNG = 0.15

# Intensity-separation invariant (mean lesion - mean lung >= offset/2)
# holds for noise below this level.
NOISE_SIGMA_MAX = 0.05

_MAX_PLACEMENT_TRIES = 200


@dataclass
class PhantomSpec:
    """Geometry and appearance parameters for one phantom."""

    class_label: str = "Normal"
    shape: tuple = (64, 64, 64)
    lung_centers: tuple | None = None  # ((x,y,z), (x,y,z)) voxel coords
    lung_radii: tuple | None = None    # ((rx,ry,rz), (rx,ry,rz))
    lesion_count: tuple = (1, 3)
    lesion_radius: tuple | None = None  # None -> scaled to lung size
    lesion_intensity: float = 0.35
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.class_label not in CLASS_LABELS:
            raise PhantomError(f"unknown class label {self.class_label!r}")
        if min(self.shape) < 8:
            raise PhantomError(f"grid too small: {self.shape}")
        if self.lesion_count[0] < 0 or self.lesion_count[0] > self.lesion_count[1]:
            raise PhantomError(f"bad lesion_count range {self.lesion_count}")
        if self.lung_centers is None:
            nx, ny, nz = self.shape
            self.lung_centers = (
                (0.32 * nx, 0.50 * ny, 0.50 * nz),
                (0.68 * nx, 0.50 * ny, 0.50 * nz),
            )
        if self.lung_radii is None:
            nx, ny, nz = self.shape
            radii = (0.16 * nx, 0.26 * ny, 0.33 * nz)
            self.lung_radii = (radii, radii)
        if self.lesion_radius is None:
            smallest = min(min(r) for r in self.lung_radii)
            self.lesion_radius = (0.2 * smallest, 0.4 * smallest)
        if self.lesion_radius[0] <= 0 or self.lesion_radius[0] > self.lesion_radius[1]:
            raise PhantomError(f"bad lesion_radius range {self.lesion_radius}")


def _ellipsoid_mask(shape, center, radii, coords) -> np.ndarray:
    d = sum(((coords[a] - center[a]) / radii[a]) ** 2 for a in range(3))
    return d <= 1.0


def _check_lungs_placeable(spec: PhantomSpec):
    for center, radii in zip(spec.lung_centers, spec.lung_radii):
        for a in range(3):
            if radii[a] <= 0:
                raise PhantomError(f"non-positive lung radius {radii}")
            if center[a] - radii[a] < 0 or center[a] + radii[a] > spec.shape[a] - 1:
                raise PhantomError(
                    f"lungs not placeable within shape {spec.shape}: "
                    f"ellipsoid at {center} with radii {radii} leaves the grid"
                )


def _sample_lesion_centers(spec: PhantomSpec, rng) -> list:
    """Lesion spheres fully inside a lung, pairwise disjoint."""
    count = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
    placed = []
    for _ in range(count):
        radius = float(rng.uniform(*spec.lesion_radius))
        for _ in range(_MAX_PLACEMENT_TRIES):
            lung = int(rng.integers(0, 2))
            center = np.asarray(spec.lung_centers[lung], dtype=np.float64)
            radii = np.asarray(spec.lung_radii[lung], dtype=np.float64)
            inner = radii - radius
            if np.any(inner <= 0):
                continue
            u = rng.uniform(-1.0, 1.0, size=3)
            if np.sum(u * u) > 1.0:
                continue
            candidate = center + u * inner
            if all(np.linalg.norm(candidate - c) > radius + r + 1.0 for c, r in placed):
                placed.append((candidate, radius))
                break
        else:
            raise PhantomError(
                f"could not place lesion of radius {radius:.1f} inside lungs "
                f"(shape {spec.shape}, radii {spec.lung_radii})"
            )
    return placed


def generate_phantom(spec: PhantomSpec):
    """Build one phantom.

    Returns (Volume3D, SegmentationMask with 4 labels, class_label). Mask
    ids: 0 background, 1 left lung, 2 right lung, 3 lesion; lesion voxels
    are always inside a lung. A binary mask is mask.to_seg2().
    """
    _check_lungs_placeable(spec)
    rng = np.random.default_rng(spec.seed)
    nx, ny, nz = spec.shape
    coords = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")

    body_center = ((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0)
    body_radii = (0.47 * nx, 0.47 * ny, 0.49 * nz)
    body = _ellipsoid_mask(spec.shape, body_center, body_radii, coords)

    left = _ellipsoid_mask(spec.shape, spec.lung_centers[0], spec.lung_radii[0], coords)
    right = _ellipsoid_mask(spec.shape, spec.lung_centers[1], spec.lung_radii[1], coords)
    right &= ~left  # defensive: keep lung labels disjoint

    volume = np.full(spec.shape, AIR, dtype=np.float32)
    volume[body] = BODY
    volume[left | right] = LUNG

    labels = np.zeros(spec.shape, dtype=np.uint8)
    labels[left] = 1
    labels[right] = 2

    if spec.class_label != "Normal":
        lesions = _sample_lesion_centers(spec, rng)
        lungs = left | right
        if spec.class_label == "COVID":
            # Patchy ground-glass-like texture from smoothed noise.
            patch = ndimage.gaussian_filter(rng.random(spec.shape), sigma=1.2)
            lo, hi = patch.min(), patch.max()
            patch = (patch - lo) / max(hi - lo, 1e-9)
        for center, radius in lesions:
            dist = np.sqrt(sum((coords[a] - center[a]) ** 2 for a in range(3)))
            sphere = (dist <= radius) & lungs
            if spec.class_label == "COVID":
                factor = 0.6 + 1.0 * patch[sphere]
            else:
                factor = 1.0 - 0.5 * (dist[sphere] / radius) ** 2
            volume[sphere] = LUNG + spec.lesion_intensity * factor
            labels[sphere] = 3

    if spec.noise_sigma > 0:
        volume = volume + rng.normal(0.0, spec.noise_sigma, spec.shape).astype(np.float32)
    volume = np.clip(volume, 0.0, 1.0).astype(np.float32)

    return (
        Volume3D(volume),
        SegmentationMask(labels, SCHEME_SEG4),
        spec.class_label,
    )


def write_phantom_dataset(out_dir, cases_per_class: int, shape=(64, 64, 64),
                          seed: int = 0, scheme: str = SCHEME_SEG4) -> DatasetManifest:
    """Emit a labeled phantom set as NIfTI files plus a manifest.

    Cases interleave classes (COVID, Pneumonia, Normal, ...) with one seed
    per case derived from the base seed. All records start in the train
    role; run a split afterwards for a real partition.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    idx = 0
    for i in range(cases_per_class):
        for cls in CLASS_LABELS:
            case_id = f"phantom-{idx:03d}-{cls.lower()}"
            spec = PhantomSpec(class_label=cls, shape=shape, seed=seed + idx)
            vol, mask, _ = generate_phantom(spec)
            image_path = f"{case_id}.nii.gz"
            save_volume(vol, out_dir / image_path)
            mask_path = None
            if scheme != "classification3":
                mask_path = f"{case_id}_mask.nii.gz"
                if scheme == "seg2":
                    mask = mask.to_seg2()
                save_mask(mask, out_dir / mask_path, spacing=vol.spacing)
            records.append(
                CaseRecord(case_id=case_id, image_path=image_path,
                           mask_path=mask_path, class_label=cls)
            )
            idx += 1
    return DatasetManifest(records, scheme, seed)

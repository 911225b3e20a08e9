"""Core image containers and NIfTI-backed load/save.

Volumes live in memory as float32 arrays indexed ``voxels[ix, iy, iz]``;
on disk the serialization is x-fastest (NIfTI order). Segmentation masks
keep their integer labels exactly, with an uint8 on-disk width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nifti
from .errors import NonVolumePayloadError
from .labels import SEG_SCHEME_LABELS

_ORTHO_TOL = 1e-6


@dataclass
class Volume3D:
    """A 3D scalar grid with physical spacing, origin and orientation."""

    voxels: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(np.asarray(self.voxels, dtype=np.float32))
        # Geometry is quantized to float32 (the file format's precision)
        # so save/load round-trips are exact.
        self.spacing = np.asarray(self.spacing, dtype=np.float32).astype(np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float32).astype(np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float32).astype(np.float64)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise ValueError(f"voxels must be a non-empty 3D array, got {self.voxels.shape}")
        if self.spacing.shape != (3,) or np.any(self.spacing <= 0):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError("voxels contain non-finite values")
        gram = self.orientation.T @ self.orientation
        if self.orientation.shape != (3, 3) or not np.allclose(gram, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("orientation must have orthonormal columns")

    @property
    def shape(self) -> tuple:
        return self.voxels.shape

    def with_voxels(self, voxels: np.ndarray) -> "Volume3D":
        """Same grid geometry, different samples."""
        return Volume3D(voxels, self.spacing.copy(), self.origin.copy(), self.orientation.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.voxels.shape == other.voxels.shape
            and np.array_equal(self.voxels, other.voxels)
            and np.array_equal(self.spacing, other.spacing)
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.orientation, other.orientation)
        )


@dataclass
class SliceImage2D:
    """A 2D image, single- or 3-channel."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim == 2:
            pass
        elif self.pixels.ndim == 3 and self.pixels.shape[2] in (1, 3):
            if self.pixels.shape[2] == 1:
                self.pixels = self.pixels[:, :, 0]
        else:
            raise ValueError(f"expected HxW or HxWx{{1,3}} pixels, got {self.pixels.shape}")
        if min(self.pixels.shape[:2]) < 1:
            raise ValueError("degenerate (0-area) slice")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixels contain non-finite values")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]


@dataclass
class SegmentationMask:
    """Per-voxel label ids under a named scheme (seg2 or seg4)."""

    labels: np.ndarray
    scheme: str

    def __post_init__(self):
        if self.scheme not in SEG_SCHEME_LABELS:
            raise ValueError(f"unknown segmentation scheme {self.scheme!r}")
        self.labels = np.ascontiguousarray(np.asarray(self.labels))
        if not np.issubdtype(self.labels.dtype, np.integer):
            if not np.array_equal(self.labels, np.round(self.labels)):
                raise ValueError("mask labels must be integers")
            self.labels = self.labels.astype(np.int64)
        if self.labels.ndim != 3:
            raise ValueError(f"mask labels must be 3D, got shape {self.labels.shape}")
        valid = set(SEG_SCHEME_LABELS[self.scheme])
        present = set(np.unique(self.labels).tolist())
        if not present <= valid:
            raise ValueError(f"mask contains ids {sorted(present - valid)} outside scheme {self.scheme}")

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def label_ids(self) -> dict:
        return dict(SEG_SCHEME_LABELS[self.scheme])

    def to_seg2(self) -> "SegmentationMask":
        """Collapse a seg4 mask to the binary lesion scheme."""
        if self.scheme == "seg2":
            return SegmentationMask(self.labels.copy(), "seg2")
        return SegmentationMask((self.labels == 3).astype(np.uint8), "seg2")


def load_volume(path) -> Volume3D:
    """Load a NIfTI-1 volume (plain or gzipped).

    Distinct failures: FileNotFoundError for a missing file,
    MalformedHeaderError for an unparseable header, NonVolumePayloadError
    for files whose payload is not a 3D grid.
    """
    voxels, spacing, origin, orientation = nifti.read_nifti(path)
    return Volume3D(voxels.astype(np.float32), spacing, origin, orientation)


def save_volume(volume: Volume3D, path) -> None:
    """Write a volume as single-file NIfTI-1 (float32 on disk, lossless)."""
    path = Path(path)
    parent = path.parent
    if not parent.is_dir():
        raise FileNotFoundError(f"parent directory does not exist: {parent}")
    nifti.write_nifti(path, volume.voxels, volume.spacing, volume.origin,
                      volume.orientation, dtype=np.float32)


def load_mask(path, scheme: str, reference: Volume3D | None = None) -> SegmentationMask:
    """Load a label volume as a SegmentationMask, checking the label set.

    When a reference volume is given, the grids must match shape.
    """
    voxels, _, _, _ = nifti.read_nifti(path)
    labels = np.rint(voxels).astype(np.int64)
    mask = SegmentationMask(labels, scheme)
    if reference is not None and mask.shape != reference.shape:
        raise NonVolumePayloadError(
            f"{path}: mask shape {mask.shape} does not match volume {reference.shape}"
        )
    return mask


def save_mask(mask: SegmentationMask, path, spacing=(1.0, 1.0, 1.0),
              origin=(0.0, 0.0, 0.0), orientation=None) -> None:
    """Write a mask as uint8 NIfTI-1, preserving label ids exactly."""
    orientation = np.eye(3) if orientation is None else orientation
    nifti.write_nifti(path, mask.labels.astype(np.uint8), spacing, origin,
                      orientation, dtype=np.uint8)

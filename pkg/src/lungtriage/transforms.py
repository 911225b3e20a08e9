"""Preprocessing and seeded augmentation.

Position transforms (scale, rotation, affine jitter, translation, flips,
crop, pad) are applied identically to the image and its mask: linear
interpolation for intensities, nearest-neighbor for labels. Color
transforms (grayscale collapse, contrast) touch the image only.
Augmentation applies to the roles named in the policy (train and
validation by default); held-out data passes through bit-identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .labels import ROLE_TRAIN, ROLE_VALIDATION, canonical_role
from .volume import SegmentationMask, SliceImage2D, Volume3D

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass
class IntensityWindow:
    """Clamp-and-rescale window in Hounsfield units."""

    hu_min: float = -1000.0
    hu_max: float = 400.0

    def __post_init__(self):
        if not self.hu_min < self.hu_max:
            raise ValueError(f"window requires hu_min < hu_max, got [{self.hu_min}, {self.hu_max}]")


DEFAULT_WINDOW = IntensityWindow()


def normalize_intensity(volume: Volume3D, window: IntensityWindow = DEFAULT_WINDOW) -> Volume3D:
    """Clamp to the window then map linearly onto [0, 1]."""
    v = np.clip(volume.voxels, window.hu_min, window.hu_max)
    v = (v - window.hu_min) / (window.hu_max - window.hu_min)
    return volume.with_voxels(v.astype(np.float32))


@dataclass
class AugmentationPolicy:
    """Which transforms run, with what parameter ranges.

    A range of None disables that transform; a degenerate range (lo == hi)
    forces the parameter. apply_roles controls which split roles are
    augmented and may not include the held-out role.
    """

    scale_range: tuple | None = None
    crop_size: tuple | None = None
    flip_axes: tuple = ()
    pad_to: tuple | None = None
    rotation_range_deg: tuple | None = None
    translation_range_vox: tuple | None = None
    affine_jitter: float | None = None
    grayscale: bool = False
    contrast_range: tuple | None = None
    apply_roles: frozenset = field(default_factory=lambda: frozenset({ROLE_TRAIN, ROLE_VALIDATION}))
    fill_value: float = 0.0

    def __post_init__(self):
        for name in ("scale_range", "rotation_range_deg", "translation_range_vox", "contrast_range"):
            rng = getattr(self, name)
            if rng is not None and rng[0] > rng[1]:
                raise ValueError(f"{name} lo > hi: {rng}")
        if self.contrast_range is not None and self.contrast_range[0] <= 0:
            raise ValueError("contrast lo must be > 0")
        if self.affine_jitter is not None and self.affine_jitter < 0:
            raise ValueError("affine_jitter must be >= 0")
        bad = {a for a in self.flip_axes if a not in AXIS_INDEX}
        if bad:
            raise ValueError(f"unknown flip axes {sorted(bad)}")
        self.apply_roles = frozenset(canonical_role(r) for r in self.apply_roles)
        allowed = {ROLE_TRAIN, ROLE_VALIDATION}
        if not self.apply_roles <= allowed:
            raise ValueError("augmentation may only target train/validation roles")

    def to_dict(self) -> dict:
        return {
            "scale_range": self.scale_range,
            "crop_size": self.crop_size,
            "flip_axes": list(self.flip_axes),
            "pad_to": self.pad_to,
            "rotation_range_deg": self.rotation_range_deg,
            "translation_range_vox": self.translation_range_vox,
            "affine_jitter": self.affine_jitter,
            "grayscale": self.grayscale,
            "contrast_range": self.contrast_range,
            "apply_roles": sorted(self.apply_roles),
            "fill_value": self.fill_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        d = dict(d)
        for key in ("scale_range", "crop_size", "pad_to", "rotation_range_deg",
                    "translation_range_vox", "contrast_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        d["flip_axes"] = tuple(d.get("flip_axes", ()))
        d["apply_roles"] = frozenset(d.get("apply_roles", (ROLE_TRAIN, ROLE_VALIDATION)))
        return cls(**d)


def sample_seed(run_seed: int, case_id: str, epoch: int) -> int:
    """Per-sample seed, stable across platforms and worker counts."""
    digest = hashlib.sha256(f"{run_seed}:{case_id}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _unwrap(obj):
    if isinstance(obj, Volume3D):
        return obj.voxels, "volume", obj
    if isinstance(obj, SliceImage2D):
        return obj.pixels, "slice", obj
    return np.asarray(obj), "array", None


def _rewrap(arr, kind, original):
    if kind == "volume":
        return Volume3D(arr, original.spacing.copy(), original.origin.copy(),
                        original.orientation.copy())
    if kind == "slice":
        return SliceImage2D(arr)
    return arr


def _spatial_ndim(arr: np.ndarray) -> int:
    # HxWx3 slices are spatially 2D; everything else matches its rank.
    if arr.ndim == 3 and arr.shape[2] == 3:
        return 2
    return arr.ndim


def _rotation_matrix(ndim: int, theta_rad: float) -> np.ndarray:
    # In-plane (x, y) rotation; volumes rotate about the z axis.
    c, s = np.cos(theta_rad), np.sin(theta_rad)
    rot = np.eye(ndim)
    rot[0, 0], rot[0, 1] = c, -s
    rot[1, 0], rot[1, 1] = s, c
    return rot


def _apply_affine(arr, matrix, offset, order, cval):
    if arr.ndim == 3 and arr.shape[2] == 3 and matrix.shape[0] == 2:
        out = np.stack(
            [ndimage.affine_transform(arr[..., ch], matrix, offset=offset, order=order,
                                      cval=cval, mode="constant") for ch in range(3)],
            axis=-1,
        )
        return out
    return ndimage.affine_transform(arr, matrix, offset=offset, order=order,
                                    cval=cval, mode="constant")


def _pad_to(arr, target, cval, spatial_ndim):
    pads = []
    for axis in range(spatial_ndim):
        missing = max(0, target[axis] - arr.shape[axis])
        lo = missing // 2
        pads.append((lo, missing - lo))
    while len(pads) < arr.ndim:
        pads.append((0, 0))
    return np.pad(arr, pads, mode="constant", constant_values=cval)


def augment(sample, policy: AugmentationPolicy, role: str, seed: int):
    """Apply the policy's transforms for the given role and seed.

    sample is (image_or_volume, mask_or_None). Roles outside
    policy.apply_roles (in particular the held-out role) return the input
    unchanged. All random draws come from one seeded generator in a fixed
    order, so the output is a pure function of (sample, policy, role, seed).
    """
    image_in, mask_in = sample
    role = canonical_role(role)
    if role not in policy.apply_roles:
        return image_in, mask_in

    img, img_kind, img_orig = _unwrap(image_in)
    img = img.astype(np.float32, copy=True)
    mask = None
    mask_kind = mask_scheme = None
    if mask_in is not None:
        if isinstance(mask_in, SegmentationMask):
            mask, mask_kind, mask_scheme = mask_in.labels.copy(), "mask", mask_in.scheme
        else:
            mask, mask_kind = np.asarray(mask_in).copy(), "array"

    ndim = _spatial_ndim(img)
    rng = np.random.default_rng(seed)

    # Parameter draws happen in a fixed order regardless of later use.
    scale = rng.uniform(*policy.scale_range) if policy.scale_range is not None else None
    theta = (np.deg2rad(rng.uniform(*policy.rotation_range_deg))
             if policy.rotation_range_deg is not None else None)
    jitter = (np.eye(ndim) + rng.uniform(-policy.affine_jitter, policy.affine_jitter, (ndim, ndim))
              if policy.affine_jitter is not None else None)
    translation = (rng.uniform(*policy.translation_range_vox, size=ndim)
                   if policy.translation_range_vox is not None else None)
    flips = {a: bool(rng.integers(0, 2)) for a in sorted(policy.flip_axes)}
    crop_corner = None
    if policy.crop_size is not None:
        if any(policy.crop_size[a] > img.shape[a] for a in range(ndim)):
            raise ValueError(f"crop {policy.crop_size} larger than input {img.shape[:ndim]}")
        crop_corner = tuple(
            int(rng.integers(0, img.shape[a] - policy.crop_size[a] + 1)) for a in range(ndim)
        )
    contrast = rng.uniform(*policy.contrast_range) if policy.contrast_range is not None else None

    # Compose scale -> jitter -> rotation -> translation about the center.
    forward = np.eye(ndim)
    if scale is not None:
        forward = forward * scale
    if jitter is not None:
        forward = jitter @ forward
    if theta is not None:
        forward = _rotation_matrix(ndim, theta) @ forward
    if scale is not None or jitter is not None or theta is not None or translation is not None:
        center = (np.array(img.shape[:ndim], dtype=np.float64) - 1.0) / 2.0
        shift = np.zeros(ndim) if translation is None else np.asarray(translation, dtype=np.float64)
        inv = np.linalg.inv(forward)
        offset = center - inv @ (center + shift)
        img = _apply_affine(img, inv, offset, order=1, cval=policy.fill_value)
        if mask is not None:
            mask = _apply_affine(mask, inv, offset, order=0, cval=0)

    for axis_name, do_flip in flips.items():
        axis = AXIS_INDEX[axis_name]
        if axis >= ndim:
            raise ValueError(f"flip axis {axis_name!r} out of range for {ndim}D data")
        if do_flip:
            img = np.flip(img, axis=axis)
            if mask is not None:
                mask = np.flip(mask, axis=axis)

    if crop_corner is not None:
        sel = tuple(slice(c, c + policy.crop_size[a]) for a, c in enumerate(crop_corner))
        img = img[sel]
        if mask is not None:
            mask = mask[sel]

    if policy.pad_to is not None:
        img = _pad_to(img, policy.pad_to, policy.fill_value, ndim)
        if mask is not None:
            mask = _pad_to(mask, policy.pad_to, 0, ndim)

    if policy.grayscale and img.ndim == 3 and img.shape[2] == 3:
        img = np.repeat(img.mean(axis=2, keepdims=True), 3, axis=2)

    if contrast is not None:
        mean = float(img.mean())
        img = np.clip(mean + (img - mean) * contrast, 0.0, 1.0)

    img = np.ascontiguousarray(img.astype(np.float32))
    image_out = _rewrap(img, img_kind, img_orig)
    if mask is None:
        mask_out = None
    elif mask_kind == "mask":
        mask_out = SegmentationMask(np.ascontiguousarray(mask), mask_scheme)
    else:
        mask_out = np.ascontiguousarray(mask)
    return image_out, mask_out


def extract_slices(volume: Volume3D, axis: str, indices=None) -> list:
    """Planes of the volume along x, y or z as 2D slices."""
    if axis not in AXIS_INDEX:
        raise ValueError(f"axis must be one of {tuple(AXIS_INDEX)}, got {axis!r}")
    ax = AXIS_INDEX[axis]
    size = volume.shape[ax]
    if indices is None:
        indices = range(size)
    slices = []
    for k in indices:
        if not 0 <= k < size:
            raise IndexError(f"slice index {k} out of range for axis {axis} (size {size})")
        plane = np.take(volume.voxels, k, axis=ax)
        slices.append(SliceImage2D(np.ascontiguousarray(plane)))
    return slices


def _resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center bilinear resize; exact identity at equal sizes."""
    h, w = pixels.shape[:2]
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    coords = np.stack([g.ravel() for g in grid])
    out = ndimage.map_coordinates(pixels.astype(np.float64), coords, order=1, mode="nearest")
    return out.reshape(out_h, out_w)


def prepare_classifier_input(slice_image: SliceImage2D, size: int = 224) -> SliceImage2D:
    """Resize to size x size, replicate to 3 channels, clip into [0, 1].

    Expects intensities already normalized; out-of-range values are
    clamped rather than rescaled so constants survive unchanged.
    """
    px = slice_image.pixels
    if px.ndim == 2:
        resized = _resize_bilinear(px, size, size)
        out = np.repeat(resized[:, :, np.newaxis], 3, axis=2)
    else:
        out = np.stack([_resize_bilinear(px[..., c], size, size) for c in range(3)], axis=-1)
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return SliceImage2D(out)

"""Slice rendering: grayscale planes with per-label color tinting.

PNG encoding is done in-process (fixed zlib level, no ancillary chunks)
so identical inputs always produce identical bytes.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .transforms import AXIS_INDEX
from .volume import SegmentationMask, Volume3D

OVERLAY_ALPHA = 0.4

LABEL_COLORS = {
    1: (80, 200, 80),    # left lung / seg2 lesion tint below overrides
    2: (80, 110, 230),   # right lung
    3: (230, 60, 60),    # lesion
}
SEG2_COLORS = {1: (230, 60, 60)}

_ZLIB_LEVEL = 6


def slice_plane(volume_or_labels: np.ndarray, axis: str, index: int) -> np.ndarray:
    if axis not in AXIS_INDEX:
        raise ValueError(f"axis must be one of {tuple(AXIS_INDEX)}, got {axis!r}")
    ax = AXIS_INDEX[axis]
    size = volume_or_labels.shape[ax]
    if not 0 <= index < size:
        raise IndexError(f"slice index {index} out of range for axis {axis} (size {size})")
    return np.take(volume_or_labels, index, axis=ax)


def render_overlay(volume: Volume3D, mask: SegmentationMask | None, axis: str,
                   index: int, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """RGB uint8 rendering of one plane; labeled pixels are alpha-tinted."""
    plane = np.clip(slice_plane(volume.voxels, axis, index), 0.0, 1.0)
    gray = np.round(plane * 255.0).astype(np.uint8)
    rgb = np.repeat(gray[:, :, np.newaxis], 3, axis=2).astype(np.float64)
    if mask is not None:
        if mask.shape != volume.shape:
            raise ValueError(f"mask shape {mask.shape} does not match volume {volume.shape}")
        labels = slice_plane(mask.labels, axis, index)
        colors = SEG2_COLORS if mask.scheme == "seg2" else LABEL_COLORS
        for label_id, color in colors.items():
            sel = labels == label_id
            if np.any(sel):
                rgb[sel] = (1.0 - alpha) * rgb[sel] + alpha * np.array(color, dtype=np.float64)
    return np.round(rgb).astype(np.uint8)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png(rgb: np.ndarray) -> bytes:
    """Minimal deterministic PNG (8-bit RGB, filter 0, fixed compression)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 uint8, got {rgb.shape}")
    height, width = rgb.shape[:2]
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, _ZLIB_LEVEL))
        + _chunk(b"IEND", b"")
    )


def export_overlay(volume: Volume3D, mask: SegmentationMask | None, axis: str,
                   index: int, path) -> bytes:
    """Write the rendered plane as PNG; returns the bytes written."""
    data = encode_png(render_overlay(volume, mask, axis, index))
    with open(path, "wb") as fh:
        fh.write(data)
    return data

"""Minimal NIfTI-1 reader/writer.

Supports single-file .nii volumes, optionally gzip-compressed (detected by
magic bytes, not extension). Scope is intentionally narrow: 3D scalar
volumes with the common datatypes. Written files always carry an sform
affine (sform_code=1) and the data serialized x-fastest, the standard
NIfTI layout.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import MalformedHeaderError, NonVolumePayloadError

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype code -> numpy dtype (without byte order)
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

_GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _quaternion_to_matrix(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a_sq, 0.0))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c],
            [2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b],
            [2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - c * c - b * b],
        ]
    )
    if qfac < 0:
        rot[:, 2] *= -1.0
    return rot


def read_nifti(path):
    """Read a NIfTI-1 file into (voxels, spacing, origin, orientation).

    voxels is a C-contiguous float-preserving array indexed [ix, iy, iz]
    (x is the fastest-varying axis on disk, per the NIfTI standard).
    Raises FileNotFoundError, MalformedHeaderError or NonVolumePayloadError.
    """
    path = Path(path)
    return parse_nifti_bytes(_read_bytes(path), name=str(path))


def parse_nifti_bytes(raw: bytes, name: str = "<bytes>"):
    """Parse an in-memory NIfTI-1 blob (gzip allowed); see read_nifti."""
    if raw[:2] == _GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except Exception as exc:
            raise MalformedHeaderError(f"{name}: bad gzip stream: {exc}") from exc
    path = name
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: file shorter than a NIfTI-1 header")

    # Endianness is detected from sizeof_hdr.
    for endian in ("<", ">"):
        (sizeof_hdr,) = struct.unpack(endian + "i", raw[0:4])
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise MalformedHeaderError(f"{path}: bad sizeof_hdr (not a NIfTI-1 file)")

    magic = raw[344:348]
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if magic == MAGIC_PAIR:
        raise MalformedHeaderError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    dim = struct.unpack(endian + "8h", raw[40:56])
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise MalformedHeaderError(f"{path}: invalid dim[0]={ndim}")
    if ndim < 3:
        raise NonVolumePayloadError(f"{path}: non-3D payload (dim[0]={ndim})")
    extra = [d for d in dim[4 : ndim + 1]]
    if any(d > 1 for d in extra):
        raise NonVolumePayloadError(
            f"{path}: non-3D payload (trailing dims {tuple(extra)} exceed 1)"
        )
    shape = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in shape):
        raise MalformedHeaderError(f"{path}: non-positive spatial dims {shape}")

    (datatype,) = struct.unpack(endian + "h", raw[70:72])
    if datatype not in _DTYPES:
        raise MalformedHeaderError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

    pixdim = struct.unpack(endian + "8f", raw[76:108])
    (vox_offset,) = struct.unpack(endian + "f", raw[108:112])
    scl_slope, scl_inter = struct.unpack(endian + "2f", raw[112:120])
    qform_code, sform_code = struct.unpack(endian + "2h", raw[252:256])

    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: vox_offset {vox_offset} inside header")
    count = int(np.prod(shape))
    payload = raw[offset : offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise MalformedHeaderError(f"{path}: truncated voxel payload")

    flat = np.frombuffer(payload, dtype=dtype)
    # Disk layout is x-fastest; reshape in Fortran order so voxels[x, y, z].
    voxels = np.asfortranarray(flat.reshape(shape, order="F"))
    voxels = np.ascontiguousarray(voxels.astype(voxels.dtype.newbyteorder("=")))
    if scl_slope not in (0.0, 1.0) and np.isfinite(scl_slope):
        voxels = voxels * scl_slope + scl_inter
    elif scl_slope == 1.0 and scl_inter != 0.0 and np.isfinite(scl_inter):
        voxels = voxels + scl_inter

    if sform_code > 0:
        srow = np.array(
            [
                struct.unpack(endian + "4f", raw[280:296]),
                struct.unpack(endian + "4f", raw[296:312]),
                struct.unpack(endian + "4f", raw[312:328]),
            ]
        )
        rotation = srow[:, :3]
        norms = np.linalg.norm(rotation, axis=0)
        if np.any(norms <= 0):
            raise MalformedHeaderError(f"{path}: degenerate sform columns")
        # pixdim is the authoritative voxel size when consistent with the
        # sform columns (it keeps axis-aligned round-trips exact).
        pix = np.abs(np.array(pixdim[1:4], dtype=np.float64))
        if np.all(pix > 0) and np.all(np.abs(norms - pix) <= 1e-3 * pix):
            spacing = pix
        else:
            spacing = norms
        orientation = rotation / spacing
        origin = srow[:, 3]
    elif qform_code > 0:
        b, c, d = struct.unpack(endian + "3f", raw[256:268])
        qfac = pixdim[0] if pixdim[0] in (-1.0, 1.0) else 1.0
        orientation = _quaternion_to_matrix(b, c, d, qfac)
        spacing = np.abs(np.array(pixdim[1:4], dtype=np.float64))
        origin = np.array(struct.unpack(endian + "3f", raw[268:280]), dtype=np.float64)
    else:
        spacing = np.abs(np.array(pixdim[1:4], dtype=np.float64))
        orientation = np.eye(3)
        origin = np.zeros(3)
    spacing = np.where(spacing > 0, spacing, 1.0)

    return voxels, spacing, origin, orientation


def write_nifti(path, voxels: np.ndarray, spacing, origin, orientation, dtype=None):
    """Write a 3D array as a single-file NIfTI-1 volume.

    Gzip compression is applied when the filename ends in .gz. dtype
    defaults to the array's own dtype and must be one of the supported
    NIfTI scalar types.
    """
    path = Path(path)
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {voxels.shape}")
    dtype = np.dtype(dtype if dtype is not None else voxels.dtype)
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported on-disk dtype {dtype}")
    data = np.asfortranarray(voxels.astype(dtype, copy=False))

    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    orientation = np.asarray(orientation, dtype=np.float64)
    srow = orientation * spacing[np.newaxis, :]

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    header[39] = ord("r")  # regular
    struct.pack_into("<8h", header, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _DTYPE_CODES[dtype])
    struct.pack_into("<h", header, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(HEADER_SIZE + 4))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope / scl_inter
    struct.pack_into("<2h", header, 252, 0, 1)  # qform_code=0, sform_code=1
    struct.pack_into("<4f", header, 280, *srow[0], origin[0])
    struct.pack_into("<4f", header, 296, *srow[1], origin[1])
    struct.pack_into("<4f", header, 312, *srow[2], origin[2])
    header[344:348] = MAGIC_SINGLE

    blob = bytes(header) + b"\x00\x00\x00\x00" + data.tobytes(order="F")
    if path.suffix == ".gz":
        # mtime pinned so identical volumes produce identical files
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)

"""
NIfTI-1 volume codec and co-registration checks

Only single-file NIfTI-1 ('n+1', optionally gzip-compressed) is read and
written. Header fields are decoded and encoded through nibabel's header
class; extent checks, datatype policy and geometry mapping live here so a
malformed or truncated stream always raises instead of yielding a partial
volume.
"""
import gzip
import logging
import zlib
from pathlib import Path
from typing import Optional, Union

import nibabel as nib
import numpy as np

from src.core.errors import (
    GeometryError,
    NiftiCapacityError,
    NiftiFormatError,
    NiftiTruncationError,
    NiftiUnsupportedError,
    RegistrationError,
)
from src.core.volume import AXES, GridGeometry, PairedCase, Volume, VolumeKind

LOGGER = logging.getLogger(__name__)

HEADER_SIZE = 348
MIN_VOX_OFFSET = 352
MAX_DIM = np.iinfo(np.int16).max
NIFTI_INTENT_LABEL = 1002
GZIP_MAGIC = b'\x1f\x8b'
GEOMETRY_TOLERANCE_MM = 1e-3

# NIfTI datatype code -> numpy dtype
SUPPORTED_DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_STORAGE_INTEGERS = (np.uint8, np.int16, np.int32)


def _detect_endianness(raw: bytes) -> str:
    for endian in ('<', '>'):
        if int(np.frombuffer(raw, dtype=f'{endian}i4', count=1)[0]) == HEADER_SIZE:
            return endian
    raise NiftiFormatError(f'header size field is not {HEADER_SIZE} in either byte order')


def _maybe_gunzip(raw: bytes) -> bytes:
    if not raw.startswith(GZIP_MAGIC):
        return raw
    try:
        return gzip.decompress(raw)
    except EOFError as e:
        raise NiftiTruncationError(f'gzip stream ended early: {e}') from e
    except (OSError, zlib.error) as e:
        raise NiftiFormatError(f'corrupt gzip stream: {e}') from e


def _geometry_from_header(hdr: nib.Nifti1Header, ndim: int, dims) -> GridGeometry:
    pixdim = [float(p) for p in hdr['pixdim'][1:4]]
    spacing = []
    for axis in range(3):
        if axis >= ndim:
            spacing.append(pixdim[axis] if pixdim[axis] > 0 else 1.0)
        elif pixdim[axis] > 0:
            spacing.append(pixdim[axis])
        else:
            raise NiftiFormatError(f'non-positive pixdim {pixdim[axis]} on axis {AXES[axis]}')

    if int(hdr['sform_code']) > 0:
        affine = hdr.get_sform(coded=False)
    elif int(hdr['qform_code']) > 0:
        affine = hdr.get_qform(coded=False)
    else:
        affine = None

    try:
        if affine is None:
            return GridGeometry(dims=dims, spacing=tuple(spacing))
        columns = np.asarray(affine[:3, :3], dtype=np.float64)
        orientation = columns / np.linalg.norm(columns, axis=0)
        return GridGeometry(
            dims=dims,
            spacing=tuple(spacing),
            origin=tuple(float(o) for o in affine[:3, 3]),
            orientation=tuple(tuple(row) for row in orientation.tolist()),
        )
    except (GeometryError, FloatingPointError, ValueError) as e:
        raise NiftiFormatError(f'header geometry is invalid: {e}') from e


def parse_nifti(raw: bytes, kind: Optional[VolumeKind] = None) -> Volume:
    """
    Decode a single-file NIfTI-1 byte stream

    Args:
        raw: file contents, plain or gzip-compressed
        kind: force the volume kind; by default the label intent code
            selects LABEL and everything else is INTENSITY

    Returns:
        Volume with geometry from the header and voxels in native byte order
    """
    raw = _maybe_gunzip(bytes(raw))
    if len(raw) < HEADER_SIZE:
        raise NiftiTruncationError(f'stream holds {len(raw)} bytes, header needs {HEADER_SIZE}')

    endian = _detect_endianness(raw)
    hdr = nib.Nifti1Header(binaryblock=raw[:HEADER_SIZE], endianness=endian, check=False)

    magic = np.asarray(hdr['magic']).item().rstrip(b'\x00')
    if magic == b'ni1':
        raise NiftiUnsupportedError('detached header/image pairs (magic ni1) are not supported')
    if magic != b'n+1':
        raise NiftiFormatError(f'bad magic {magic!r}, expected b"n+1"')

    code = int(hdr['datatype'])
    if code not in SUPPORTED_DATATYPES:
        raise NiftiUnsupportedError(f'datatype code {code} is not supported')
    dtype = SUPPORTED_DATATYPES[code].newbyteorder(endian)

    dim = [int(d) for d in hdr['dim']]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f'dim[0] must be in 1..7, got {ndim}')
    shape = dim[1:ndim + 1]
    if any(d < 1 for d in shape):
        raise NiftiFormatError(f'dimensions must be positive, got {shape}')
    if any(d != 1 for d in shape[3:]):
        raise NiftiUnsupportedError(f'only 3D volumes are supported, got shape {shape}')
    dims = tuple((shape + [1, 1, 1])[:3])

    vox_offset = int(float(hdr['vox_offset']))
    if vox_offset < MIN_VOX_OFFSET:
        raise NiftiFormatError(f'vox_offset {vox_offset} is below {MIN_VOX_OFFSET}')

    count = int(np.prod(dims))
    end = vox_offset + count * dtype.itemsize
    if len(raw) < end:
        raise NiftiTruncationError(f'data section needs {end} bytes, stream holds {len(raw)}')

    geometry = _geometry_from_header(hdr, ndim, dims)

    voxels = np.frombuffer(raw, dtype=dtype, count=count, offset=vox_offset)
    voxels = voxels.reshape(dims, order='F').astype(dtype.newbyteorder('='))

    slope = float(hdr['scl_slope'])
    inter = float(hdr['scl_inter'])
    if not np.isfinite(slope) or slope == 0:
        slope, inter = 1.0, 0.0
    if not np.isfinite(inter):
        inter = 0.0
    if (slope, inter) != (1.0, 0.0):
        voxels = voxels.astype(np.float64) * slope + inter

    if kind is None:
        kind = VolumeKind.LABEL if int(hdr['intent_code']) == NIFTI_INTENT_LABEL else VolumeKind.INTENSITY
    return Volume(geometry, kind, voxels)


def _storage_dtype(voxels: np.ndarray) -> np.dtype:
    dtype = voxels.dtype
    if dtype in SUPPORTED_DATATYPES.values():
        return dtype
    if dtype == np.bool_:
        return np.dtype(np.uint8)
    if np.issubdtype(dtype, np.integer):
        lo, hi = (int(voxels.min()), int(voxels.max())) if voxels.size else (0, 0)
        for candidate in _STORAGE_INTEGERS:
            info = np.iinfo(candidate)
            if info.min <= lo and hi <= info.max:
                return np.dtype(candidate)
        raise NiftiUnsupportedError(f'integer range [{lo}, {hi}] does not fit int32')
    if dtype == np.float16:
        return np.dtype(np.float32)
    raise NiftiUnsupportedError(f'voxel dtype {dtype} has no NIfTI-1 counterpart here')


def write_nifti(volume: Volume) -> bytes:
    """
    Encode a volume as an uncompressed single-file NIfTI-1 stream

    Geometry is stored in float32 header fields (pixdim and sform rows);
    voxels keep their dtype when it is one of the supported datatypes.
    """
    for axis, d in zip(AXES, volume.dims):
        if d > MAX_DIM:
            raise NiftiCapacityError(f'dimension {d} on axis {axis} exceeds {MAX_DIM}')

    dtype = _storage_dtype(volume.voxels)
    geometry = volume.geometry
    affine = geometry.affine()

    hdr = nib.Nifti1Header()
    hdr.set_data_dtype(dtype)
    hdr.set_data_shape(geometry.dims)
    orientation = np.asarray(geometry.orientation)
    if np.allclose(orientation.T @ orientation, np.eye(3), atol=1e-6):
        hdr.set_qform(affine, code=1)
    hdr.set_sform(affine, code=1)
    # set_qform rewrites pixdim from the affine, so spacing goes in last
    hdr.set_zooms(geometry.spacing)
    hdr.set_xyzt_units('mm')
    hdr['scl_slope'] = 1.0
    hdr['scl_inter'] = 0.0
    hdr['vox_offset'] = MIN_VOX_OFFSET
    hdr['intent_code'] = NIFTI_INTENT_LABEL if volume.is_label else 0

    data = np.asarray(volume.voxels, dtype=hdr.get_data_dtype()).tobytes(order='F')
    extension_flag = b'\x00' * (MIN_VOX_OFFSET - HEADER_SIZE)
    return hdr.binaryblock + extension_flag + data


def load_volume(path: Union[str, Path], kind: Optional[VolumeKind] = None) -> Volume:
    """Read a .nii or .nii.gz file"""
    path = Path(path)
    volume = parse_nifti(path.read_bytes(), kind=kind)
    LOGGER.debug(f'Loaded {path.name}: dims {volume.dims}, spacing {volume.spacing}, {volume.kind.value}')
    return volume


def save_volume(volume: Volume, path: Union[str, Path]) -> Path:
    """Write a volume; a .gz suffix selects gzip compression with a fixed mtime"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = write_nifti(volume)
    if path.suffix == '.gz':
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)
    LOGGER.debug(f'Wrote {path} ({len(raw)} bytes)')
    return path


def validate_pair(a: Volume, b: Volume, case_id: str) -> PairedCase:
    """
    Check that two volumes share one grid and pair them

    Args:
        a: contrast-enhanced CT
        b: plain CT
        case_id: subject identifier

    Returns:
        PairedCase holding both volumes unchanged
    """
    ga, gb = a.geometry, b.geometry
    for axis, da, db in zip(AXES, ga.dims, gb.dims):
        if da != db:
            raise GeometryError(
                f'{case_id}: dims differ on axis {axis} ({da} vs {db})', axis=axis
            )

    deviating = []
    for axis in range(3):
        deviations = [
            abs(ga.spacing[axis] - gb.spacing[axis]),
            abs(ga.origin[axis] - gb.origin[axis]),
        ]
        deviations += [abs(ga.orientation[row][axis] - gb.orientation[row][axis]) for row in range(3)]
        if max(deviations) > GEOMETRY_TOLERANCE_MM:
            deviating.append(AXES[axis])
    if deviating:
        raise RegistrationError(
            f'{case_id}: geometry deviates by more than {GEOMETRY_TOLERANCE_MM} mm on axes {deviating}',
            axes=deviating,
        )

    return PairedCase(contrast_ct=a, plain_ct=b, case_id=case_id)

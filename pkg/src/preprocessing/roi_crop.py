"""
Head-and-neck region-of-interest cropping

Body mask -> connected components -> largest component -> margin-padded
bounding box covering every axial slice -> crop. A CropRecord keeps the box
so label maps predicted on the crop can be put back on the full grid.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from src.core.errors import BoundsError, EmptyMaskError, ParameterError, RecordMismatchError
from src.core.volume import AXES, Volume, VolumeKind, require_kind

LOGGER = logging.getLogger(__name__)

DEFAULT_THRESHOLD_HU = -500.0
DEFAULT_MARGIN_PX = 15

Index3 = Tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Component ids 1..K ordered by decreasing size, ties by first voxel in x-fastest scan order"""
    labels: Volume
    sizes: Tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with inclusive voxel bounds"""
    lo: Index3
    hi: Index3

    def __post_init__(self):
        object.__setattr__(self, 'lo', tuple(int(v) for v in self.lo))
        object.__setattr__(self, 'hi', tuple(int(v) for v in self.hi))

    @property
    def extents(self) -> Index3:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))

    def check_within(self, dims: Index3) -> None:
        for axis, l, h, d in zip(AXES, self.lo, self.hi, dims):
            if not 0 <= l <= h < d:
                raise BoundsError(f'bbox [{l}, {h}] on axis {axis} does not fit dimension {d}')


@dataclass(frozen=True)
class CropRecord:
    original_dims: Index3
    bbox: BBox
    margin_used: int
    case_id: str = ''
    original_origin: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, 'original_dims', tuple(int(d) for d in self.original_dims))
        self.bbox.check_within(self.original_dims)

    def to_dict(self) -> Dict:
        data = {
            'case_id': self.case_id,
            'original_dims': list(self.original_dims),
            'bbox_lo': list(self.bbox.lo),
            'bbox_hi': list(self.bbox.hi),
            'margin_used': self.margin_used,
        }
        if self.original_origin is not None:
            data['original_origin'] = list(self.original_origin)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'CropRecord':
        try:
            origin = data.get('original_origin')
            return cls(
                original_dims=tuple(data['original_dims']),
                bbox=BBox(tuple(data['bbox_lo']), tuple(data['bbox_hi'])),
                margin_used=int(data['margin_used']),
                case_id=str(data.get('case_id', '')),
                original_origin=tuple(float(o) for o in origin) if origin is not None else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise RecordMismatchError(f'malformed crop record: {e}') from e


def save_record(record: CropRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record.to_dict(), indent=2) + '\n', encoding='utf-8')
    return path


def load_record(path: Union[str, Path]) -> CropRecord:
    return CropRecord.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))


def body_mask_threshold(ct: Volume, threshold: float = DEFAULT_THRESHOLD_HU,
                        air_floor: Optional[float] = None) -> Volume:
    """
    Binary body mask from a HU threshold

    Voxels at or above `threshold` are body; background cavities fully
    enclosed within an axial slice (airways, sinuses) are filled slice by
    slice. On windowed CT air is clamped to the window floor, which may sit
    above the threshold: pass that floor as `air_floor` and voxels at or
    below it count as background.
    """
    require_kind(ct, VolumeKind.INTENSITY, 'body mask input')
    mask = np.asarray(ct.voxels) >= threshold
    if air_floor is not None:
        mask &= np.asarray(ct.voxels) > air_floor
    filled = np.empty_like(mask)
    for k in range(mask.shape[2]):
        filled[:, :, k] = ndimage.binary_fill_holes(mask[:, :, k])
    LOGGER.debug(f'Body mask: {int(mask.sum())} voxels above {threshold:g} HU, {int(filled.sum())} after hole filling')
    return ct.with_voxels(filled.astype(np.uint8), kind=VolumeKind.LABEL)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ParameterError(f'connectivity must be 6 or 26, got {connectivity}')


def label_components(mask: Volume, connectivity: int = 26) -> ComponentLabeling:
    """
    Label connected foreground components

    Args:
        mask: binary label volume (nonzero is foreground)
        connectivity: 6 (faces) or 26 (faces, edges and corners)

    Returns:
        ComponentLabeling with ids ordered by decreasing size
    """
    structure = _structure(connectivity)
    raw, count = ndimage.label(np.asarray(mask.voxels) != 0, structure=structure)

    if count == 0:
        labels = np.zeros(mask.dims, dtype=np.int32)
        return ComponentLabeling(mask.with_voxels(labels, kind=VolumeKind.LABEL), ())

    sizes = np.bincount(raw.ravel(), minlength=count + 1)[1:]
    scan = raw.ravel(order='F')
    ids, first_index = np.unique(scan, return_index=True)
    first = np.empty(count, dtype=np.int64)
    first[ids[ids > 0] - 1] = first_index[ids > 0]

    order = np.lexsort((first, -sizes))
    lut = np.zeros(count + 1, dtype=np.int32)
    lut[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    labels = lut[raw]

    ordered_sizes = tuple(int(s) for s in sizes[order])
    LOGGER.debug(f'{count} components ({connectivity}-connectivity), largest {ordered_sizes[0]} voxels')
    return ComponentLabeling(mask.with_voxels(labels, kind=VolumeKind.LABEL), ordered_sizes)


def largest_component(components: ComponentLabeling) -> Volume:
    if components.count == 0:
        raise EmptyMaskError('no components to choose from')
    labels = components.labels
    return labels.with_voxels((np.asarray(labels.voxels) == 1).astype(np.uint8))


def fit_bbox(mask: Volume, margin: int = DEFAULT_MARGIN_PX, full_z: bool = True) -> BBox:
    """
    Bounding box of the foreground, widened in-plane

    x and y extents grow by `margin` voxels and are clipped to the grid;
    z spans every slice when `full_z`, otherwise the exact foreground extent.
    """
    if margin < 0:
        raise ParameterError(f'margin must be >= 0, got {margin}')
    coords = np.nonzero(np.asarray(mask.voxels))
    if coords[0].size == 0:
        raise EmptyMaskError('cannot fit a bounding box to an empty mask')

    dims = mask.dims
    lo = [int(c.min()) for c in coords]
    hi = [int(c.max()) for c in coords]
    for axis in (0, 1):
        lo[axis] = max(lo[axis] - margin, 0)
        hi[axis] = min(hi[axis] + margin, dims[axis] - 1)
    if full_z:
        lo[2], hi[2] = 0, dims[2] - 1
    return BBox(tuple(lo), tuple(hi))


def crop(volume: Volume, bbox: BBox, case_id: str = '', margin_used: int = 0) -> Tuple[Volume, CropRecord]:
    """
    Extract the sub-block covered by `bbox`

    The cropped grid keeps spacing and orientation; its origin moves to the
    world position of bbox.lo.
    """
    bbox.check_within(volume.dims)
    geometry = volume.geometry
    cropped_geometry = geometry.with_dims(bbox.extents, origin=geometry.world_offset(bbox.lo))
    voxels = np.array(volume.voxels[bbox.slices], copy=True)
    record = CropRecord(
        original_dims=volume.dims,
        bbox=bbox,
        margin_used=margin_used,
        case_id=case_id,
        original_origin=geometry.origin,
    )
    return Volume(cropped_geometry, volume.kind, voxels), record


def restore(cropped: Volume, record: CropRecord, background: int = 0) -> Volume:
    """Paste a cropped label map back onto the original grid, filling the rest with `background`"""
    require_kind(cropped, VolumeKind.LABEL, 'restore input')
    if cropped.dims != record.bbox.extents:
        raise RecordMismatchError(
            f'cropped dims {cropped.dims} do not match record extents {record.bbox.extents}'
            + (f' for case {record.case_id}' if record.case_id else '')
        )

    geometry = cropped.geometry
    if record.original_origin is not None:
        origin = record.original_origin
    else:
        origin = geometry.world_offset(tuple(-l for l in record.bbox.lo))

    full = np.full(record.original_dims, background, dtype=cropped.voxels.dtype)
    full[record.bbox.slices] = cropped.voxels
    return Volume(geometry.with_dims(record.original_dims, origin=origin), VolumeKind.LABEL, full)


def crop_ratio(record: CropRecord) -> Dict[str, float]:
    """Fraction of the original grid kept by the crop, per axis and overall"""
    ext = record.bbox.extents
    ratios = {axis: e / d for axis, e, d in zip(AXES, ext, record.original_dims)}
    ratios['voxels'] = float(np.prod(ext)) / float(np.prod(record.original_dims))
    return ratios


def locate_roi(
    ct: Volume,
    threshold: float = DEFAULT_THRESHOLD_HU,
    margin: int = DEFAULT_MARGIN_PX,
    connectivity: int = 26,
    full_z: bool = True,
    air_floor: Optional[float] = None,
) -> Tuple[BBox, Volume]:
    """
    Body mask -> largest component -> bounding box

    Returns:
        The bounding box and the largest-component mask it was fitted to
    """
    body = body_mask_threshold(ct, threshold, air_floor)
    components = label_components(body, connectivity)
    if components.count == 0:
        raise EmptyMaskError(f'no voxel reaches {threshold:g} HU, body mask is empty')
    head = largest_component(components)
    bbox = fit_bbox(head, margin, full_z)
    LOGGER.info(
        f'ROI: {components.count} body components, largest {components.sizes[0]} voxels, '
        f'bbox lo {bbox.lo} hi {bbox.hi}'
    )
    return bbox, head

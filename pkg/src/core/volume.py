"""
Volumetric domain types

A Volume is a dense 3D grid held as a numpy array indexed [x, y, z]; on disk
the same data is serialized x-fastest (Fortran order). Orientation is kept
as metadata only, volumes are never resampled.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from src.core.errors import GeometryError, VolumeKindError

Triple = Tuple[float, float, float]
AXES = ('x', 'y', 'z')
IDENTITY = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class VolumeKind(str, Enum):
    INTENSITY = 'intensity'
    LABEL = 'label'


@dataclass(frozen=True)
class GridGeometry:
    """
    Physical placement of a voxel grid

    Args:
        dims: voxel counts along x, y, z
        spacing: voxel size in mm along x, y, z
        origin: world position (mm) of voxel (0, 0, 0)
        orientation: 3x3 direction matrix, column j is the direction of axis j
    """
    dims: Tuple[int, int, int]
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    orientation: Tuple[Triple, Triple, Triple] = IDENTITY

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        orientation = tuple(tuple(float(v) for v in row) for row in self.orientation)

        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise GeometryError('dims, spacing and origin must have three components')
        if len(orientation) != 3 or any(len(row) != 3 for row in orientation):
            raise GeometryError('orientation must be a 3x3 matrix')
        for axis, d in zip(AXES, dims):
            if d < 1:
                raise GeometryError(f'dims must be >= 1, got {d} on axis {axis}', axis=axis)
        for axis, s in zip(AXES, spacing):
            if not s > 0:
                raise GeometryError(f'spacing must be > 0, got {s} on axis {axis}', axis=axis)

        matrix = np.asarray(orientation, dtype=np.float64)
        norms = np.linalg.norm(matrix, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise GeometryError(f'orientation columns must be unit-norm, got norms {norms.tolist()}')
        if abs(np.linalg.det(matrix)) < 1e-12:
            raise GeometryError('orientation matrix is singular')

        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'orientation', orientation)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def affine(self) -> np.ndarray:
        """4x4 voxel-to-world matrix"""
        affine = np.eye(4)
        affine[:3, :3] = np.asarray(self.orientation) * np.asarray(self.spacing)
        affine[:3, 3] = self.origin
        return affine

    def with_dims(self, dims: Sequence[int], origin: Optional[Triple] = None) -> 'GridGeometry':
        return GridGeometry(
            dims=tuple(dims),
            spacing=self.spacing,
            origin=self.origin if origin is None else origin,
            orientation=self.orientation,
        )

    def world_offset(self, index: Sequence[int]) -> Triple:
        """World position (mm) of the voxel at the given index"""
        return tuple((self.affine() @ np.array([*index, 1.0]))[:3].tolist())


@dataclass(frozen=True, eq=False)
class Volume:
    """
    Dense scalar grid with physical geometry

    Voxel arrays are exposed read-only; derive new volumes with with_voxels().
    """
    geometry: GridGeometry
    kind: VolumeKind
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        kind = VolumeKind(self.kind)
        view = np.asarray(self.voxels).view()
        if view.shape != self.geometry.dims:
            raise GeometryError(
                f'voxel array shape {view.shape} does not match dims {self.geometry.dims}'
            )
        if kind is VolumeKind.LABEL:
            if not (np.issubdtype(view.dtype, np.integer) or view.dtype == np.bool_):
                if not np.all(np.mod(view, 1) == 0):
                    raise VolumeKindError('label volumes must hold integer values')
            if view.size and view.min() < 0:
                raise VolumeKindError('label volumes must be non-negative')
        view.flags.writeable = False
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'voxels', view)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.geometry.dims

    @property
    def spacing(self) -> Triple:
        return self.geometry.spacing

    @property
    def is_label(self) -> bool:
        return self.kind is VolumeKind.LABEL

    def with_voxels(self, voxels: np.ndarray, kind: Optional[VolumeKind] = None) -> 'Volume':
        """New volume on the same grid"""
        return Volume(self.geometry, kind or self.kind, voxels)

    def equals(self, other: 'Volume') -> bool:
        """Geometry, kind, dtype and every voxel identical"""
        return (
            self.geometry == other.geometry
            and self.kind is other.kind
            and self.voxels.dtype == other.voxels.dtype
            and np.array_equal(self.voxels, other.voxels)
        )


def require_kind(volume: Volume, kind: VolumeKind, what: str = 'volume') -> None:
    if volume.kind is not kind:
        raise VolumeKindError(f'{what} must be a {kind.value} volume, got {volume.kind.value}')


@dataclass(frozen=True, eq=False)
class PairedCase:
    """Co-registered contrast-enhanced and plain CT of one subject"""
    contrast_ct: Volume
    plain_ct: Volume
    case_id: str

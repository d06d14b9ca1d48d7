"""
Bi-modal CT phantom generator and threshold oracle segmenter

A phantom is a body primitive in air (-1000 HU) holding labelled primitives.
Membership is decided by voxel center; later primitives occlude earlier
ones. Gaussian noise comes from numpy's PCG64 generator (ziggurat normals),
drawn over the whole grid in index order, contrast volume first.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ParameterError, PhantomSpecError, RuleConflictError
from src.core.volume import GridGeometry, Volume, VolumeKind, require_kind

LOGGER = logging.getLogger(__name__)

AIR_HU = -1000.0

# Number of size parameters per shape
SIZE_ARITY = {'sphere': 1, 'ellipsoid': 3, 'box': 3, 'tube': 2}


class Shape(str, Enum):
    SPHERE = 'sphere'        # size: (radius,)
    ELLIPSOID = 'ellipsoid'  # size: (rx, ry, rz)
    BOX = 'box'              # size: half extents (hx, hy, hz)
    TUBE = 'tube'            # size: (radius, half_length), axis along z


@dataclass(frozen=True)
class Primitive:
    shape: Shape
    center: Tuple[float, float, float]
    size: Tuple[float, ...]
    hu_contrast: float
    hu_plain: float
    label_id: int = 0
    name: str = ''

    def extent(self) -> Tuple[float, float, float]:
        """Half extent along x, y, z in voxels"""
        shape = Shape(self.shape)
        if shape is Shape.SPHERE:
            return (self.size[0],) * 3
        if shape is Shape.TUBE:
            return self.size[0], self.size[0], self.size[1]
        return tuple(self.size)

    def contains(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Voxel-center membership on broadcastable index grids"""
        cx, cy, cz = self.center
        dx, dy, dz = x - cx, y - cy, z - cz
        shape = Shape(self.shape)
        if shape is Shape.SPHERE:
            return dx ** 2 + dy ** 2 + dz ** 2 <= self.size[0] ** 2
        if shape is Shape.ELLIPSOID:
            rx, ry, rz = self.size
            return (dx / rx) ** 2 + (dy / ry) ** 2 + (dz / rz) ** 2 <= 1.0
        if shape is Shape.BOX:
            hx, hy, hz = self.size
            return (np.abs(dx) <= hx) & (np.abs(dy) <= hy) & (np.abs(dz) <= hz)
        radius, half_length = self.size
        return (dx ** 2 + dy ** 2 <= radius ** 2) & (np.abs(dz) <= half_length)

    def to_dict(self) -> Dict:
        data = {
            'shape': Shape(self.shape).value,
            'center': list(self.center),
            'size': list(self.size),
            'hu_contrast': self.hu_contrast,
            'hu_plain': self.hu_plain,
            'label_id': self.label_id,
        }
        if self.name:
            data['name'] = self.name
        return data


def _primitive_from_dict(data: Dict, where: str) -> Primitive:
    try:
        shape = Shape(data['shape'])
    except (KeyError, ValueError) as e:
        raise PhantomSpecError(f'{where}.shape', f'unknown or missing shape: {e}') from e
    try:
        return Primitive(
            shape=shape,
            center=tuple(float(c) for c in data['center']),
            size=tuple(float(s) for s in data['size']),
            hu_contrast=float(data['hu_contrast']),
            hu_plain=float(data['hu_plain']),
            label_id=int(data.get('label_id', 0)),
            name=str(data.get('name', '')),
        )
    except KeyError as e:
        raise PhantomSpecError(f'{where}.{e.args[0]}', 'missing field') from e
    except (TypeError, ValueError) as e:
        raise PhantomSpecError(where, f'malformed primitive: {e}') from e


@dataclass(frozen=True)
class PhantomSpec:
    """
    Geometry, primitives and noise of a phantom

    Args:
        dims: voxel counts along x, y, z
        spacing: voxel size in mm
        body: primitive whose voxel set is the body mask; its label_id is ignored
        primitives: labelled structures, later ones occlude earlier ones
        noise_sigma: std of the additive Gaussian noise in HU
        seed: seed of the noise generator
    """
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    body: Primitive
    primitives: Tuple[Primitive, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'primitives', tuple(self.primitives))
        self.validate()

    def validate(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise PhantomSpecError('dims', f'need three positive sizes, got {list(self.dims)}')
        if len(self.spacing) != 3 or any(not float(s) > 0 for s in self.spacing):
            raise PhantomSpecError('spacing', f'need three positive spacings, got {list(self.spacing)}')
        if not float(self.noise_sigma) >= 0:
            raise PhantomSpecError('noise_sigma', f'must be >= 0, got {self.noise_sigma}')

        self._check_primitive(self.body, 'body')
        seen = set()
        for i, primitive in enumerate(self.primitives):
            where = f'primitives[{i}]'
            self._check_primitive(primitive, where)
            if primitive.label_id <= 0:
                raise PhantomSpecError(f'{where}.label_id', f'must be positive, got {primitive.label_id}')
            if primitive.label_id in seen:
                raise PhantomSpecError(f'{where}.label_id', f'label {primitive.label_id} is used twice')
            seen.add(primitive.label_id)

    def _check_primitive(self, primitive: Primitive, where: str):
        arity = SIZE_ARITY[Shape(primitive.shape).value]
        if len(primitive.size) != arity:
            raise PhantomSpecError(f'{where}.size', f'{primitive.shape} takes {arity} size values')
        if any(not s > 0 for s in primitive.size):
            raise PhantomSpecError(f'{where}.size', f'sizes must be > 0, got {list(primitive.size)}')
        if len(primitive.center) != 3:
            raise PhantomSpecError(f'{where}.center', 'center needs three coordinates')
        for c, e, d in zip(primitive.center, primitive.extent(), self.dims):
            if c - e < 0 or c + e > d - 1:
                raise PhantomSpecError(f'{where}', f'does not fit within dims {list(self.dims)}')

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(dims=tuple(self.dims), spacing=tuple(self.spacing))

    @property
    def label_ids(self) -> List[int]:
        return sorted(p.label_id for p in self.primitives)

    def names(self) -> Dict[int, str]:
        return {p.label_id: p.name or f'label_{p.label_id}' for p in self.primitives}

    def with_noise(self, sigma: float, seed: Optional[int] = None) -> 'PhantomSpec':
        return PhantomSpec(
            self.dims, self.spacing, self.body, self.primitives,
            noise_sigma=sigma, seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> Dict:
        return {
            'dims': list(self.dims),
            'spacing': list(self.spacing),
            'body': self.body.to_dict(),
            'primitives': [p.to_dict() for p in self.primitives],
            'noise_sigma': self.noise_sigma,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'PhantomSpec':
        for key in ('dims', 'spacing', 'body'):
            if key not in data:
                raise PhantomSpecError(key, 'missing field')
        try:
            dims = tuple(int(d) for d in data['dims'])
            spacing = tuple(float(s) for s in data['spacing'])
        except (TypeError, ValueError) as e:
            raise PhantomSpecError('dims', f'malformed grid: {e}') from e
        return cls(
            dims=dims,
            spacing=spacing,
            body=_primitive_from_dict(data['body'], 'body'),
            primitives=tuple(
                _primitive_from_dict(p, f'primitives[{i}]') for i, p in enumerate(data.get('primitives', []))
            ),
            noise_sigma=float(data.get('noise_sigma', 0.0)),
            seed=int(data.get('seed', 0)),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'PhantomSpec':
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise PhantomSpecError('file', f'cannot read {path}: {e}') from e
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + '\n', encoding='utf-8')
        return path


class PhantomVolumes(NamedTuple):
    contrast_ct: Volume
    plain_ct: Volume
    labels: Volume
    body_mask: Volume


@dataclass(frozen=True)
class ThresholdRule:
    """Inclusive HU interval [lo, hi] mapped to a label"""
    lo: float
    hi: float
    label_id: int

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ParameterError(f'rule needs lo <= hi, got [{self.lo}, {self.hi}]')
        if self.label_id <= 0:
            raise ParameterError(f'rule label must be positive, got {self.label_id}')


def _rasterize(primitive: Primitive, dims: Sequence[int]) -> Tuple[Tuple[slice, ...], np.ndarray]:
    """Membership of a primitive restricted to its bounding block"""
    bounds = []
    for c, e, d in zip(primitive.center, primitive.extent(), dims):
        lo = max(int(math.ceil(c - e)), 0)
        hi = min(int(math.floor(c + e)), d - 1)
        bounds.append((lo, max(hi, lo - 1)))
    block = tuple(slice(lo, hi + 1) for lo, hi in bounds)
    x, y, z = np.ogrid[block]
    return block, primitive.contains(x, y, z)


def generate(spec: PhantomSpec) -> PhantomVolumes:
    """
    Render a phantom

    Returns:
        contrast CT, plain CT (float32, HU), label volume and body mask on
        the phantom grid
    """
    dims = tuple(spec.dims)
    contrast = np.full(dims, AIR_HU, dtype=np.float64)
    plain = np.full(dims, AIR_HU, dtype=np.float64)
    max_label = max([0] + spec.label_ids)
    labels = np.zeros(dims, dtype=np.min_scalar_type(max_label))
    body = np.zeros(dims, dtype=np.uint8)
    occupied = np.zeros(dims, dtype=bool)

    block, inside = _rasterize(spec.body, dims)
    body[block][inside] = 1
    contrast[block][inside] = spec.body.hu_contrast
    plain[block][inside] = spec.body.hu_plain
    occupied[block] |= inside

    for primitive in spec.primitives:
        block, inside = _rasterize(primitive, dims)
        contrast[block][inside] = primitive.hu_contrast
        plain[block][inside] = primitive.hu_plain
        labels[block][inside] = primitive.label_id
        occupied[block] |= inside

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        contrast_noise = rng.normal(0.0, spec.noise_sigma, size=dims)
        plain_noise = rng.normal(0.0, spec.noise_sigma, size=dims)
        contrast[occupied] += contrast_noise[occupied]
        plain[occupied] += plain_noise[occupied]

    geometry = spec.geometry
    LOGGER.debug(
        f'Phantom {dims}: body {int(body.sum())} voxels, '
        f'{len(spec.primitives)} structures, noise sigma {spec.noise_sigma:g} HU'
    )
    return PhantomVolumes(
        contrast_ct=Volume(geometry, VolumeKind.INTENSITY, contrast.astype(np.float32)),
        plain_ct=Volume(geometry, VolumeKind.INTENSITY, plain.astype(np.float32)),
        labels=Volume(geometry, VolumeKind.LABEL, labels),
        body_mask=Volume(geometry, VolumeKind.LABEL, body),
    )


def _check_disjoint(rules: Sequence[ThresholdRule]) -> None:
    ordered = sorted(rules, key=lambda r: (r.lo, r.hi))
    for prev, nxt in zip(ordered, ordered[1:]):
        if nxt.lo <= prev.hi:
            raise RuleConflictError(
                f'rules [{prev.lo:g}, {prev.hi:g}] -> {prev.label_id} and '
                f'[{nxt.lo:g}, {nxt.hi:g}] -> {nxt.label_id} overlap'
            )


def threshold_segment(ct: Volume, rules: Sequence[ThresholdRule]) -> Volume:
    """Label each voxel with the rule whose HU interval holds it, 0 when none does"""
    require_kind(ct, VolumeKind.INTENSITY, 'threshold_segment input')
    rules = [r if isinstance(r, ThresholdRule) else ThresholdRule(*r) for r in rules]
    _check_disjoint(rules)

    max_label = max([0] + [r.label_id for r in rules])
    out = np.zeros(ct.dims, dtype=np.min_scalar_type(max_label))
    voxels = np.asarray(ct.voxels)
    for rule in rules:
        out[(voxels >= rule.lo) & (voxels <= rule.hi)] = rule.label_id
    return ct.with_voxels(out, kind=VolumeKind.LABEL)


def oracle_rules(spec: PhantomSpec, modality: str = 'contrast', half_width: Optional[float] = None) -> List[ThresholdRule]:
    """
    One rule per structure centred on its HU

    The default half width is 45% of the smallest gap between the distinct
    HU levels of the phantom (air and body included), capped at 50 HU for
    noiseless phantoms. Structures sharing a HU level cannot be told apart
    and get no rule after the first.
    """
    attr = 'hu_contrast' if modality == 'contrast' else 'hu_plain'
    levels = sorted({AIR_HU, getattr(spec.body, attr)} | {getattr(p, attr) for p in spec.primitives})
    if half_width is None:
        gap = min((b - a for a, b in zip(levels, levels[1:])), default=100.0)
        half_width = 0.45 * gap
        if spec.noise_sigma == 0:
            half_width = min(half_width, 50.0)

    rules = []
    used = set()
    for primitive in spec.primitives:
        hu = getattr(primitive, attr)
        if hu in used:
            LOGGER.warning(f'label {primitive.label_id} shares {hu:g} HU with another structure, no rule')
            continue
        used.add(hu)
        rules.append(ThresholdRule(hu - half_width, hu + half_width, primitive.label_id))
    return rules


def mini_head_neck_preset(
    dims: Sequence[int] = (128, 128, 64),
    spacing: Sequence[float] = (1.0, 1.0, 2.5),
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> PhantomSpec:
    """
    Body ellipsoid with small structures near the cranial end and a tube spanning every slice

    HU levels stay inside every task window so clamping never merges them.
    """
    X, Y, Z = (int(d) for d in dims)
    cx, cy, cz = (X - 1) / 2.0, (Y - 1) / 2.0, (Z - 1) / 2.0
    small = min(X, Y)
    head_z = 0.8 * (Z - 1)

    body = Primitive(Shape.ELLIPSOID, (cx, cy, cz), (0.38 * X, 0.42 * Y, cz), 40.0, 30.0, name='body')
    primitives = (
        Primitive(
            Shape.SPHERE, (cx, cy + 0.10 * Y, head_z),
            (min(max(2.0, 0.06 * small), 0.15 * (Z - 1)),), 200.0, 150.0, 1, 'brainstem',
        ),
        Primitive(
            Shape.ELLIPSOID, (cx - 0.15 * X, cy - 0.18 * Y, head_z),
            (max(1.5, 0.05 * X), max(1.5, 0.05 * Y), max(1.0, 0.06 * (Z - 1))), 380.0, 300.0, 2, 'eye_left',
        ),
        Primitive(
            Shape.BOX, (cx, cy - 0.12 * Y, 0.62 * (Z - 1)),
            (max(1.0, 0.12 * X), max(1.0, 0.04 * Y), max(1.0, 0.04 * (Z - 1))), 560.0, 450.0, 3, 'mandible',
        ),
        Primitive(
            Shape.TUBE, (cx, cy + 0.25 * Y, cz),
            (max(2.0, 0.04 * small), cz), -200.0, -220.0, 4, 'trachea',
        ),
    )
    return PhantomSpec(tuple(dims), tuple(float(s) for s in spacing), body, primitives, noise_sigma, seed)

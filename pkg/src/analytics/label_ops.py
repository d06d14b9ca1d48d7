"""
Label taxonomy and label post-processing

The organs-at-risk model predicts 54 labels: 45 anatomical targets plus 9
overlapping substructures that are merged back into their parent targets.
The GTV task has two labels. Which substructure belongs to which parent is
configuration, loaded from a label schema file.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Union

import numpy as np

from src.core.errors import LabelSchemaError, UnknownLabelError
from src.core.volume import Volume, VolumeKind, require_kind

LOGGER = logging.getLogger(__name__)

# Organs at risk in the order of the challenge description, left before right
OAR_NAMES = [
    'brain', 'brainstem', 'chiasm', 'cochlea_left', 'cochlea_right', 'esophagus',
    'eustachian_tube_left', 'eustachian_tube_right', 'eye_left', 'eye_right',
    'hippocampus_left', 'hippocampus_right',
    'internal_auditory_canal_left', 'internal_auditory_canal_right',
    'larynx', 'larynx_glottic', 'larynx_supraglottic', 'lens_left', 'lens_right',
    'mandible_left', 'mandible_right', 'mastoid_left', 'mastoid_right',
    'middle_ear_left', 'middle_ear_right', 'optic_nerve_left', 'optic_nerve_right',
    'oral_cavity', 'parotid_left', 'parotid_right', 'pharyngeal_constrictor_muscle',
    'pituitary', 'spinal_cord', 'submandibular_left', 'submandibular_right',
    'temporal_lobe_left', 'temporal_lobe_right', 'thyroid',
    'temporomandibular_joint_left', 'temporomandibular_joint_right', 'trachea',
    'tympanic_cavity_left', 'tympanic_cavity_right',
    'vestibular_semicircular_canal_left', 'vestibular_semicircular_canal_right',
]
N_SUBSTRUCTURES = 9
GTV_NAMES = {1: 'GTVnx', 2: 'GTVnd'}


@dataclass(frozen=True)
class LabelEntry:
    name: str
    voxel_count: int


@dataclass(frozen=True)
class LabelInventory:
    entries: Dict[int, LabelEntry] = field(default_factory=dict)

    def counts(self) -> Dict[int, int]:
        return {label: entry.voxel_count for label, entry in self.entries.items()}

    @property
    def total(self) -> int:
        return sum(entry.voxel_count for entry in self.entries.values())


@dataclass(frozen=True)
class MergeMap:
    """
    Source label -> target label, identity for unlisted ids

    Every source maps onto a declared target and no target is itself a
    source, so applying the map twice changes nothing.
    """
    mapping: Mapping[int, int]
    targets: FrozenSet[int]

    def __post_init__(self):
        mapping = {int(s): int(t) for s, t in self.mapping.items()}
        targets = frozenset(int(t) for t in self.targets)
        if 0 in targets or 0 in mapping:
            raise LabelSchemaError('label 0 is background and cannot be a target or source')
        undeclared = sorted({t for t in mapping.values() if t not in targets})
        if undeclared:
            raise LabelSchemaError(f'merge targets {undeclared} are not declared targets')
        chained = sorted(s for s in mapping if s in targets)
        if chained:
            raise LabelSchemaError(f'labels {chained} are both source and target')
        object.__setattr__(self, 'mapping', mapping)
        object.__setattr__(self, 'targets', targets)

    @classmethod
    def identity(cls, ids: Iterable[int]) -> 'MergeMap':
        return cls({}, frozenset(ids))

    @property
    def known(self) -> FrozenSet[int]:
        return self.targets | frozenset(self.mapping)

    def __call__(self, label: int) -> int:
        return self.mapping.get(int(label), int(label))

    def sources_of(self, target: int) -> FrozenSet[int]:
        return frozenset([target] + [s for s, t in self.mapping.items() if t == target])


@dataclass(frozen=True)
class LabelSchema:
    """Target names plus the substructure merges of one task"""
    task: str
    targets: Dict[int, str]
    merges: Dict[int, int] = field(default_factory=dict)
    source_names: Dict[int, str] = field(default_factory=dict)

    def merge_map(self) -> MergeMap:
        return MergeMap(self.merges, frozenset(self.targets))

    def name_of(self, label: int) -> str:
        return self.targets.get(label) or self.source_names.get(label) or f'label_{label}'

    def to_dict(self) -> Dict:
        return {
            'task': self.task,
            'targets': [{'id': i, 'name': n} for i, n in sorted(self.targets.items())],
            'merges': [
                {'source_id': s, 'target_id': t, 'name': self.source_names.get(s, f'label_{s}')}
                for s, t in sorted(self.merges.items())
            ],
        }


def default_oar_schema() -> LabelSchema:
    """
    45 targets numbered in description order; 46..54 are placeholder
    substructures merged onto targets 1..9 until a site schema replaces them
    """
    targets = {i + 1: name for i, name in enumerate(OAR_NAMES)}
    first = len(OAR_NAMES) + 1
    merges = {first + k: k + 1 for k in range(N_SUBSTRUCTURES)}
    source_names = {s: f'substructure_{s}' for s in merges}
    return LabelSchema('oars', targets, merges, source_names)


def default_gtv_schema() -> LabelSchema:
    return LabelSchema('gtvs', dict(GTV_NAMES))


def load_schema(path: Union[str, Path]) -> LabelSchema:
    """
    Read a label schema file

    The JSON object holds `targets` ([{id, name}]) and `merges`
    ([{source_id, target_id}]); the merge map invariants are checked on load.
    """
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        targets = {int(t['id']): str(t['name']) for t in data['targets']}
        merges = {}
        source_names = {}
        for entry in data.get('merges', []):
            source = int(entry['source_id'])
            if source in merges:
                raise LabelSchemaError(f'source {source} is listed twice')
            merges[source] = int(entry['target_id'])
            if 'name' in entry:
                source_names[source] = str(entry['name'])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, LabelSchemaError):
            raise
        raise LabelSchemaError(f'cannot read label schema {path}: {e}') from e
    if len(targets) != len(data['targets']):
        raise LabelSchemaError('target ids must be unique')

    schema = LabelSchema(str(data.get('task', 'oars')), targets, merges, source_names)
    schema.merge_map()
    LOGGER.info(f'Loaded label schema {path}: {len(targets)} targets, {len(merges)} merges')
    return schema


def schema_for_task(task: str, path: Optional[Union[str, Path]] = None) -> LabelSchema:
    """Schema from `path` when given, otherwise the built-in default of the task"""
    if path:
        return load_schema(path)
    if str(task).lower() == 'gtvs':
        return default_gtv_schema()
    return default_oar_schema()


def inventory(volume: Volume, names: Optional[Mapping[int, str]] = None) -> LabelInventory:
    """Voxel count of every nonzero label present in the volume"""
    require_kind(volume, VolumeKind.LABEL, 'inventory input')
    values, counts = np.unique(np.asarray(volume.voxels), return_counts=True)
    names = names or {}
    entries = {
        int(v): LabelEntry(names.get(int(v), f'label_{int(v)}'), int(c))
        for v, c in zip(values, counts)
        if v != 0
    }
    return LabelInventory(entries)


def apply_merge(volume: Volume, merge_map: MergeMap) -> Volume:
    """
    Relabel every voxel through the merge map

    Raises UnknownLabelError listing every label the map does not know.
    """
    present = inventory(volume)
    unknown = [label for label in present.entries if label not in merge_map.known]
    if unknown:
        raise UnknownLabelError(unknown)

    voxels = np.asarray(volume.voxels)
    if not np.issubdtype(voxels.dtype, np.integer):
        voxels = voxels.astype(np.int64)
    if not merge_map.mapping or not present.entries:
        return volume.with_voxels(voxels.copy())

    # widen so every target id fits, e.g. uint8 input merged onto id 300
    dtype = np.result_type(voxels.dtype, np.min_scalar_type(max(merge_map.mapping.values())))
    lut = np.arange(int(voxels.max()) + 1, dtype=dtype)
    for source, target in merge_map.mapping.items():
        if source < lut.size:
            lut[source] = target
    merged = lut[voxels]
    LOGGER.debug(f'Merged {len(present.entries)} labels into {len(np.unique(merged[merged > 0]))}')
    return volume.with_voxels(merged)


def binarize(volume: Volume, label: int) -> Volume:
    """1 where the volume holds `label`, 0 elsewhere"""
    return volume.with_voxels((np.asarray(volume.voxels) == label).astype(np.uint8), kind=VolumeKind.LABEL)


def label_names(schema: LabelSchema) -> Dict[int, str]:
    """Target id -> name, as used in report rows"""
    return dict(sorted(schema.targets.items()))

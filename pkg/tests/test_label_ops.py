"""
Label schema and merge tests
"""
import json

import numpy as np
import pytest

from src.analytics.label_ops import (
    OAR_NAMES,
    MergeMap,
    apply_merge,
    binarize,
    default_gtv_schema,
    default_oar_schema,
    inventory,
    label_names,
    load_schema,
    schema_for_task,
)
from src.core import config
from src.core.errors import LabelSchemaError, UnknownLabelError


def test_default_oar_schema_shape():
    schema = default_oar_schema()
    assert len(OAR_NAMES) == 45
    assert sorted(schema.targets) == list(range(1, 46))
    assert sorted(schema.merges) == list(range(46, 55))
    assert all(1 <= t <= 45 for t in schema.merges.values())
    assert schema.name_of(2) == 'brainstem'
    assert schema.name_of(46) == 'substructure_46'
    assert schema.name_of(99) == 'label_99'


def test_shipped_schema_matches_default():
    shipped = load_schema(config.LABEL_SCHEMA_PATH)
    default = default_oar_schema()
    assert shipped.task == 'oars'
    assert shipped.targets == default.targets
    assert shipped.merges == default.merges
    assert shipped.to_dict() == default.to_dict()


def test_merging_54_labels_yields_45(make_label):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 55, size=(20, 20, 10)).astype(np.uint8)
    labels.ravel()[1:55] = np.arange(1, 55)
    volume = make_label(labels)

    merged = apply_merge(volume, default_oar_schema().merge_map())

    present = set(np.unique(merged.voxels).tolist()) - {0}
    assert present == set(range(1, 46))
    assert np.array_equal(merged.voxels != 0, labels != 0)
    assert merged.voxels.dtype == labels.dtype
    assert merged.geometry == volume.geometry


def test_merge_is_idempotent(make_label):
    merge_map = default_oar_schema().merge_map()
    rng = np.random.default_rng(1)
    volume = make_label(rng.integers(0, 55, size=(10, 10, 10)).astype(np.uint8))
    once = apply_merge(volume, merge_map)
    twice = apply_merge(once, merge_map)
    assert np.array_equal(once.voxels, twice.voxels)


def test_merge_preserves_unmapped_targets(make_label):
    labels = np.array([0, 3, 47, 12, 54], dtype=np.uint8).reshape(5, 1, 1)
    merged = apply_merge(make_label(labels), default_oar_schema().merge_map())
    assert merged.voxels.ravel().tolist() == [0, 3, 2, 12, 9]


def test_merge_onto_target_wider_than_input_dtype(make_label):
    labels = np.array([0, 46, 7], dtype=np.uint8).reshape(1, 1, 3)
    merged = apply_merge(make_label(labels), MergeMap({46: 300}, frozenset({7, 300})))
    assert merged.voxels.ravel().tolist() == [0, 300, 7]
    assert merged.voxels.dtype == np.uint16


def test_unknown_labels_are_all_reported(make_label):
    labels = np.array([0, 1, 60, 55, 60], dtype=np.uint8).reshape(5, 1, 1)
    with pytest.raises(UnknownLabelError) as info:
        apply_merge(make_label(labels), default_oar_schema().merge_map())
    assert info.value.labels == (55, 60)


def test_identity_map_on_gtv_labels(make_label):
    labels = np.array([0, 1, 2, 1], dtype=np.uint8).reshape(2, 2, 1)
    merged = apply_merge(make_label(labels), default_gtv_schema().merge_map())
    assert np.array_equal(merged.voxels, labels)


def test_merge_map_invariants():
    with pytest.raises(LabelSchemaError):
        MergeMap({5: 7}, frozenset({1, 2}))
    with pytest.raises(LabelSchemaError):
        MergeMap({1: 2}, frozenset({1, 2}))
    with pytest.raises(LabelSchemaError):
        MergeMap({0: 1}, frozenset({1}))
    assert MergeMap({3: 1}, frozenset({1, 2})).sources_of(1) == frozenset({1, 3})


def test_load_schema_rejects_duplicate_sources(tmp_path):
    path = tmp_path / 'schema.json'
    path.write_text(json.dumps({
        'task': 'oars',
        'targets': [{'id': 1, 'name': 'a'}, {'id': 2, 'name': 'b'}],
        'merges': [{'source_id': 3, 'target_id': 1}, {'source_id': 3, 'target_id': 2}],
    }), encoding='utf-8')
    with pytest.raises(LabelSchemaError):
        load_schema(path)


def test_load_schema_rejects_chained_merges(tmp_path):
    path = tmp_path / 'schema.json'
    path.write_text(json.dumps({
        'targets': [{'id': 1, 'name': 'a'}, {'id': 2, 'name': 'b'}],
        'merges': [{'source_id': 2, 'target_id': 1}],
    }), encoding='utf-8')
    with pytest.raises(LabelSchemaError):
        load_schema(path)


def test_load_schema_reports_missing_file(tmp_path):
    with pytest.raises(LabelSchemaError):
        load_schema(tmp_path / 'missing.json')


def test_schema_for_task_defaults():
    assert schema_for_task('gtvs').targets == {1: 'GTVnx', 2: 'GTVnd'}
    assert len(schema_for_task('oars').targets) == 45


def test_inventory_and_binarize(make_label):
    labels = np.array([0, 2, 2, 5, 0, 2], dtype=np.uint8).reshape(6, 1, 1)
    volume = make_label(labels)
    inv = inventory(volume, {2: 'two'})
    assert inv.counts() == {2: 3, 5: 1}
    assert inv.entries[2].name == 'two'
    assert inv.entries[5].name == 'label_5'
    assert inv.total == 4
    assert binarize(volume, 2).voxels.ravel().tolist() == [0, 1, 1, 0, 0, 1]


def test_label_names_sorted_by_id():
    names = label_names(default_gtv_schema())
    assert list(names.items()) == [(1, 'GTVnx'), (2, 'GTVnd')]

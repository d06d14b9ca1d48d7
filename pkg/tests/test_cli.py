"""
Command-line and batch command tests on small phantom cases
"""
import json

import numpy as np
import pandas as pd
import pytest

from main import build_config, build_parser, main
from src.cli import commands
from src.cli.batch import BatchSummary, CaseResult, run_cases
from src.core import config
from src.core.config import PipelineConfig
from src.core.errors import CaseSetMismatchError
from src.core.volume import GridGeometry, Volume, VolumeKind
from src.integrations.volume_io import load_volume, save_volume
from src.preprocessing.roi_crop import load_record
from src.simulation.phantom import mini_head_neck_preset

SMALL = (32, 32, 16)


@pytest.fixture
def phantom_dir(tmp_path, pipeline_config):
    out = tmp_path / 'phantom'
    summary = commands.cmd_phantom(out, pipeline_config, mini_head_neck_preset(dims=SMALL), cases=3)
    assert summary.exit_code == 0
    return out


def _square(case_id, payload):
    return CaseResult(case_id, details={'value': payload * payload})


def _fail_on_odd(case_id, payload):
    if payload % 2:
        raise ValueError(f'odd payload {payload}')
    return CaseResult(case_id)


def test_run_cases_orders_by_case_id():
    items = [('c3', 3), ('c1', 1), ('c2', 2)]
    for workers in (1, 2):
        summary = run_cases('square', _square, items, workers=workers, progress=False)
        assert [r.case_id for r in summary.results] == ['c1', 'c2', 'c3']
        assert [r.details['value'] for r in summary.results] == [1, 4, 9]


def test_run_cases_isolates_failures(tmp_path):
    summary = run_cases('check', _fail_on_odd, [('a', 1), ('b', 2), ('c', 3)], progress=False)
    assert [r.status for r in summary.results] == ['error', 'ok', 'error']
    assert 'odd payload 1' in summary.results[0].message
    assert summary.exit_code == 1

    table = pd.read_csv(summary.write(tmp_path))
    assert list(table['case_id']) == ['a', 'b', 'c']
    assert (tmp_path / 'check_summary.csv').exists()


def test_empty_batch_succeeds():
    summary = BatchSummary('noop')
    assert summary.exit_code == 0
    assert summary.to_dataframe().empty


def test_phantom_command_layout(phantom_dir):
    names = sorted(p.name for p in phantom_dir.iterdir())
    assert 'phantom_spec.json' in names
    for case_id in ('phantom_000', 'phantom_001', 'phantom_002'):
        for suffix in ('contrast', 'plain', 'label', 'body'):
            assert f'{case_id}_{suffix}.nii.gz' in names
        assert (phantom_dir / 'oracle' / f'{case_id}_label.nii.gz').exists()
    labels = load_volume(phantom_dir / 'phantom_000_label.nii.gz')
    assert labels.kind is VolumeKind.LABEL
    assert labels.dims == SMALL
    assert labels.spacing == (1.0, 1.0, 2.5)


def test_evaluate_identical_directories(phantom_dir, tmp_path, pipeline_config):
    summary, report = commands.cmd_evaluate(phantom_dir, phantom_dir, tmp_path / 'eval', pipeline_config)
    assert summary.exit_code == 0
    assert report.aggregates.overall['dice'].mean == 1.0
    assert report.aggregates.overall['nsd'].mean == 1.0
    assert len(report.scores) == 3 * 4
    assert report.bins.as_tuple() == (12, 0, 0)
    for name in ('metrics.json', 'metrics.csv', 'metrics.html'):
        assert (tmp_path / 'eval' / name).exists()


def test_oracle_predictions_score_perfectly(phantom_dir, tmp_path, pipeline_config):
    _, report = commands.cmd_evaluate(phantom_dir / 'oracle', phantom_dir, tmp_path / 'eval', pipeline_config,
                                      html=False)
    assert all(s.dice == 1.0 and s.nsd == 1.0 for s in report.scores)
    assert not (tmp_path / 'eval' / 'metrics.html').exists()


def test_evaluate_reports_case_set_difference(phantom_dir, tmp_path, pipeline_config):
    pred = tmp_path / 'pred'
    for case_id in ('phantom_000', 'extra'):
        save_volume(load_volume(phantom_dir / 'phantom_000_label.nii.gz'), pred / f'{case_id}_label.nii.gz')
    with pytest.raises(CaseSetMismatchError) as info:
        commands.cmd_evaluate(pred, phantom_dir, tmp_path / 'eval', pipeline_config)
    assert info.value.only_pred == ['extra']
    assert info.value.only_ref == ['phantom_001', 'phantom_002']


def test_evaluate_with_schema_scores_every_target(tmp_path):
    labels = np.zeros((6, 6, 4), dtype=np.uint8)
    labels[1:3, 1:3, :] = 47
    labels[4:6, 4:6, :] = 2
    volume = Volume(GridGeometry((6, 6, 4)), VolumeKind.LABEL, labels)
    for side in ('pred', 'ref'):
        save_volume(volume, tmp_path / side / 'c1_label.nii.gz')

    cfg = PipelineConfig(labels_schema=config.LABEL_SCHEMA_PATH)
    _, report = commands.cmd_evaluate(tmp_path / 'pred', tmp_path / 'ref', tmp_path / 'eval', cfg)
    assert len(report.scores) == 45
    brainstem = [s for s in report.scores if s.label_id == 2][0]
    assert brainstem.label_name == 'brainstem'
    assert not brainstem.empty
    assert report.aggregates.empty_flagged == 44
    csv_rows = (tmp_path / 'eval' / 'metrics.csv').read_text(encoding='utf-8').splitlines()
    assert 'c1,2,brainstem,1,1,1,1' in csv_rows
    assert csv_rows[1].startswith('c1,1,brain,')


def test_preprocess_windows_each_modality(tmp_path):
    raw = np.array([-3000, -800, 0, 700, 3000], dtype=np.int16).reshape(5, 1, 1)
    geometry = GridGeometry((5, 1, 1), spacing=(0.5, 0.5, 3.0))
    for role in ('contrast', 'plain'):
        save_volume(Volume(geometry, VolumeKind.INTENSITY, raw), tmp_path / 'raw' / f'c1_{role}.nii.gz')

    cfg = PipelineConfig(task='gtvs')
    summary = commands.cmd_preprocess(tmp_path / 'raw', tmp_path / 'pre', cfg)
    assert summary.exit_code == 0
    assert summary.results[0].details['window_plain'] == '[-600, 600]'
    contrast = load_volume(tmp_path / 'pre' / 'c1_contrast.nii.gz').voxels
    plain = load_volume(tmp_path / 'pre' / 'c1_plain.nii.gz').voxels
    assert contrast.ravel().tolist() == [-1000, -800, 0, 700, 1000]
    assert plain.ravel().tolist() == [-600, -600, 0, 600, 600]

    commands.cmd_preprocess(tmp_path / 'pre', tmp_path / 'again', cfg)
    for role in ('contrast', 'plain'):
        first = (tmp_path / 'pre' / f'c1_{role}.nii.gz').read_bytes()
        second = (tmp_path / 'again' / f'c1_{role}.nii.gz').read_bytes()
        assert first == second


def test_preprocess_reports_unpaired_case(tmp_path, pipeline_config):
    geometry = GridGeometry((4, 4, 2))
    save_volume(Volume(geometry, VolumeKind.INTENSITY, np.zeros((4, 4, 2), np.int16)), tmp_path / 'c1_contrast.nii.gz')
    summary = commands.cmd_preprocess(tmp_path, tmp_path / 'out', pipeline_config)
    assert summary.exit_code == 1
    assert 'c1_plain.nii.gz' in summary.results[0].message


def test_parallel_preprocess_matches_serial(phantom_dir, tmp_path):
    serial = commands.cmd_preprocess(phantom_dir, tmp_path / 'serial', PipelineConfig(workers=1))
    parallel = commands.cmd_preprocess(phantom_dir, tmp_path / 'parallel', PipelineConfig(workers=2))
    assert [r.case_id for r in parallel.results] == ['phantom_000', 'phantom_001', 'phantom_002']
    assert [r.details for r in parallel.results] == [r.details for r in serial.results]
    for path in sorted((tmp_path / 'serial').iterdir()):
        assert path.read_bytes() == (tmp_path / 'parallel' / path.name).read_bytes()


def test_crop_then_restore_round_trip(phantom_dir, tmp_path, pipeline_config):
    pipeline_config.crop.margin_px = 2
    crop_summary = commands.cmd_crop(phantom_dir, tmp_path / 'crop', pipeline_config)
    assert crop_summary.exit_code == 0
    cropped = load_volume(tmp_path / 'crop' / 'phantom_000_contrast.nii.gz')
    assert cropped.geometry.n_voxels < np.prod(SMALL)
    assert cropped.dims[2] == SMALL[2]

    summary = commands.cmd_restore(tmp_path / 'crop', tmp_path / 'crop', tmp_path / 'restored', pipeline_config)
    assert summary.exit_code == 0
    assert len(summary.results) == 3
    for case_id in ('phantom_000', 'phantom_001', 'phantom_002'):
        restored = load_volume(tmp_path / 'restored' / f'{case_id}_label.nii.gz')
        original = load_volume(phantom_dir / f'{case_id}_label.nii.gz')
        assert restored.equals(original)


def test_crop_of_preprocessed_cases_finds_the_body(phantom_dir, tmp_path, pipeline_config):
    pipeline_config.crop.margin_px = 2
    assert commands.cmd_preprocess(phantom_dir, tmp_path / 'pre', pipeline_config).exit_code == 0
    pre_min = float(load_volume(tmp_path / 'pre' / 'phantom_000_contrast.nii.gz').voxels.min())
    assert pre_min == config.DEFAULT_WINDOWS['oars.contrast'][0]

    assert commands.cmd_crop(tmp_path / 'pre', tmp_path / 'crop', pipeline_config).exit_code == 0
    assert commands.cmd_crop(tmp_path / 'pre', tmp_path / 'raw_roi', pipeline_config, roi_dir=phantom_dir).exit_code == 0
    for case_id in ('phantom_000', 'phantom_001', 'phantom_002'):
        record = load_record(tmp_path / 'crop' / f'{case_id}.crop.json')
        assert record.bbox == load_record(tmp_path / 'raw_roi' / f'{case_id}.crop.json').bbox
        assert np.prod(record.bbox.extents) < np.prod(SMALL)

        body = load_volume(phantom_dir / f'{case_id}_body.nii.gz').voxels
        labels = load_volume(phantom_dir / f'{case_id}_label.nii.gz').voxels
        occupied = np.nonzero((body > 0) | (labels > 0))
        for axis in (0, 1):
            assert record.bbox.lo[axis] == max(int(occupied[axis].min()) - 2, 0)
            assert record.bbox.hi[axis] == min(int(occupied[axis].max()) + 2, SMALL[axis] - 1)


def test_crop_of_zscored_cases_needs_roi_dir(phantom_dir, tmp_path):
    cfg = PipelineConfig(zscore=True)
    assert commands.cmd_preprocess(phantom_dir, tmp_path / 'pre', cfg).exit_code == 0

    summary = commands.cmd_crop(tmp_path / 'pre', tmp_path / 'crop', cfg)
    assert summary.exit_code == 1
    assert all('roi_dir' in r.message for r in summary.errors)
    assert commands.cmd_crop(tmp_path / 'pre', tmp_path / 'crop', cfg, roi_dir=phantom_dir).exit_code == 0


def test_restore_without_record_fails_per_case(phantom_dir, tmp_path, pipeline_config):
    commands.cmd_crop(phantom_dir, tmp_path / 'crop', pipeline_config)
    (tmp_path / 'crop' / 'phantom_001.crop.json').unlink()
    summary = commands.cmd_restore(tmp_path / 'crop', tmp_path / 'crop', tmp_path / 'restored', pipeline_config)
    assert [r.status for r in summary.results] == ['ok', 'error', 'ok']
    assert 'RecordMismatchError' in summary.results[1].message
    assert summary.exit_code == 1


def test_merge_labels_command(tmp_path, pipeline_config):
    labels = np.arange(55, dtype=np.uint8).reshape(5, 11, 1)
    save_volume(Volume(GridGeometry((5, 11, 1)), VolumeKind.LABEL, labels), tmp_path / 'in' / 'c1_label.nii.gz')
    summary = commands.cmd_merge_labels(tmp_path / 'in', tmp_path / 'out', pipeline_config)
    assert summary.exit_code == 0
    details = summary.results[0].details
    assert (details['labels_before'], details['labels_after'], details['foreground_voxels']) == (54, 45, 54)
    merged = load_volume(tmp_path / 'out' / 'c1_label.nii.gz').voxels
    assert set(np.unique(merged).tolist()) == set(range(46))


def test_main_emit_plan_to_file(tmp_path):
    path = tmp_path / 'gtvs_plan.json'
    assert main(['--task', 'gtvs', '--log-dir', '', 'emit-plan', '--output', str(path)]) == 0
    document = json.loads(path.read_text(encoding='utf-8'))
    assert document['plan']['epochs'] == 700
    assert document['plan']['patch_size'] == [80, 192, 128]


def test_main_emit_plan_to_stdout(capsys):
    assert main(['--log-dir', '', 'emit-plan']) == 0
    document = json.loads(capsys.readouterr().out)
    assert document['task'] == 'oars'
    assert document['plan']['epochs'] == 2500


def test_main_phantom_and_evaluate(tmp_path):
    out = tmp_path / 'ph'
    assert main(['--log-dir', '', 'phantom', str(out), '--dims', '32', '32', '16', '--cases', '2']) == 0
    assert main(['--log-dir', '', 'evaluate', str(out / 'oracle'), str(out), str(tmp_path / 'eval')]) == 0
    table = pd.read_csv(tmp_path / 'eval' / 'metrics.csv')
    assert list(table.columns) == ['case_id', 'label_id', 'label_name', 'dice', 'precision', 'recall', 'nsd']
    assert (table['dice'] == 1.0).all()
    assert (tmp_path / 'eval' / 'evaluate_summary.csv').exists()


def test_main_missing_input_exits_nonzero(tmp_path, capsys):
    missing = tmp_path / 'nowhere'
    assert main(['--log-dir', '', 'preprocess', str(missing), str(tmp_path / 'out')]) == 2
    assert str(missing) in capsys.readouterr().out


def test_main_writes_run_log(tmp_path):
    logs = tmp_path / 'logs'
    assert main(['--log-dir', str(logs), 'emit-plan', '--output', str(tmp_path / 'plan.json')]) == 0
    assert len(list(logs.glob('npc_*.log'))) == 1


def test_flags_override_config_file(tmp_path):
    path = PipelineConfig(task='gtvs', tau_mm=3.0, workers=2).save(str(tmp_path / 'cfg.json'))
    args = build_parser().parse_args([
        '--config', path, '--workers', '4', 'crop', 'in', 'out', '--margin', '7', '--connectivity', '6',
    ])
    cfg = build_config(args)
    assert cfg.task == 'gtvs'
    assert cfg.tau_mm == 3.0
    assert cfg.workers == 4
    assert (cfg.crop.margin_px, cfg.crop.connectivity) == (7, 6)


def test_zscore_foreground_flag_implies_zscore():
    args = build_parser().parse_args(['preprocess', 'in', 'out', '--zscore-foreground'])
    cfg = build_config(args)
    assert cfg.zscore and cfg.zscore_foreground

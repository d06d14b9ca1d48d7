#!/usr/bin/env python3
"""
End-to-end run on phantom cases

phantom -> preprocess -> crop -> threshold oracle on the cropped CT ->
restore -> evaluate against the generated labels
"""
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from src.cli import commands
from src.core.config import PipelineConfig
from src.integrations.volume_io import load_volume, save_volume
from src.preprocessing.roi_crop import load_record
from src.simulation.phantom import mini_head_neck_preset, oracle_rules, threshold_segment
from src.utils.helpers import case_path

DIMS = (160, 160, 32)
MARGIN = 15
FULL_DIMS = (256, 256, 128)


def run_pipeline(root: Path, noise_sigma: float = 0.0, cases: int = 2, dims=DIMS):
    """Run every stage into subfolders of root; returns (report, records, spec)"""
    cfg = PipelineConfig(task='oars', workers=1)
    cfg.crop.margin_px = MARGIN
    spec = mini_head_neck_preset(dims=dims, noise_sigma=noise_sigma, seed=11)

    steps = [
        commands.cmd_phantom(root / 'raw', cfg, spec, cases=cases, oracle=False),
        commands.cmd_preprocess(root / 'raw', root / 'pre', cfg),
        commands.cmd_crop(root / 'pre', root / 'crop', cfg, roi_dir=root / 'raw'),
    ]
    for summary in steps:
        assert summary.exit_code == 0, [r.message for r in summary.errors]

    records = {}
    for i in range(cases):
        case_id = f'phantom_{i:03d}'
        case_spec = spec.with_noise(spec.noise_sigma, seed=spec.seed + i)
        ct = load_volume(case_path(root / 'crop', cfg.layout['contrast'], case_id))
        prediction = threshold_segment(ct, oracle_rules(case_spec))
        save_volume(prediction, case_path(root / 'pred_crop', cfg.layout['label'], case_id))
        records[case_id] = load_record(case_path(root / 'crop', cfg.layout['record'], case_id))

    restored = commands.cmd_restore(root / 'pred_crop', root / 'crop', root / 'pred', cfg)
    assert restored.exit_code == 0
    summary, report = commands.cmd_evaluate(root / 'pred', root / 'raw', root / 'eval', cfg)
    assert summary.exit_code == 0
    return report, records, spec


def test_noiseless_pipeline_is_exact(tmp_path):
    report, records, _ = run_pipeline(tmp_path)

    assert len(report.scores) == 2 * 4
    for score in report.scores:
        assert score.dice == 1.0, (score.case_id, score.label_name)
        assert score.nsd == 1.0, (score.case_id, score.label_name)


def test_crop_box_is_body_extent_plus_margin(tmp_path):
    _, records, _ = run_pipeline(tmp_path, cases=1)

    body = load_volume(tmp_path / 'raw' / 'phantom_000_body.nii.gz').voxels
    labels = load_volume(tmp_path / 'raw' / 'phantom_000_label.nii.gz').voxels
    occupied = np.nonzero((body > 0) | (labels > 0))
    record = records['phantom_000']

    for axis in (0, 1):
        lo = max(int(occupied[axis].min()) - MARGIN, 0)
        hi = min(int(occupied[axis].max()) + MARGIN, DIMS[axis] - 1)
        assert (record.bbox.lo[axis], record.bbox.hi[axis]) == (lo, hi)
    # x keeps room on both sides, so the margin is applied in full
    assert record.bbox.extents[0] == int(occupied[0].max()) - int(occupied[0].min()) + 1 + 2 * MARGIN
    assert (record.bbox.lo[2], record.bbox.hi[2]) == (0, DIMS[2] - 1)
    assert record.margin_used == MARGIN
    assert np.prod(record.bbox.extents) < np.prod(DIMS)


def test_noisy_pipeline_keeps_high_dice(tmp_path):
    report, _, _ = run_pipeline(tmp_path, noise_sigma=20.0)

    assert report.aggregates.overall['dice'].mean >= 0.99
    assert min(s.dice for s in report.scores) >= 0.95


def test_full_size_phantom_runs_within_two_minutes(tmp_path):
    started = time.perf_counter()
    report, records, _ = run_pipeline(tmp_path, cases=1, dims=FULL_DIMS)
    elapsed = time.perf_counter() - started

    assert elapsed < 120.0, f'pipeline took {elapsed:.1f} s'
    assert len(report.scores) == 4
    for score in report.scores:
        assert (score.dice, score.nsd) == (1.0, 1.0), (score.label_name, score.dice, score.nsd)
    assert records['phantom_000'].bbox.extents[2] == FULL_DIMS[2]


def main():
    print('=' * 70)
    print('PHANTOM PIPELINE CHECK')
    print('=' * 70)
    with tempfile.TemporaryDirectory() as tmp:
        for sigma in (0.0, 20.0):
            print(f'\n1. Running the pipeline with noise sigma {sigma:g} HU...')
            report, records, _ = run_pipeline(Path(tmp) / f'sigma_{sigma:g}', noise_sigma=sigma)
            overall = report.aggregates.overall
            print(f'   ✓ Dice {overall["dice"].mean:.4f}, NSD {overall["nsd"].mean:.4f} '
                  f'over {len(report.scores)} structure scores')
            for case_id, record in records.items():
                print(f'   ✓ {case_id}: crop {record.bbox.extents}')
    return 0


if __name__ == '__main__':
    sys.exit(main())

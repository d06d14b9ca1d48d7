"""
Pipeline commands

Each cmd_* function processes every case of an input directory and returns
a BatchSummary; per-case workers are module-level so they can run in a
process pool. File names follow PipelineConfig.layout.
"""
import logging
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.analytics.label_ops import LabelSchema, apply_merge, inventory, label_names, schema_for_task
from src.analytics.metrics import MetricsReport, build_report, evaluate_case
from src.cli.batch import BatchSummary, CaseResult, run_cases
from src.core.config import PipelineConfig
from src.core.errors import CaseSetMismatchError, ParameterError, RecordMismatchError
from src.core.volume import Volume, VolumeKind
from src.integrations.volume_io import load_volume, save_volume, validate_pair
from src.preprocessing.intensity import Modality, Task, TaskModalityKey, harmonize, window_for
from src.preprocessing.roi_crop import (
    body_mask_threshold,
    crop,
    crop_ratio,
    load_record,
    locate_roi,
    restore,
    save_record,
)
from src.reporting.report_generator import ReportGenerator
from src.reporting.training_plan import emit_plan
from src.simulation.phantom import PhantomSpec, generate, mini_head_neck_preset, oracle_rules, threshold_segment
from src.utils.helpers import case_path, discover_cases

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _require_dir(path: PathLike) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f'input directory not found: {path}')
    return path


def _cases(directory: PathLike, pattern: str) -> Dict[str, Path]:
    cases = discover_cases(_require_dir(directory), pattern)
    if not cases:
        LOGGER.warning(f'no files matching {pattern!r} in {directory}')
    return cases


def _schema(cfg: PipelineConfig) -> Optional[LabelSchema]:
    return schema_for_task(cfg.task, cfg.labels_schema) if cfg.labels_schema else None


# preprocess

def _preprocess_case(case_id: str, paths: Tuple[Path, Path, Optional[Path]], cfg: PipelineConfig,
                     output_dir: Path) -> CaseResult:
    contrast_path, plain_path, label_path = paths
    if not plain_path.exists():
        raise FileNotFoundError(f'plain CT not found: {plain_path}')
    case = validate_pair(load_volume(contrast_path), load_volume(plain_path), case_id)

    foreground = None
    if cfg.zscore and cfg.zscore_foreground:
        foreground = body_mask_threshold(case.contrast_ct, cfg.crop.threshold_hu)
    processed, windows = harmonize(
        case, Task(cfg.task), cfg.window_table(), standardize=cfg.zscore, foreground=foreground
    )

    outputs = [
        str(save_volume(processed.contrast_ct, case_path(output_dir, cfg.layout['contrast'], case_id))),
        str(save_volume(processed.plain_ct, case_path(output_dir, cfg.layout['plain'], case_id))),
    ]
    if label_path is not None and label_path.exists():
        labels = load_volume(label_path, kind=VolumeKind.LABEL)
        outputs.append(str(save_volume(labels, case_path(output_dir, cfg.layout['label'], case_id))))

    details = {f'window_{m}': f'[{w.lo:g}, {w.hi:g}]' for m, w in windows.items()}
    details['zscore'] = cfg.zscore
    return CaseResult(case_id, outputs=outputs, details=details)


def cmd_preprocess(input_dir: PathLike, output_dir: PathLike, cfg: PipelineConfig) -> BatchSummary:
    """
    Window (and optionally z-score) both modalities of every case

    Label files found next to the CTs are copied unchanged so later steps
    find everything in one directory.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    items = [
        (case_id, (path,
                   case_path(input_dir, cfg.layout['plain'], case_id),
                   case_path(input_dir, cfg.layout['label'], case_id)))
        for case_id, path in _cases(input_dir, cfg.layout['contrast']).items()
    ]
    worker = partial(_preprocess_case, cfg=cfg, output_dir=output_dir)
    return run_cases('preprocess', worker, items, cfg.workers)


# crop

def _air_floor(case_id: str, roi_source: Volume, cfg: PipelineConfig) -> Optional[float]:
    """Window floor of the task's contrast CT when roi_source was clamped to it, None for raw CT"""
    floor = window_for(TaskModalityKey(Task(cfg.task), Modality.CONTRAST), cfg.window_table()).lo
    if float(np.min(roi_source.voxels)) < floor:
        return None
    if cfg.zscore:
        raise ParameterError(
            f'{case_id}: z-scored volumes carry no HU scale, pass roi_dir with the unwindowed cases'
        )
    return floor


def _crop_case(case_id: str, paths: Dict[str, Path], cfg: PipelineConfig, output_dir: Path) -> CaseResult:
    roi_source = load_volume(paths['roi'])
    air_floor = _air_floor(case_id, roi_source, cfg) if paths['roi'] == paths['contrast'] else None
    bbox, _ = locate_roi(
        roi_source,
        threshold=cfg.crop.threshold_hu,
        margin=cfg.crop.margin_px,
        connectivity=cfg.crop.connectivity,
        full_z=cfg.crop.full_z,
        air_floor=air_floor,
    )
    if tuple(bbox.extents) == tuple(roi_source.dims):
        LOGGER.warning(f'{case_id}: body mask spans the whole grid, the crop keeps every voxel')

    outputs = []
    record = None
    for role in ('contrast', 'plain', 'label'):
        path = paths.get(role)
        if path is None or not path.exists():
            if role != 'label':
                raise FileNotFoundError(f'{role} volume not found: {path}')
            continue
        volume = load_volume(path, kind=VolumeKind.LABEL if role == 'label' else None)
        cropped, record = crop(volume, bbox, case_id=case_id, margin_used=cfg.crop.margin_px)
        outputs.append(str(save_volume(cropped, case_path(output_dir, cfg.layout[role], case_id))))

    outputs.append(str(save_record(record, case_path(output_dir, cfg.layout['record'], case_id))))
    ratio = crop_ratio(record)
    LOGGER.info(
        f'{case_id}: cropped to {record.bbox.extents}, keeps {ratio["x"]:.2f} of width, '
        f'{ratio["y"]:.2f} of height'
    )
    details = {
        'bbox_lo': str(list(record.bbox.lo)),
        'bbox_hi': str(list(record.bbox.hi)),
        'ratio_x': round(ratio['x'], 4),
        'ratio_y': round(ratio['y'], 4),
        'ratio_voxels': round(ratio['voxels'], 4),
    }
    return CaseResult(case_id, outputs=outputs, details=details)


def cmd_crop(input_dir: PathLike, output_dir: PathLike, cfg: PipelineConfig,
             roi_dir: Optional[PathLike] = None) -> BatchSummary:
    """
    Crop every case to the head-and-neck region and write its CropRecord

    Args:
        input_dir: preprocessed cases
        output_dir: destination of cropped volumes and records
        cfg: pipeline configuration
        roi_dir: directory holding the unwindowed contrast CTs the body mask
            is computed from; defaults to input_dir, where voxels clamped to
            the contrast window floor count as air
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    roi_dir = Path(roi_dir) if roi_dir else input_dir
    items = []
    for case_id, path in _cases(input_dir, cfg.layout['contrast']).items():
        items.append((case_id, {
            'roi': case_path(roi_dir, cfg.layout['contrast'], case_id),
            'contrast': path,
            'plain': case_path(input_dir, cfg.layout['plain'], case_id),
            'label': case_path(input_dir, cfg.layout['label'], case_id),
        }))
    worker = partial(_crop_case, cfg=cfg, output_dir=output_dir)
    return run_cases('crop', worker, items, cfg.workers)


# restore

def _restore_case(case_id: str, paths: Tuple[Path, Path], cfg: PipelineConfig, output_dir: Path) -> CaseResult:
    pred_path, record_path = paths
    if not record_path.exists():
        raise RecordMismatchError(f'no crop record for case {case_id}: {record_path}')
    record = load_record(record_path)
    if record.case_id and record.case_id != case_id:
        raise RecordMismatchError(f'record {record_path.name} belongs to case {record.case_id}')
    restored = restore(load_volume(pred_path, kind=VolumeKind.LABEL), record)
    out = save_volume(restored, case_path(output_dir, cfg.layout['label'], case_id))
    return CaseResult(case_id, outputs=[str(out)], details={'dims': str(list(restored.dims))})


def cmd_restore(pred_dir: PathLike, records_dir: PathLike, output_dir: PathLike,
                cfg: PipelineConfig) -> BatchSummary:
    """Paste every cropped prediction back onto its original grid"""
    pred_dir, records_dir, output_dir = Path(pred_dir), Path(records_dir), Path(output_dir)
    _require_dir(records_dir)
    items = [
        (case_id, (path, case_path(records_dir, cfg.layout['record'], case_id)))
        for case_id, path in _cases(pred_dir, cfg.layout['label']).items()
    ]
    worker = partial(_restore_case, cfg=cfg, output_dir=output_dir)
    return run_cases('restore', worker, items, cfg.workers)


# merge-labels

def _merge_case(case_id: str, path: Path, cfg: PipelineConfig, schema: LabelSchema, output_dir: Path) -> CaseResult:
    volume = load_volume(path, kind=VolumeKind.LABEL)
    before = inventory(volume)
    merged = apply_merge(volume, schema.merge_map())
    after = inventory(merged)
    if after.total != before.total:
        raise RuntimeError(f'merge changed the foreground voxel count ({before.total} -> {after.total})')
    out = save_volume(merged, case_path(output_dir, cfg.layout['label'], case_id))
    return CaseResult(case_id, outputs=[str(out)], details={
        'labels_before': len(before.entries),
        'labels_after': len(after.entries),
        'foreground_voxels': after.total,
    })


def cmd_merge_labels(input_dir: PathLike, output_dir: PathLike, cfg: PipelineConfig) -> BatchSummary:
    """Fold substructure labels into their parents using the task's label schema"""
    schema = schema_for_task(cfg.task, cfg.labels_schema)
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    items = list(_cases(input_dir, cfg.layout['label']).items())
    worker = partial(_merge_case, cfg=cfg, schema=schema, output_dir=output_dir)
    return run_cases('merge-labels', worker, items, cfg.workers)


# evaluate

def _evaluate_case(case_id: str, paths: Tuple[Path, Path], cfg: PipelineConfig,
                   schema: Optional[LabelSchema]) -> CaseResult:
    pred = load_volume(paths[0], kind=VolumeKind.LABEL)
    ref = load_volume(paths[1], kind=VolumeKind.LABEL)
    if schema is not None:
        merge_map = schema.merge_map()
        pred = apply_merge(pred, merge_map)
        ref = apply_merge(ref, merge_map)
        labels = sorted(schema.targets)
        names = label_names(schema)
    else:
        labels = sorted(set(inventory(pred).entries) | set(inventory(ref).entries))
        names = None
    scores = evaluate_case(pred, ref, labels, tau_mm=cfg.tau_mm, case_id=case_id, names=names)
    mean_dice = float(np.mean([s.dice for s in scores])) if scores else 1.0
    return CaseResult(case_id, details={'scores': scores, 'structures': len(scores), 'mean_dice': mean_dice})


def cmd_evaluate(pred_dir: PathLike, ref_dir: PathLike, output_dir: PathLike, cfg: PipelineConfig,
                 html: bool = True) -> Tuple[BatchSummary, Optional[MetricsReport]]:
    """
    Score predictions against references and write the metrics report

    Both directories must hold the same case ids. With a label schema
    configured, both sides are merged first and every schema target is
    scored; otherwise every label present in either volume is scored.

    Returns:
        Batch summary and the report (None when no case could be scored)
    """
    pred_cases = _cases(pred_dir, cfg.layout['label'])
    ref_cases = _cases(ref_dir, cfg.layout['label'])
    only_pred = sorted(set(pred_cases) - set(ref_cases))
    only_ref = sorted(set(ref_cases) - set(pred_cases))
    if only_pred or only_ref:
        raise CaseSetMismatchError(only_pred, only_ref)

    schema = _schema(cfg)
    items = [(case_id, (pred_cases[case_id], ref_cases[case_id])) for case_id in pred_cases]
    worker = partial(_evaluate_case, cfg=cfg, schema=schema)
    summary = run_cases('evaluate', worker, items, cfg.workers)

    scores: List = []
    for result in summary.results:
        scores.extend(result.details.pop('scores', []))
    if not scores:
        LOGGER.error('no structure could be scored, no report written')
        return summary, None

    report = build_report(scores, cfg.tau_mm)
    paths = ReportGenerator().write_all(report, output_dir, html=html)
    for result in summary.results:
        if result.ok:
            result.outputs = [paths['csv']]
    return summary, report


# phantom

def cmd_phantom(output_dir: PathLike, cfg: PipelineConfig, spec: Optional[PhantomSpec] = None,
                cases: int = 1, oracle: bool = True) -> BatchSummary:
    """
    Write phantom cases in the configured layout

    Case i uses seed spec.seed + i. Alongside the two CTs and the label map
    a body mask is written, and with `oracle` the threshold segmentation of
    the contrast CT goes to <output_dir>/oracle.
    """
    output_dir = Path(output_dir)
    spec = spec or mini_head_neck_preset()
    spec.save(output_dir / 'phantom_spec.json')
    results = []
    for i in range(cases):
        case_id = f'phantom_{i:03d}'
        case_spec = spec.with_noise(spec.noise_sigma, seed=spec.seed + i)
        volumes = generate(case_spec)
        outputs = [
            save_volume(volumes.contrast_ct, case_path(output_dir, cfg.layout['contrast'], case_id)),
            save_volume(volumes.plain_ct, case_path(output_dir, cfg.layout['plain'], case_id)),
            save_volume(volumes.labels, case_path(output_dir, cfg.layout['label'], case_id)),
            save_volume(volumes.body_mask, output_dir / f'{case_id}_body.nii.gz'),
        ]
        if oracle:
            prediction = threshold_segment(volumes.contrast_ct, oracle_rules(case_spec))
            outputs.append(save_volume(prediction, case_path(output_dir / 'oracle', cfg.layout['label'], case_id)))
        results.append(CaseResult(case_id, outputs=[str(p) for p in outputs], details={'seed': case_spec.seed}))
        LOGGER.info(f'{case_id}: phantom {case_spec.dims} written to {output_dir}')
    return BatchSummary('phantom', results)


# emit-plan

def cmd_emit_plan(task: str, output_path: Optional[PathLike] = None, cfg: Optional[PipelineConfig] = None) -> str:
    """Training plan JSON of a task; written to output_path when given"""
    windows = cfg.window_table() if cfg is not None else None
    return emit_plan(task, output_path, windows=windows)

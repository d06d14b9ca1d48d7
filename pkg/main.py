"""
Command-line entry point for the NPC contouring toolkit
"""
import argparse
import logging
import os
import sys
from datetime import datetime
from typing import List, Optional

from src.cli import commands
from src.core import config
from src.core.config import PipelineConfig, load_windows_override
from src.core.errors import PipelineError
from src.simulation.phantom import PhantomSpec, mini_head_neck_preset

LOGGER = logging.getLogger('npc')


def setup_logging(level: str, log_dir: Optional[str]) -> Optional[str]:
    """Console logging plus a per-run log file in log_dir (skipped when log_dir is empty)"""
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True,
    )
    if not log_dir:
        return None
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, f'npc_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log')
    handler = logging.FileHandler(log_path, encoding='utf-8')
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    logging.getLogger().addHandler(handler)
    return log_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='npc',
        description='Preprocess, crop, restore and evaluate bi-modal head-and-neck CT segmentations',
    )
    parser.add_argument('--config', help='pipeline config JSON')
    parser.add_argument('--workers', type=int, help='case-level worker processes')
    parser.add_argument('--task', choices=config.TASKS, help='oars or gtvs')
    parser.add_argument('--log-level', default=config.LOG_LEVEL, help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--log-dir', default=config.LOG_DIR, help='run log folder, empty to disable')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', help='clamp each modality to its window, optional z-score')
    p.add_argument('input_dir')
    p.add_argument('output_dir')
    p.add_argument('--windows', help='JSON window table override')
    p.add_argument('--zscore', action='store_true', default=None, help='z-score after windowing')
    p.add_argument('--zscore-foreground', action='store_true', default=None,
                   help='z-score statistics from the body mask only')

    p = sub.add_parser('crop', help='crop cases to the head-and-neck region')
    p.add_argument('input_dir')
    p.add_argument('output_dir')
    p.add_argument('--roi-dir', help='unwindowed cases the body mask is computed from')
    p.add_argument('--margin', type=int, help='in-plane bbox margin in voxels')
    p.add_argument('--threshold', type=float, help='body threshold in HU')
    p.add_argument('--connectivity', type=int, choices=(6, 26))

    p = sub.add_parser('restore', help='paste cropped predictions back onto the full grid')
    p.add_argument('pred_dir')
    p.add_argument('records_dir')
    p.add_argument('output_dir')

    p = sub.add_parser('merge-labels', help='merge substructure labels into their parents')
    p.add_argument('input_dir')
    p.add_argument('output_dir')
    p.add_argument('--schema', help='label schema JSON')

    p = sub.add_parser('evaluate', help='score predictions against references')
    p.add_argument('pred_dir')
    p.add_argument('ref_dir')
    p.add_argument('output_dir')
    p.add_argument('--tau', type=float, help='NSD tolerance in mm')
    p.add_argument('--schema', help='label schema JSON, merges both sides before scoring')
    p.add_argument('--no-html', action='store_true', help='skip the HTML summary')

    p = sub.add_parser('phantom', help='write synthetic phantom cases')
    p.add_argument('output_dir')
    p.add_argument('--spec', help='PhantomSpec JSON; the mini head-neck preset otherwise')
    p.add_argument('--dims', type=int, nargs=3, help='preset grid size')
    p.add_argument('--cases', type=int, default=1)
    p.add_argument('--noise', type=float, help='noise sigma in HU')
    p.add_argument('--seed', type=int)
    p.add_argument('--no-oracle', action='store_true', help='skip oracle predictions')

    p = sub.add_parser('emit-plan', help='write the training plan of --task')
    p.add_argument('--output', help='output JSON path, stdout otherwise')
    return parser


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Environment defaults < --config file < command-line flags"""
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.task:
        cfg.task = args.task
    if args.workers is not None:
        cfg.workers = args.workers

    overrides = {
        'zscore': getattr(args, 'zscore', None),
        'zscore_foreground': getattr(args, 'zscore_foreground', None),
        'tau_mm': getattr(args, 'tau', None),
        'labels_schema': getattr(args, 'schema', None),
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if cfg.zscore_foreground:
        cfg.zscore = True

    crop = {
        'margin_px': getattr(args, 'margin', None),
        'threshold_hu': getattr(args, 'threshold', None),
        'connectivity': getattr(args, 'connectivity', None),
    }
    for name, value in crop.items():
        if value is not None:
            setattr(cfg.crop, name, value)
    if getattr(args, 'windows', None):
        cfg.windows.update(load_windows_override(args.windows))

    cfg.validate()
    return cfg


def _report(summary) -> int:
    ok = len(summary.results) - len(summary.errors)
    print(f'   ✓ {ok} of {len(summary.results)} cases processed')
    for result in summary.errors:
        print(f'   ✗ {result.case_id}: {result.message}')
    return summary.exit_code


def run(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if args.command != 'emit-plan':
        print(f'npc {args.command} (task {cfg.task}, {cfg.workers} worker(s))')

    if args.command == 'preprocess':
        print(f'\n1. Windowing cases in {args.input_dir}...')
        summary = commands.cmd_preprocess(args.input_dir, args.output_dir, cfg)
        summary.write(args.output_dir)
        return _report(summary)

    if args.command == 'crop':
        print(f'\n1. Cropping cases in {args.input_dir}...')
        summary = commands.cmd_crop(args.input_dir, args.output_dir, cfg, roi_dir=args.roi_dir)
        summary.write(args.output_dir)
        return _report(summary)

    if args.command == 'restore':
        print(f'\n1. Restoring predictions in {args.pred_dir}...')
        summary = commands.cmd_restore(args.pred_dir, args.records_dir, args.output_dir, cfg)
        summary.write(args.output_dir)
        return _report(summary)

    if args.command == 'merge-labels':
        print(f'\n1. Merging labels in {args.input_dir}...')
        summary = commands.cmd_merge_labels(args.input_dir, args.output_dir, cfg)
        summary.write(args.output_dir)
        return _report(summary)

    if args.command == 'evaluate':
        print(f'\n1. Scoring {args.pred_dir} against {args.ref_dir}...')
        summary, report = commands.cmd_evaluate(
            args.pred_dir, args.ref_dir, args.output_dir, cfg, html=not args.no_html
        )
        summary.write(args.output_dir)
        code = _report(summary)
        if report is None:
            print('   ✗ No scores, report not written')
            return 1
        overall = report.aggregates.overall
        high, mid, low = report.bins.as_tuple()
        print('\n2. Summary')
        print(f'   Dice {overall["dice"].mean:.4f} ± {overall["dice"].std:.4f} (median {overall["dice"].median:.4f})')
        print(f'   NSD  {overall["nsd"].mean:.4f} ± {overall["nsd"].std:.4f} at {report.tau_mm:g} mm')
        print(f'   Dice ranges: {high} >= 0.90, {mid} in [0.80, 0.90), {low} < 0.80')
        return code

    if args.command == 'phantom':
        if args.spec:
            spec = PhantomSpec.load(args.spec)
        else:
            spec = mini_head_neck_preset(dims=args.dims) if args.dims else mini_head_neck_preset()
        if args.noise is not None or args.seed is not None:
            spec = spec.with_noise(
                spec.noise_sigma if args.noise is None else args.noise,
                seed=args.seed,
            )
        print(f'\n1. Generating {args.cases} phantom case(s) of {list(spec.dims)} voxels...')
        summary = commands.cmd_phantom(args.output_dir, cfg, spec, cases=args.cases, oracle=not args.no_oracle)
        return _report(summary)

    if args.command == 'emit-plan':
        text = commands.cmd_emit_plan(cfg.task, args.output, cfg)
        if args.output:
            print(f'   ✓ Training plan written to {args.output}')
        else:
            print(text, end='')
        return 0

    raise ValueError(f'unknown command {args.command!r}')


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_dir)
    try:
        return run(args)
    except (PipelineError, OSError) as e:
        LOGGER.error(str(e))
        print(f'\n✗ Error: {e}')
        return 2


if __name__ == '__main__':
    sys.exit(main())

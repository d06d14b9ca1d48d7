"""
Segmentation metrics

Voxel-overlap scores (Dice, precision, recall) and the Normalized Surface
Dice over voxel-center surfaces, plus the aggregation used in reports:
mean, population std and median per structure and overall, and the three
Dice ranges x >= 0.90, 0.90 > x >= 0.80, 0.80 > x.

Empty-mask conventions:
    both masks empty  -> dice = precision = recall = nsd = 1.0, flagged
    one mask empty    -> 0.0 for every score with an empty denominator
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.core import config
from src.core.errors import EmptyInputError, EmptyMaskError, GeometryError, ParameterError
from src.core.volume import AXES, Volume, VolumeKind, require_kind

LOGGER = logging.getLogger(__name__)

GRID_TOLERANCE_MM = 1e-3
SCORE_FIELDS = ('dice', 'precision', 'recall', 'nsd')
BIN_NAMES = ('high', 'mid', 'low')

_FACES = ndimage.generate_binary_structure(3, 1)

CONVENTIONS = {
    'both_empty': 'dice = precision = recall = nsd = 1.0, flagged as empty',
    'one_empty': 'scores with an empty denominator are 0.0',
    'surface': 'foreground voxels with a background or out-of-grid 6-neighbor',
    'distance': 'voxel-center Euclidean distance in mm using voxel spacing',
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class StructureScore:
    """Scores of one structure in one case; `empty` marks absent-from-both structures"""
    label_id: int
    dice: float
    precision: float
    recall: float
    nsd: float
    tau_mm: float
    case_id: str = ''
    label_name: str = ''
    empty: bool = False

    def __post_init__(self):
        for name in SCORE_FIELDS:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f'{name} must lie in [0, 1], got {value}')
        if not self.tau_mm > 0:
            raise ParameterError(f'tau_mm must be > 0, got {self.tau_mm}')

    @property
    def sort_key(self) -> Tuple[str, int]:
        return self.case_id, self.label_id

    def to_dict(self) -> Dict:
        return {
            'case_id': self.case_id,
            'label_id': self.label_id,
            'label_name': self.label_name,
            'dice': self.dice,
            'precision': self.precision,
            'recall': self.recall,
            'nsd': self.nsd,
            'tau_mm': self.tau_mm,
            'empty': self.empty,
        }


@dataclass(frozen=True)
class SummaryStats:
    """Box-plot summary of one metric"""
    count: int
    mean: float
    std: float
    median: float
    q1: float
    q3: float
    min: float
    max: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> 'SummaryStats':
        data = np.sort(np.asarray(values, dtype=np.float64))
        if data.size == 0:
            raise EmptyInputError('cannot summarize an empty sequence')
        q1, median, q3 = np.percentile(data, [25, 50, 75])
        return cls(
            count=int(data.size),
            mean=float(data.mean()),
            std=float(data.std()),
            median=float(median),
            q1=float(q1),
            q3=float(q3),
            min=float(data[0]),
            max=float(data[-1]),
        )

    def to_dict(self) -> Dict:
        return {
            'count': self.count, 'mean': self.mean, 'std': self.std, 'median': self.median,
            'q1': self.q1, 'q3': self.q3, 'min': self.min, 'max': self.max,
        }


@dataclass(frozen=True)
class DiceBins:
    high: int = 0
    mid: int = 0
    low: int = 0

    @property
    def total(self) -> int:
        return self.high + self.mid + self.low

    def as_tuple(self) -> Tuple[int, int, int]:
        return self.high, self.mid, self.low

    def to_dict(self) -> Dict:
        hi_edge, mid_edge = config.METRICS_CONFIG['dice_bins']
        return {
            f'dice >= {hi_edge:.2f}': self.high,
            f'{mid_edge:.2f} <= dice < {hi_edge:.2f}': self.mid,
            f'dice < {mid_edge:.2f}': self.low,
        }


@dataclass(frozen=True)
class Aggregates:
    overall: Dict[str, SummaryStats]
    per_structure: Dict[int, Dict[str, SummaryStats]]
    bins: DiceBins
    structure_bins: DiceBins
    poor_structures: Tuple[int, ...]
    empty_flagged: int

    def to_dict(self) -> Dict:
        return {
            'overall': {m: s.to_dict() for m, s in self.overall.items()},
            'per_structure': {
                str(label): {m: s.to_dict() for m, s in stats.items()}
                for label, stats in sorted(self.per_structure.items())
            },
            'bins': self.bins.to_dict(),
            'structure_bins': self.structure_bins.to_dict(),
            'poor_structures': list(self.poor_structures),
            'empty_flagged': self.empty_flagged,
        }


@dataclass(frozen=True)
class MetricsReport:
    scores: Tuple[StructureScore, ...]
    aggregates: Aggregates
    tau_mm: float
    conventions: Dict[str, str] = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def bins(self) -> DiceBins:
        return self.aggregates.bins

    def to_dict(self) -> Dict:
        return {
            'tau_mm': self.tau_mm,
            'conventions': dict(self.conventions),
            'scores': [s.to_dict() for s in self.scores],
            'aggregates': self.aggregates.to_dict(),
        }


def _check_same_grid(pred: Volume, ref: Volume) -> None:
    gp, gr = pred.geometry, ref.geometry
    for axis, dp, dr in zip(AXES, gp.dims, gr.dims):
        if dp != dr:
            raise GeometryError(f'dims differ on axis {axis} ({dp} vs {dr})', axis=axis)
    for axis in range(3):
        if abs(gp.spacing[axis] - gr.spacing[axis]) > GRID_TOLERANCE_MM:
            raise GeometryError(
                f'spacing differs on axis {AXES[axis]} ({gp.spacing[axis]} vs {gr.spacing[axis]})',
                axis=AXES[axis],
            )
        if abs(gp.origin[axis] - gr.origin[axis]) > GRID_TOLERANCE_MM:
            raise GeometryError(
                f'origin differs on axis {AXES[axis]} ({gp.origin[axis]} vs {gr.origin[axis]})',
                axis=AXES[axis],
            )
        column_deviation = max(abs(gp.orientation[row][axis] - gr.orientation[row][axis]) for row in range(3))
        if column_deviation > GRID_TOLERANCE_MM:
            raise GeometryError(f'orientation differs on axis {AXES[axis]}', axis=AXES[axis])


def _foreground(volume: Volume) -> np.ndarray:
    return np.asarray(volume.voxels) != 0


def _count(p: np.ndarray, r: np.ndarray) -> ConfusionCounts:
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p)) - tp
    fn = int(np.count_nonzero(r)) - tp
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def confusion(pred: Volume, ref: Volume) -> ConfusionCounts:
    """Voxel-wise true/false positive/negative counts of two binary masks"""
    _check_same_grid(pred, ref)
    return _count(_foreground(pred), _foreground(ref))


def overlap_scores(counts: ConfusionCounts) -> Tuple[float, float, float]:
    """
    Dice, precision and recall of a confusion count

    Returns:
        (dice, precision, recall)
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    dice = 2.0 * tp / (2 * tp + fp + fn)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return dice, precision, recall


def _distance_to(foreground: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    if foreground.all():
        return np.zeros(foreground.shape, dtype=np.float64)
    return ndimage.distance_transform_edt(~foreground, sampling=spacing)


def edt(mask: Volume) -> Volume:
    """
    Exact Euclidean distance (mm) from every voxel center to the nearest foreground voxel center

    Anisotropic voxel spacing is honoured; foreground voxels read 0.
    """
    foreground = _foreground(mask)
    if not foreground.any():
        raise EmptyMaskError('distance transform needs at least one foreground voxel')
    distances = _distance_to(foreground, mask.spacing)
    return mask.with_voxels(distances, kind=VolumeKind.INTENSITY)


def _surface_of(foreground: np.ndarray) -> np.ndarray:
    interior = ndimage.binary_erosion(foreground, structure=_FACES, border_value=0)
    return foreground & ~interior


def surface(mask: Volume) -> Volume:
    """Foreground voxels with at least one 6-neighbor in the background or outside the grid"""
    return mask.with_voxels(_surface_of(_foreground(mask)).astype(np.uint8), kind=VolumeKind.LABEL)


def _union_box(*masks: np.ndarray) -> Optional[Tuple[slice, slice, slice]]:
    """Bounding box of the union of the masks grown by one voxel, or None if all are empty"""
    union = np.logical_or.reduce(masks)
    coords = np.nonzero(union)
    if coords[0].size == 0:
        return None
    return tuple(
        slice(max(int(c.min()) - 1, 0), min(int(c.max()) + 2, n))
        for c, n in zip(coords, union.shape)
    )


def _nsd_arrays(p: np.ndarray, r: np.ndarray, spacing: Sequence[float], tau_mm: float) -> float:
    box = _union_box(p, r)
    if box is None:
        return 1.0
    # Outside the box every voxel is background, so surfaces and distances
    # computed inside it equal the full-grid ones
    p, r = p[box], r[box]
    sp = _surface_of(p)
    sr = _surface_of(r)
    n_p = int(np.count_nonzero(sp))
    n_r = int(np.count_nonzero(sr))
    if n_p == 0 or n_r == 0:
        return 0.0

    d_to_ref = _distance_to(sr, spacing)
    d_to_pred = _distance_to(sp, spacing)
    close_p = int(np.count_nonzero(d_to_ref[sp] <= tau_mm))
    close_r = int(np.count_nonzero(d_to_pred[sr] <= tau_mm))
    return (close_p + close_r) / (n_p + n_r)


def nsd(pred: Volume, ref: Volume, tau_mm: Optional[float] = None) -> float:
    """
    Normalized Surface Dice

    Fraction of both surfaces lying within `tau_mm` of the other surface.

    Args:
        pred: predicted binary mask
        ref: reference binary mask on the same grid
        tau_mm: tolerance in mm, defaults to METRICS_CONFIG['tau_mm']

    Returns:
        Score in [0, 1]
    """
    tau_mm = config.METRICS_CONFIG['tau_mm'] if tau_mm is None else float(tau_mm)
    if not tau_mm > 0:
        raise ParameterError(f'tau_mm must be > 0, got {tau_mm}')
    _check_same_grid(pred, ref)
    return _nsd_arrays(_foreground(pred), _foreground(ref), ref.spacing, tau_mm)


def dice_bin(dice: float) -> str:
    hi_edge, mid_edge = config.METRICS_CONFIG['dice_bins']
    if dice >= hi_edge:
        return 'high'
    if dice >= mid_edge:
        return 'mid'
    return 'low'


def _bin_counts(values: Iterable[float]) -> DiceBins:
    counts = dict.fromkeys(BIN_NAMES, 0)
    for value in values:
        counts[dice_bin(value)] += 1
    return DiceBins(**counts)


def aggregate(scores: Sequence[StructureScore]) -> Aggregates:
    """
    Summaries and Dice ranges over a set of structure scores

    Scores are sorted by (case_id, label_id) first so the result does not
    depend on the order they arrive in.
    """
    if not scores:
        raise EmptyInputError('no scores to aggregate')
    ordered = sorted(scores, key=lambda s: s.sort_key)

    overall = {
        metric: SummaryStats.from_values([getattr(s, metric) for s in ordered])
        for metric in SCORE_FIELDS
    }

    by_label: Dict[int, List[StructureScore]] = {}
    for score in ordered:
        by_label.setdefault(score.label_id, []).append(score)
    per_structure = {
        label: {m: SummaryStats.from_values([getattr(s, m) for s in group]) for m in SCORE_FIELDS}
        for label, group in sorted(by_label.items())
    }

    structure_means = {label: stats['dice'].mean for label, stats in per_structure.items()}
    poor_edge = config.METRICS_CONFIG['poor_dice']
    poor = tuple(label for label, mean in structure_means.items() if mean < poor_edge)

    return Aggregates(
        overall=overall,
        per_structure=per_structure,
        bins=_bin_counts(s.dice for s in ordered),
        structure_bins=_bin_counts(structure_means.values()),
        poor_structures=poor,
        empty_flagged=sum(1 for s in ordered if s.empty),
    )


def evaluate_case(
    pred: Volume,
    ref: Volume,
    labels: Iterable[int],
    tau_mm: Optional[float] = None,
    case_id: str = '',
    names: Optional[Mapping[int, str]] = None,
) -> List[StructureScore]:
    """
    Score every requested structure of one case

    Args:
        pred: predicted label volume
        ref: reference label volume on the same grid
        labels: structure ids to score
        tau_mm: NSD tolerance in mm
        case_id: identifier copied into each score
        names: optional label id -> name lookup

    Returns:
        One StructureScore per label, ordered by label id
    """
    require_kind(pred, VolumeKind.LABEL, 'prediction')
    require_kind(ref, VolumeKind.LABEL, 'reference')
    _check_same_grid(pred, ref)
    tau_mm = config.METRICS_CONFIG['tau_mm'] if tau_mm is None else float(tau_mm)
    if not tau_mm > 0:
        raise ParameterError(f'tau_mm must be > 0, got {tau_mm}')

    names = names or {}
    p_all = np.asarray(pred.voxels)
    r_all = np.asarray(ref.voxels)
    scores = []
    for label in sorted({int(l) for l in labels}):
        p = p_all == label
        r = r_all == label
        counts = _count(p, r)
        dice, precision, recall = overlap_scores(counts)
        empty = counts.tp + counts.fp + counts.fn == 0
        scores.append(StructureScore(
            label_id=label,
            dice=dice,
            precision=precision,
            recall=recall,
            nsd=_nsd_arrays(p, r, ref.spacing, tau_mm),
            tau_mm=tau_mm,
            case_id=case_id,
            label_name=names.get(label, f'label_{label}'),
            empty=empty,
        ))

    if scores:
        mean_dice = float(np.mean([s.dice for s in scores]))
        LOGGER.info(f'{case_id or "case"}: scored {len(scores)} structures, mean dice {mean_dice:.4f}')
    return scores


def build_report(scores: Sequence[StructureScore], tau_mm: float) -> MetricsReport:
    """Sorted scores plus their aggregates"""
    ordered = tuple(sorted(scores, key=lambda s: s.sort_key))
    return MetricsReport(scores=ordered, aggregates=aggregate(ordered), tau_mm=float(tau_mm))

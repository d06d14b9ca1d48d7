"""
Hounsfield windowing and z-score normalization

Each CT modality of a case is clamped to its own task-specific window and,
optionally, standardized with its own statistics. Channels never share
statistics.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from src.core import config
from src.core.errors import DegenerateStatisticsError, GeometryError, ParameterError
from src.core.volume import PairedCase, Volume, VolumeKind, require_kind

LOGGER = logging.getLogger(__name__)

MIN_STD = 1e-8


class Task(str, Enum):
    OARS = 'oars'
    GTVS = 'gtvs'


class Modality(str, Enum):
    CONTRAST = 'contrast'
    PLAIN = 'plain'


@dataclass(frozen=True)
class TaskModalityKey:
    task: Task
    modality: Modality

    def __post_init__(self):
        object.__setattr__(self, 'task', Task(self.task))
        object.__setattr__(self, 'modality', Modality(self.modality))

    @property
    def name(self) -> str:
        """Key used in window tables, e.g. 'oars.contrast'"""
        return f'{self.task.value}.{self.modality.value}'


@dataclass(frozen=True)
class IntensityWindow:
    lo: float
    hi: float

    def __post_init__(self):
        if not float(self.lo) < float(self.hi):
            raise ParameterError(f'window needs lo < hi, got [{self.lo}, {self.hi}]')

    def as_list(self):
        return [self.lo, self.hi]


def window_for(key: TaskModalityKey, table: Optional[Mapping[str, Tuple[float, float]]] = None) -> IntensityWindow:
    """
    Look up the HU window of a task/modality pair

    Args:
        key: task and modality
        table: window table; defaults to config.DEFAULT_WINDOWS

    Returns:
        IntensityWindow for the pair
    """
    table = config.DEFAULT_WINDOWS if table is None else table
    lo, hi = table[key.name]
    return IntensityWindow(float(lo), float(hi))


def clamp_window(volume: Volume, window: IntensityWindow) -> Volume:
    """Saturate every voxel into [window.lo, window.hi]; geometry is unchanged"""
    require_kind(volume, VolumeKind.INTENSITY, 'clamp_window input')
    voxels = volume.voxels
    clamped = np.clip(voxels, window.lo, window.hi)
    integral_bounds = float(window.lo).is_integer() and float(window.hi).is_integer()
    if np.issubdtype(voxels.dtype, np.integer) and integral_bounds:
        clamped = clamped.astype(voxels.dtype)
    return volume.with_voxels(clamped)


def zscore(volume: Volume, mask: Optional[Volume] = None) -> Volume:
    """
    Standardize intensities to zero mean and unit population std

    Statistics are accumulated in float64 over the whole volume, or over
    the nonzero voxels of `mask` when given; the transform is applied to
    every voxel.
    """
    require_kind(volume, VolumeKind.INTENSITY, 'zscore input')
    data = volume.voxels.astype(np.float64)
    if mask is not None:
        if mask.dims != volume.dims:
            raise GeometryError(f'mask dims {mask.dims} do not match volume dims {volume.dims}')
        sample = data[np.asarray(mask.voxels) != 0]
    else:
        sample = data
    if sample.size == 0:
        raise DegenerateStatisticsError('no voxels to compute statistics over')

    mean = sample.mean()
    std = sample.std()
    if not std > MIN_STD:
        raise DegenerateStatisticsError(f'standard deviation {std:.3g} is below {MIN_STD}')

    LOGGER.debug(f'z-score statistics: mean {mean:.6g}, std {std:.6g} over {sample.size} voxels')
    return volume.with_voxels((data - mean) / std)


def harmonize(
    case: PairedCase,
    task: Task,
    table: Optional[Mapping[str, Tuple[float, float]]] = None,
    standardize: bool = False,
    foreground: Optional[Volume] = None,
) -> Tuple[PairedCase, Dict[str, IntensityWindow]]:
    """
    Window both modalities of a case, then optionally z-score each one

    Args:
        case: validated contrast/plain pair
        task: OARS or GTVS, selects the windows
        table: window table override
        standardize: apply z-score after clamping
        foreground: optional mask restricting z-score statistics

    Returns:
        Processed pair and the window applied per modality
    """
    applied = {}
    processed = {}
    for modality, volume in ((Modality.CONTRAST, case.contrast_ct), (Modality.PLAIN, case.plain_ct)):
        window = window_for(TaskModalityKey(task, modality), table)
        out = clamp_window(volume, window)
        if standardize:
            out = zscore(out, mask=foreground)
        applied[modality.value] = window
        processed[modality.value] = out
        LOGGER.info(f'{case.case_id}: {modality.value} clamped to [{window.lo:g}, {window.hi:g}]'
                    + (' and z-scored' if standardize else ''))

    return PairedCase(processed['contrast'], processed['plain'], case.case_id), applied

"""
Configuration settings for the contouring toolkit
"""
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv

from src.core.errors import ConfigError

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent

# Runtime
WORKERS = int(os.getenv('NPC_WORKERS', '1'))
LOG_LEVEL = os.getenv('NPC_LOG_LEVEL', 'INFO')
OUTPUT_DIR = os.getenv('NPC_OUTPUT_DIR', './output')
LOG_DIR = os.getenv('NPC_LOG_DIR', './logs')

# Task names and modality names as they appear in window keys
TASKS = ('oars', 'gtvs')
MODALITIES = ('contrast', 'plain')

# Hounsfield windows per task and modality, [lo, hi]
DEFAULT_WINDOWS = {
    'oars.contrast': (-400.0, 2000.0),
    'oars.plain': (-300.0, 800.0),
    'gtvs.contrast': (-1000.0, 1000.0),
    'gtvs.plain': (-600.0, 600.0),
}

# Region-of-interest cropping
CROP_CONFIG = {
    'threshold_hu': float(os.getenv('NPC_BODY_THRESHOLD_HU', '-500')),
    'margin_px': int(os.getenv('NPC_CROP_MARGIN_PX', '15')),
    'connectivity': int(os.getenv('NPC_CONNECTIVITY', '26')),
    'full_z': os.getenv('NPC_FULL_Z', 'true').lower() == 'true',
}

# Evaluation
METRICS_CONFIG = {
    'tau_mm': float(os.getenv('NPC_NSD_TAU_MM', '2.0')),
    'dice_bins': (0.90, 0.80),     # x >= 0.90, 0.90 > x >= 0.80, 0.80 > x
    'poor_dice': 0.60,
    'score_digits': 6,             # significant digits in CSV output
}

LABEL_SCHEMA_PATH = os.getenv(
    'NPC_LABEL_SCHEMA', str(PROJECT_ROOT / 'config' / 'label_schema.json')
)

# Case file naming, {case_id} is substituted
CASE_LAYOUT = {
    'contrast': '{case_id}_contrast.nii.gz',
    'plain': '{case_id}_plain.nii.gz',
    'label': '{case_id}_label.nii.gz',
    'record': '{case_id}.crop.json',
}


@dataclass
class CropSettings:
    threshold_hu: float = CROP_CONFIG['threshold_hu']
    margin_px: int = CROP_CONFIG['margin_px']
    connectivity: int = CROP_CONFIG['connectivity']
    full_z: bool = CROP_CONFIG['full_z']


@dataclass
class PipelineConfig:
    """
    Settings shared by every batch command

    Args:
        task: 'oars' or 'gtvs'
        windows: optional override of DEFAULT_WINDOWS entries
        crop: body-mask threshold, bbox margin, connectivity, full-z flag
        labels_schema: path of the label schema JSON (None disables merging)
        tau_mm: surface tolerance for Normalized Surface Dice
        workers: case-level worker processes
        zscore: standardize intensities after windowing
        zscore_foreground: compute z-score statistics inside the body mask only
        layout: file-name patterns of a case directory
    """
    task: str = 'oars'
    windows: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    crop: CropSettings = field(default_factory=CropSettings)
    labels_schema: Optional[str] = None
    tau_mm: float = METRICS_CONFIG['tau_mm']
    workers: int = WORKERS
    zscore: bool = False
    zscore_foreground: bool = False
    layout: Dict[str, str] = field(default_factory=lambda: dict(CASE_LAYOUT))

    def __post_init__(self):
        self.task = str(self.task).lower()
        self.windows = {k: tuple(float(x) for x in v) for k, v in self.windows.items()}
        if isinstance(self.crop, dict):
            self.crop = CropSettings(**self.crop)
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f'task must be one of {TASKS}, got {self.task!r}')
        for key, window in self.windows.items():
            if key not in DEFAULT_WINDOWS:
                raise ConfigError(f'unknown window key {key!r}')
            if len(window) != 2 or not window[0] < window[1]:
                raise ConfigError(f'window {key!r} must be [lo, hi] with lo < hi, got {list(window)}')
        if self.crop.margin_px < 0:
            raise ConfigError(f'margin_px must be >= 0, got {self.crop.margin_px}')
        if self.crop.connectivity not in (6, 26):
            raise ConfigError(f'connectivity must be 6 or 26, got {self.crop.connectivity}')
        if not self.tau_mm > 0:
            raise ConfigError(f'tau_mm must be > 0, got {self.tau_mm}')
        if self.workers < 1:
            raise ConfigError(f'workers must be >= 1, got {self.workers}')
        missing = {'contrast', 'plain', 'label', 'record'} - set(self.layout)
        if missing:
            raise ConfigError(f'layout is missing patterns for {sorted(missing)}')

    def window_table(self) -> Dict[str, Tuple[float, float]]:
        """Default windows with this config's overrides applied"""
        table = dict(DEFAULT_WINDOWS)
        table.update(self.windows)
        return table

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['windows'] = {k: list(v) for k, v in sorted(self.windows.items())}
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'PipelineConfig':
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f'unknown config fields: {sorted(unknown)}')
        data = dict(data)
        if 'crop' in data:
            crop = dict(data['crop'])
            bad = set(crop) - set(CropSettings.__dataclass_fields__)
            if bad:
                raise ConfigError(f'unknown crop fields: {sorted(bad)}')
            data['crop'] = CropSettings(**crop)
        if 'layout' in data:
            data['layout'] = {**CASE_LAYOUT, **data['layout']}
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> 'PipelineConfig':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'cannot read config {path}: {e}') from e
        return cls.from_dict(data)

    def save(self, path: str) -> str:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path


def load_windows_override(path: str) -> Dict[str, Tuple[float, float]]:
    """
    Read a window table override

    The file is a JSON object keyed 'oars.contrast', 'oars.plain',
    'gtvs.contrast', 'gtvs.plain'; each value is a [lo, hi] array.
    """
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    windows = {}
    for key, value in data.items():
        if key not in DEFAULT_WINDOWS:
            raise ConfigError(f'unknown window key {key!r}')
        if not isinstance(value, list) or len(value) != 2:
            raise ConfigError(f'window {key!r} must be a 2-element array')
        windows[key] = (float(value[0]), float(value[1]))
    return windows

"""
Training plans for the external segmentation trainer

The toolkit does not train models. It emits the hyperparameters each task's
model was trained with, plus notes on how the inputs were prepared, so an
nnU-Net V1 run can be configured from one JSON file.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from src.core import config
from src.core.errors import ConfigError

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingPlan:
    trainer_class: str
    objective: str
    optimizer: str
    augmentation: str
    patch_size: List[int]
    base_feature_maps: int
    poolings_per_axis: List[int]
    epochs: int
    train_batches_per_epoch: int
    val_batches_per_epoch: int
    initial_lr: float
    batch_size: int
    folds: int

    def __post_init__(self):
        counts = {
            'base_feature_maps': self.base_feature_maps,
            'epochs': self.epochs,
            'train_batches_per_epoch': self.train_batches_per_epoch,
            'val_batches_per_epoch': self.val_batches_per_epoch,
            'batch_size': self.batch_size,
            'folds': self.folds,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f'{name} must be positive, got {value}')
        if len(self.patch_size) != 3 or any(p < 1 for p in self.patch_size):
            raise ConfigError(f'patch_size needs three positive sizes, got {self.patch_size}')
        if len(self.poolings_per_axis) != 3 or any(p < 1 for p in self.poolings_per_axis):
            raise ConfigError(f'poolings_per_axis needs three positive counts, got {self.poolings_per_axis}')
        if not self.initial_lr > 0:
            raise ConfigError(f'initial_lr must be positive, got {self.initial_lr}')

    def to_dict(self) -> Dict:
        return asdict(self)


_SHARED = {
    'trainer_class': 'nnUnetTrainerV2',
    'objective': 'Dice + BCE',
    'optimizer': 'SGD',
    'base_feature_maps': 32,
    'poolings_per_axis': [4, 5, 5],
    'train_batches_per_epoch': 250,
    'val_batches_per_epoch': 50,
    'initial_lr': 0.01,
    'batch_size': 2,
    'folds': 5,
}

PLANS = {
    'oars': TrainingPlan(
        augmentation='True except for the flipping',
        patch_size=[64, 192, 160],
        epochs=2500,
        **_SHARED,
    ),
    'gtvs': TrainingPlan(
        augmentation='True',
        patch_size=[80, 192, 128],
        epochs=700,
        **_SHARED,
    ),
}

_METADATA = {
    'oars': {
        'framework': 'nnU-Net V1',
        'labels_predicted': 54,
        'labels_after_merge': 45,
        'train_input': 'full-resolution volumes',
        'inference_input': 'cropped volumes, restored to full resolution afterwards',
        'epochs_note': 'default of 1000 epochs did not converge; raised to 2500 per fold',
        'all_data_variant': {
            'description': 'one model trained on all 120 training subjects with the same hyperparameters',
            'reason': 'ensembling the softmax outputs of 5 folds for 54 labels needs more than 50 GB; '
                      'the evaluation platform allows 32 GB',
        },
        'inference': {'interpolation_order': 'reduced', 'test_time_augmentation': False},
    },
    'gtvs': {
        'framework': 'nnU-Net V1',
        'labels_predicted': 2,
        'labels_after_merge': 2,
        'train_input': 'cropped volumes',
        'inference_input': 'cropped volumes, restored to full resolution afterwards',
        'epochs_note': 'the training narrative states 600 epochs while the hyperparameter table '
                       'lists 700; the table value is emitted',
        'epochs_alternatives': [700, 600],
        'epochs_discrepancy': True,
    },
}


def plan_for(task: str) -> TrainingPlan:
    task = str(task).lower()
    if task not in PLANS:
        raise ConfigError(f'task must be one of {sorted(PLANS)}, got {task!r}')
    return PLANS[task]


def plan_document(task: str, windows: Optional[Dict] = None) -> Dict:
    """
    Plan plus metadata for one task

    Args:
        task: 'oars' or 'gtvs'
        windows: window table used for the inputs; defaults to config.DEFAULT_WINDOWS

    Returns:
        JSON-ready dict with 'task', 'plan' and 'metadata'
    """
    plan = plan_for(task)
    task = str(task).lower()
    windows = config.DEFAULT_WINDOWS if windows is None else windows
    metadata = json.loads(json.dumps(_METADATA[task]))
    metadata['input_channels'] = [
        {'modality': m, 'window_hu': list(windows[f'{task}.{m}'])} for m in config.MODALITIES
    ]
    metadata['normalization'] = 'per-channel z-score after windowing'
    metadata['crop'] = {
        'margin_px': config.CROP_CONFIG['margin_px'],
        'all_axial_slices': True,
    }
    return {'task': task, 'plan': plan.to_dict(), 'metadata': metadata}


def emit_plan(task: str, path: Union[str, Path, None] = None, windows: Optional[Dict] = None) -> str:
    """Serialize the plan document; written to `path` when given, returned as text otherwise"""
    text = json.dumps(plan_document(task, windows), indent=2) + '\n'
    if path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
        LOGGER.info(f'Wrote {task} training plan to {path}')
    return text

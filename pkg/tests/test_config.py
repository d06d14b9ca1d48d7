"""
Pipeline configuration tests
"""
import json

import pytest

from src.core.config import CASE_LAYOUT, CropSettings, PipelineConfig, load_windows_override
from src.core.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.task == 'oars'
    assert cfg.crop == CropSettings(threshold_hu=-500.0, margin_px=15, connectivity=26, full_z=True)
    assert cfg.tau_mm == 2.0
    assert cfg.layout == CASE_LAYOUT
    assert cfg.window_table()['gtvs.plain'] == (-600.0, 600.0)


def test_dict_round_trip():
    cfg = PipelineConfig(
        task='GTVS',
        windows={'gtvs.plain': [-500, 500]},
        crop={'threshold_hu': -400.0, 'margin_px': 5, 'connectivity': 6, 'full_z': False},
        labels_schema='config/label_schema.json',
        tau_mm=1.5,
        workers=3,
        zscore=True,
    )
    assert cfg.task == 'gtvs'
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_file_round_trip(tmp_path):
    cfg = PipelineConfig(task='oars', tau_mm=3.0, workers=2)
    path = cfg.save(str(tmp_path / 'pipeline.json'))
    assert PipelineConfig.load(path) == cfg


def test_window_override_replaces_one_entry():
    cfg = PipelineConfig(windows={'oars.contrast': (-300, 1800)})
    table = cfg.window_table()
    assert table['oars.contrast'] == (-300.0, 1800.0)
    assert table['oars.plain'] == (-300.0, 800.0)


@pytest.mark.parametrize('kwargs', [
    {'task': 'brain'},
    {'windows': {'oars.mri': (0, 1)}},
    {'windows': {'oars.plain': (5, 5)}},
    {'crop': {'margin_px': -1}},
    {'crop': {'connectivity': 18}},
    {'tau_mm': 0.0},
    {'workers': 0},
    {'layout': {'contrast': '{case_id}.nii'}},
])
def test_invalid_settings_raise(kwargs):
    with pytest.raises(ConfigError):
        PipelineConfig(**kwargs)


def test_unknown_fields_raise():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({'task': 'oars', 'epochs': 5})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({'crop': {'margin': 4}})


def test_partial_layout_is_completed():
    cfg = PipelineConfig.from_dict({'layout': {'label': '{case_id}_seg.nii.gz'}})
    assert cfg.layout['label'] == '{case_id}_seg.nii.gz'
    assert cfg.layout['contrast'] == CASE_LAYOUT['contrast']


def test_unreadable_config_raises(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('[', encoding='utf-8')
    with pytest.raises(ConfigError):
        PipelineConfig.load(str(path))


def test_load_windows_override(tmp_path):
    path = tmp_path / 'windows.json'
    path.write_text(json.dumps({'gtvs.contrast': [-900, 900]}), encoding='utf-8')
    assert load_windows_override(str(path)) == {'gtvs.contrast': (-900.0, 900.0)}

    path.write_text(json.dumps({'gtvs.pet': [0, 1]}), encoding='utf-8')
    with pytest.raises(ConfigError):
        load_windows_override(str(path))

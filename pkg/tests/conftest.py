"""
Pytest configuration for the contouring toolkit tests.

This file ensures the project root is in the Python path so that
`from src.` imports work correctly when running tests, and provides the
shared volume fixtures.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.core.config import PipelineConfig  # noqa: E402
from src.core.volume import GridGeometry, Volume, VolumeKind  # noqa: E402


@pytest.fixture
def geometry():
    """Anisotropic, shifted grid with float32-representable values"""
    return GridGeometry(dims=(12, 10, 6), spacing=(0.75, 0.5, 2.5), origin=(-40.5, 12.25, 100.0))


@pytest.fixture
def make_label():
    def _make(voxels, geometry=None):
        voxels = np.asarray(voxels)
        return Volume(geometry or GridGeometry(dims=voxels.shape), VolumeKind.LABEL, voxels)
    return _make


@pytest.fixture
def make_ct():
    def _make(voxels, geometry=None):
        voxels = np.asarray(voxels)
        return Volume(geometry or GridGeometry(dims=voxels.shape), VolumeKind.INTENSITY, voxels)
    return _make


@pytest.fixture
def random_mask():
    """Random binary array factory: random_mask(rng, shape, density)"""
    def _make(rng, shape=(8, 8, 8), density=None):
        density = rng.uniform(0.05, 0.6) if density is None else density
        return (rng.random(shape) < density).astype(np.uint8)
    return _make


@pytest.fixture
def pipeline_config():
    return PipelineConfig(task='oars', workers=1)

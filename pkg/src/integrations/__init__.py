"""
File format integrations (NIfTI-1 volumes)
"""
from .volume_io import load_volume, parse_nifti, save_volume, validate_pair, write_nifti

__all__ = ['load_volume', 'parse_nifti', 'save_volume', 'validate_pair', 'write_nifti']

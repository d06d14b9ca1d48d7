"""
Case discovery and number formatting helpers
"""
from .helpers import case_path, discover_cases, format_significant

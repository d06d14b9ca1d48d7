"""
Utility Helper Functions

Common helper functions used across the application
"""
import re
from pathlib import Path
from typing import Dict, Union


def format_significant(value: float, digits: int = 6) -> str:
    """Render a score with a fixed number of significant digits"""
    return f'{float(value):.{digits}g}'


def pattern_to_regex(pattern: str) -> re.Pattern:
    """Turn a '{case_id}_contrast.nii.gz' style pattern into a regex capturing the case id"""
    head, _, tail = pattern.partition('{case_id}')
    return re.compile(f'^{re.escape(head)}(?P<case_id>.+?){re.escape(tail)}$')


def discover_cases(directory: Union[str, Path], pattern: str) -> Dict[str, Path]:
    """
    Map case id -> file for every file in `directory` matching `pattern`

    Args:
        directory: folder to scan (not recursive)
        pattern: file-name pattern holding a '{case_id}' placeholder

    Returns:
        Dict ordered by case id
    """
    directory = Path(directory)
    regex = pattern_to_regex(pattern)
    found = {}
    for path in sorted(directory.iterdir()) if directory.is_dir() else []:
        match = regex.match(path.name)
        if match and path.is_file():
            found[match.group('case_id')] = path
    return dict(sorted(found.items()))


def case_path(directory: Union[str, Path], pattern: str, case_id: str) -> Path:
    return Path(directory) / pattern.format(case_id=case_id)


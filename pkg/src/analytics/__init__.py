"""
Label post-processing and segmentation metrics
"""
from .label_ops import LabelSchema, MergeMap, apply_merge, schema_for_task
from .metrics import MetricsReport, StructureScore, aggregate, evaluate_case, nsd

__all__ = [
    'LabelSchema', 'MergeMap', 'apply_merge', 'schema_for_task',
    'MetricsReport', 'StructureScore', 'aggregate', 'evaluate_case', 'nsd',
]

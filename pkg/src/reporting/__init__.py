"""
Report generation and training plan emission
"""
from .report_generator import ReportGenerator
from .training_plan import TrainingPlan, emit_plan

__all__ = ['ReportGenerator', 'TrainingPlan', 'emit_plan']

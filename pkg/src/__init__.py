"""
NPC contouring toolkit - CT harmonization, ROI cropping, label post-processing and evaluation
"""
__version__ = '1.0.0'

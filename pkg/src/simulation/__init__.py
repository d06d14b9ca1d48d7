"""
Synthetic CT phantoms with known ground truth
"""

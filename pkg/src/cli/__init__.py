"""
Batch commands behind main.py
"""

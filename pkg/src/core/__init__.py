"""
Core configuration, domain types and errors
"""
from .config import *

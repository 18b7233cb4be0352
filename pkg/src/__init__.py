"""
CCPO - counterfactual credit policy optimization for cooperative agent teams
Core package initialization
"""

__version__ = "1.0.0"
__author__ = "CCPO Toolkit"

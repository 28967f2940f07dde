"""
Cache module for dense transform and basis matrices.
"""

from .matrix_cache import MatrixCache, get_cache

__all__ = ['MatrixCache', 'get_cache']

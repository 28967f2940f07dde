"""
Transform and basis matrix cache.

Dense MN x MN matrices (IDFZT, GDAFT, basis families) are reused across
Monte Carlo trials and across worker threads. This cache keeps them in
memory with LRU eviction.

Features:
- LRU eviction bounded by entry count and total bytes
- Cache statistics
- Thread-safe operations
- Cached arrays are returned read-only
"""

import logging
from itertools import count
from threading import Lock
from typing import Any, Callable, Dict, Hashable, Optional

import numpy as np

from utils.logger import log_function_call

logger = logging.getLogger(__name__)

DEFAULT_MAX_BYTES = 256 * 2 ** 20


class MatrixCache:
    """
    In-memory LRU cache for numpy matrices keyed by hashable tuples.

    Thread-safe for concurrent access. The factory runs outside the lock, so
    two threads missing the same key at once may both compute it; the first
    result stored wins.
    """

    def __init__(self, max_entries: int = 32, max_bytes: int = DEFAULT_MAX_BYTES):
        """
        Initialize matrix cache.

        Args:
            max_entries: Maximum number of matrices kept in memory
            max_bytes: Maximum total size of the cached arrays
        """
        self.max_entries = max_entries
        self.max_bytes = max_bytes
        self._bytes = 0

        self._entries: Dict[Hashable, np.ndarray] = {}
        self._access_order: Dict[Hashable, int] = {}
        self._clock = count()

        self._lock = Lock()

        self._stats = {
            'hits': 0,
            'misses': 0,
            'evictions': 0
        }

        logger.debug(f"MatrixCache initialized: max_entries={max_entries}, max_bytes={max_bytes}")

    def _evict_lru(self):
        """Evict least recently used matrix."""
        if not self._access_order:
            return

        lru_key = min(self._access_order, key=self._access_order.get)
        self._bytes -= self._entries.pop(lru_key).nbytes
        self._access_order.pop(lru_key, None)

        self._stats['evictions'] += 1
        logger.debug(f"Evicted LRU matrix: {lru_key!r}")

    def get(self, key: Hashable) -> Optional[np.ndarray]:
        """
        Get a cached matrix.

        Args:
            key: Cache key, e.g. ``('gdaft', M, N, a, b, c, d)``

        Returns:
            Cached read-only matrix or None
        """
        with self._lock:
            if key in self._entries:
                self._access_order[key] = next(self._clock)
                self._stats['hits'] += 1
                return self._entries[key]
            self._stats['misses'] += 1
            return None

    def set(self, key: Hashable, matrix: np.ndarray) -> np.ndarray:
        """
        Store a matrix; an existing entry under the same key is kept.

        Args:
            key: Cache key
            matrix: Matrix to cache (made read-only)

        Returns:
            The cached matrix; ``matrix`` itself, uncached, when it exceeds max_bytes
        """
        matrix.flags.writeable = False
        with self._lock:
            if key in self._entries:
                return self._entries[key]
            if matrix.nbytes > self.max_bytes:
                logger.warning(f"Matrix {key!r} ({matrix.nbytes} bytes) exceeds the cache limit, not cached")
                return matrix
            while self._entries and (len(self._entries) >= self.max_entries
                                     or self._bytes + matrix.nbytes > self.max_bytes):
                self._evict_lru()
            self._entries[key] = matrix
            self._bytes += matrix.nbytes
            self._access_order[key] = next(self._clock)
            return matrix

    def get_or_compute(self, key: Hashable, factory: Callable[[], np.ndarray]) -> np.ndarray:
        """
        Return the cached matrix for ``key``, computing it with ``factory`` on a miss.

        Args:
            key: Cache key
            factory: Zero-argument callable building the matrix

        Returns:
            Read-only matrix
        """
        cached = self.get(key)
        if cached is not None:
            return cached
        logger.debug(f"Matrix cache miss, computing {key!r}")
        return self.set(key, factory())

    @log_function_call()
    def clear(self):
        """Drop every cached matrix."""
        with self._lock:
            self._entries.clear()
            self._access_order.clear()
            self._bytes = 0
            logger.debug("Matrix cache cleared")

    def get_stats(self) -> Dict[str, Any]:
        """
        Get cache statistics.

        Returns:
            Dictionary with cache statistics
        """
        with self._lock:
            total_requests = self._stats['hits'] + self._stats['misses']
            hit_rate = (self._stats['hits'] / total_requests * 100) if total_requests > 0 else 0

            return {
                'entries': len(self._entries),
                'bytes': self._bytes,
                'total_hits': self._stats['hits'],
                'total_misses': self._stats['misses'],
                'hit_rate': f"{hit_rate:.2f}%",
                'evictions': self._stats['evictions']
            }


# Global cache instance
_global_cache: Optional[MatrixCache] = None
_global_lock = Lock()


def get_cache() -> MatrixCache:
    """
    Get global cache instance (singleton pattern).

    Returns:
        MatrixCache instance
    """
    global _global_cache

    with _global_lock:
        if _global_cache is None:
            _global_cache = MatrixCache()
        return _global_cache

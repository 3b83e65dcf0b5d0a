import logging
from cachetools import LRUCache
from typing import Any, Optional, Tuple

from utils.config import settings

logger = logging.getLogger(__name__)

class CacheManager:
    def __init__(self, reference_limit: int = settings.CACHE_REFERENCE_LIMIT,
                 lipschitz_limit: int = settings.CACHE_LIPSCHITZ_LIMIT):
        # (fingerprint, budget, tol) -> ReferenceSolution
        self._reference_cache = LRUCache(maxsize=reference_limit)

        # (fingerprint, ordering) -> LipschitzReport
        # Orderings are stored as tuples; natural order is keyed as None.
        self._lipschitz_cache = LRUCache(maxsize=lipschitz_limit)

    def get_reference(self, fingerprint: str, budget: int, tol: float) -> Optional[Any]:
        return self._reference_cache.get((fingerprint, budget, tol))

    def set_reference(self, fingerprint: str, budget: int, tol: float, reference: Any):
        self._reference_cache[(fingerprint, budget, tol)] = reference

    def get_lipschitz(self, fingerprint: str, ordering: Optional[Tuple[int, ...]]) -> Optional[Any]:
        return self._lipschitz_cache.get((fingerprint, ordering))

    def set_lipschitz(self, fingerprint: str, ordering: Optional[Tuple[int, ...]], report: Any):
        self._lipschitz_cache[(fingerprint, ordering)] = report

    def invalidate_problem(self, fingerprint: str):
        """Drops every cached entry belonging to one problem instance."""
        for cache in (self._reference_cache, self._lipschitz_cache):
            for k in [k for k in cache.keys() if k[0] == fingerprint]:
                cache.pop(k, None)
        logger.debug(f"Invalidated caches for problem {fingerprint[:12]}")

    def clear(self):
        self._reference_cache.clear()
        self._lipschitz_cache.clear()

cache_manager = CacheManager()

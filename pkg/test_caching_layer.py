import sys
import os
import unittest
from unittest.mock import patch

import numpy as np

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.cache import CacheManager, cache_manager
from utils.linalg import CsrMatrix
from utils.lipschitz import lipschitz_report
from utils.metrics import compute_reference
from utils.problems import make_lasso


class TestCachingLayer(unittest.TestCase):
    def setUp(self):
        cache_manager.clear()
        A = CsrMatrix.from_dense(np.array([[1.0, 0.5], [0.0, 2.0], [1.0, 1.0]]))
        self.problem = make_lasso(A, [1.0, 2.0, 0.5], 0.1)

    def test_lru_eviction(self):
        print("\n--- Testing LRU Eviction ---")
        cache = CacheManager(reference_limit=2, lipschitz_limit=2)
        for i in range(3):
            cache.set_reference(f"fp-{i}", 10, 1e-8, i)
        self.assertIsNone(cache.get_reference("fp-0", 10, 1e-8))
        self.assertEqual(cache.get_reference("fp-2", 10, 1e-8), 2)
        # Budget and tolerance are part of the key
        self.assertIsNone(cache.get_reference("fp-2", 20, 1e-8))

    def test_reference_reused_without_recomputing(self):
        print("\n--- Testing Reference Cache Hit ---")
        first = compute_reference(self.problem)
        with patch("utils.solvers.iterate") as mock_iterate:
            second = compute_reference(self.problem)
            mock_iterate.assert_not_called()
        self.assertIs(second, first)

    def test_invalidation_drops_both_caches(self):
        print("\n--- Testing Per-Problem Invalidation ---")
        compute_reference(self.problem)
        lipschitz_report(self.problem)
        fp = self.problem.fingerprint()
        other = make_lasso(self.problem.A, [0.0, 0.0, 0.0], 0.1)
        lipschitz_report(other)

        cache_manager.invalidate_problem(fp)
        self.assertIsNone(cache_manager.get_lipschitz(fp, None))
        self.assertIsNotNone(cache_manager.get_lipschitz(other.fingerprint(), None))
        with patch("utils.metrics.cache_manager.set_reference") as mock_set:
            compute_reference(self.problem)
            mock_set.assert_called_once()


if __name__ == "__main__":
    unittest.main()

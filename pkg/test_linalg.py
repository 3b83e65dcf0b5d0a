import sys
import os
import unittest

import numpy as np
import scipy.sparse as sp

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.errors import DenseCapError, DimensionMismatchError, IndexOutOfRangeError, NotPsdError
from utils.linalg import (
    BlockPartition, CsrMatrix, as_dense, block_permutation, csr_col_dot, csr_matvec, quad_form, spectral_norm,
)


class TestCsrMatrix(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        dense = rng.standard_normal((7, 5))
        dense[rng.random((7, 5)) < 0.4] = 0.0
        self.dense = dense
        self.A = CsrMatrix.from_dense(dense)

    def test_matvec_and_rmatvec_match_dense(self):
        print("\n--- Testing CSR Products ---")
        x = np.arange(5, dtype=float)
        y = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(self.A.matvec(x), self.dense @ x, atol=1e-12)
        np.testing.assert_allclose(self.A.rmatvec(y), self.dense.T @ y, atol=1e-12)
        np.testing.assert_allclose(csr_matvec(self.A, x), self.dense @ x, atol=1e-12)

    def test_spec_example_matvec(self):
        A = CsrMatrix(2, 3, [0, 2, 3], [0, 2, 1], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(A.matvec(np.array([1.0, 1.0, 1.0])), [3.0, 3.0])

    def test_col_dot(self):
        A = CsrMatrix(2, 2, [0, 1, 2], [0, 0], [2.0, 5.0])
        self.assertEqual(csr_col_dot(A, 0, [1.0, 1.0]), 7.0)
        self.assertEqual(csr_col_dot(A, 1, [1.0, 1.0]), 0.0)
        with self.assertRaises(IndexOutOfRangeError):
            A.col_dot(2, np.ones(2))

    def test_block_operations(self):
        print("\n--- Testing Column/Row Block Kernels ---")
        r = np.linspace(0.5, 2.0, 7)
        np.testing.assert_allclose(self.A.col_block_rmatvec(1, 4, r), self.dense[:, 1:4].T @ r, atol=1e-12)
        out = np.zeros(7)
        delta = np.array([1.0, -2.0, 0.5])
        self.A.col_block_add(1, 4, delta, out)
        np.testing.assert_allclose(out, self.dense[:, 1:4] @ delta, atol=1e-12)

        x = np.linspace(-1, 1, 5)
        np.testing.assert_allclose(self.A.row_block_matvec(2, 6, x), self.dense[2:6] @ x, atol=1e-12)
        acc = np.zeros(5)
        d = np.array([1.0, 2.0, 3.0, 4.0])
        self.A.row_block_radd(2, 6, d, acc)
        np.testing.assert_allclose(acc, self.dense[2:6].T @ d, atol=1e-12)
        self.assertEqual(self.A.col_block_nnz(0, 5), self.A.nnz)

    def test_invariant_violations(self):
        print("\n--- Testing CSR Structural Validation ---")
        with self.assertRaises(DimensionMismatchError):
            CsrMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])
        with self.assertRaises(IndexOutOfRangeError):
            CsrMatrix(1, 2, [0, 1], [2], [1.0])
        with self.assertRaises(DimensionMismatchError):
            CsrMatrix(1, 2, [0, 1], [0], [np.nan])
        with self.assertRaises(DimensionMismatchError):
            self.A.matvec(np.ones(4))

    def test_scale_rows_and_head(self):
        scale = np.arange(1, 8, dtype=float)
        np.testing.assert_allclose(self.A.scale_rows(scale).to_dense(), self.dense * scale[:, None])
        self.assertEqual(self.A.head(3).shape, (3, 5))
        self.assertEqual(CsrMatrix.empty(0, 0).shape, (0, 0))


class TestBlockPartition(unittest.TestCase):
    def test_partition_lookup(self):
        print("\n--- Testing Block Partition ---")
        p = BlockPartition((2, 3, 1))
        self.assertEqual(p.m, 3)
        self.assertEqual(p.dim, 6)
        self.assertEqual(p.block(1), slice(2, 5))
        self.assertEqual([p.block_of(j) for j in range(6)], [0, 0, 1, 1, 1, 2])
        np.testing.assert_array_equal(p.coordinate_blocks(), [0, 0, 1, 1, 1, 2])
        with self.assertRaises(IndexOutOfRangeError):
            p.block(3)

    def test_constructors(self):
        self.assertEqual(BlockPartition.unit(4).block_sizes, (1, 1, 1, 1))
        self.assertEqual(BlockPartition.single(4).block_sizes, (4,))
        self.assertEqual(BlockPartition.uniform(7, 3).block_sizes, (3, 3, 1))
        with self.assertRaises(DimensionMismatchError):
            BlockPartition((2, 0))

    def test_block_permutation(self):
        p = BlockPartition((1, 2))
        np.testing.assert_array_equal(block_permutation(p, [1, 0]), [1, 2, 0])


class TestSpectralNorm(unittest.TestCase):
    def test_matches_eigen_oracle(self):
        print("\n--- Testing Power Iteration vs eigvalsh ---")
        rng = np.random.default_rng(11)
        B = rng.standard_normal((30, 12))
        Q = B.T @ B
        est = spectral_norm(Q, 12)
        self.assertTrue(est.converged)
        self.assertAlmostEqual(est.value, np.linalg.eigvalsh(Q)[-1], delta=1e-8 * np.linalg.eigvalsh(Q)[-1])

    def test_examples(self):
        self.assertAlmostEqual(spectral_norm(np.diag([3.0, 1.0]), 2).value, 3.0, places=9)
        self.assertEqual(spectral_norm(np.zeros((3, 3)), 3).value, 0.0)
        # Callable and sparse forms give the same answer
        Q = sp.diags([2.0, 5.0, 1.0]).tocsr()
        self.assertAlmostEqual(spectral_norm(lambda v: Q @ v, 3).value, 5.0, places=9)

    def test_deterministic(self):
        Q = np.array([[2.0, 1.0], [1.0, 2.0]])
        self.assertEqual(spectral_norm(Q, 2), spectral_norm(Q, 2))

    def test_unconverged_is_flagged(self):
        Q = np.diag([1.0, 0.999999])
        est = spectral_norm(Q, 2, max_iter=3)
        self.assertFalse(est.converged)


class TestQuadForm(unittest.TestCase):
    def test_values_and_clamp(self):
        print("\n--- Testing Quadratic Form ---")
        self.assertEqual(quad_form(np.eye(2), [1.0, 2.0]), 5.0)
        self.assertEqual(quad_form(np.diag([-1e-12, 1.0]), [1.0, 0.0]), 0.0)
        with self.assertRaises(NotPsdError):
            quad_form(np.diag([-1.0, 1.0]), [1.0, 0.0])
        with self.assertRaises(DimensionMismatchError):
            quad_form(np.eye(2), [1.0, 2.0, 3.0])

    def test_dense_cap(self):
        from unittest.mock import patch
        from utils.config import settings
        with patch.object(settings, "DENSE_CAP", 4):
            with self.assertRaises(DenseCapError):
                as_dense(np.eye(5))


if __name__ == "__main__":
    unittest.main()

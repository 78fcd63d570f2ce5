import math
import os
import tempfile
import unittest

import numpy as np

from mhdlab_modules.errors import NonZeroMeanError, ParameterRangeError
from mhdlab_modules.littlewood_paley import (
    BumpFunction, get_layout, regime_of, block_norms, besov_norm, hat_besov_norm, hybrid_norm,
    axis_bucket_norm, axis_part, hybrid_embedding_constant, norm_equivalence_ratio, linf_embedding_ratio,
    bony_decompose, product_law_ratio, commutator_table, write_block_csv,
)
from mhdlab_modules.spectral import Grid, SpectralField, VectorField, random_field


def _mode(grid, m1, m2, amplitude=1.0):
    """Real cosine mode cos(xi.x) on the grid."""
    c = np.zeros(grid.shape, dtype=complex)
    c[grid.mode_index(m1, m2)] += 0.5 * amplitude
    c[grid.mode_index(-m1, -m2)] += 0.5 * amplitude
    return SpectralField(grid, c)


class TestBump(unittest.TestCase):

    def test_plateau_and_support(self):
        bump = BumpFunction()
        values = bump.rho(np.array([0.8, 1.0, 1.5, 2.0, 2.5]))
        np.testing.assert_array_equal(values, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_partition_of_unity(self):
        layout = get_layout(Grid.square(64))
        total = sum(layout.shell_weight(q) for q in layout.shells)
        nonzero = layout.grid.abs_xi > 0
        self.assertLess(np.max(np.abs(total[nonzero] - 1.0)), 1e-14)
        self.assertEqual(total[0, 0], 0.0)

    def test_x1_partition(self):
        layout = get_layout(Grid.square(64))
        total = sum(layout.x1_weight(k) for k in layout.x1_shells)
        off_axis = np.abs(layout.grid.xi1[:, 0]) > 0
        self.assertLess(np.max(np.abs(total[off_axis] - 1.0)), 1e-14)
        self.assertEqual(total[0], 0.0)

    def test_regime_boundary(self):
        self.assertEqual(regime_of(0, -1), 1)
        self.assertEqual(regime_of(1, 1), 1)
        self.assertEqual(regime_of(1, 0), 2)


class TestNorms(unittest.TestCase):

    def setUp(self):
        self.grid = Grid.square(64)

    def test_nonzero_mean_rejected(self):
        f = _mode(self.grid, 3, 1)
        f.coeffs[0, 0] = 1.0
        with self.assertRaises(NonZeroMeanError):
            hat_besov_norm(f, 0.0)

    def test_single_block_mode(self):
        # xi = (0.75, 0) sits on the plateau of shell -1 in both decompositions
        f = _mode(self.grid, 12, 0)
        norms = {key: value for key, value in block_norms(f).items() if value > 0}
        self.assertEqual(list(norms), [(-1, -1)])
        self.assertAlmostEqual(hat_besov_norm(f, 1.0), 0.5 * f.l2_norm(), places=10)
        self.assertAlmostEqual(besov_norm(f, 1.0), 0.5 * f.l2_norm(), places=10)

    def test_regime_two_block(self):
        grid = Grid.square(128)
        f = _mode(grid, 24, 32)
        norms = {key: value for key, value in block_norms(f).items() if value > 1e-14}
        self.assertEqual(list(norms), [(1, 0)])
        self.assertEqual(get_layout(grid).regime(1, 0), 2)
        self.assertAlmostEqual(hybrid_norm(f, 0.0, 1.0), 4.0 * f.l2_norm(), places=9)

    def test_axis_modes_only_in_bucket(self):
        f = _mode(self.grid, 0, 5)
        self.assertEqual(hat_besov_norm(f, 0.0), 0.0)
        self.assertGreater(axis_bucket_norm(f, 0.0), 0.0)
        self.assertGreater(besov_norm(f, 0.0), 0.0)

    def test_hat_dominates_besov_off_axis(self):
        rng = np.random.default_rng(3)
        for s in (-0.5, 0.0, 1.0):
            f = random_field(self.grid, rng, 6)
            g = f - axis_part(f)
            self.assertGreaterEqual(hat_besov_norm(g, s), besov_norm(g, s) * (1.0 - 1e-10))

    def test_hat_plus_bucket_dominates_besov(self):
        rng = np.random.default_rng(4)
        fields = [random_field(self.grid, rng, 6) for _ in range(3)]
        fields.append(_mode(self.grid, 0, 5) + _mode(self.grid, 3, 1, 0.01))
        for f in fields:
            for s in (-0.5, 0.0, 1.0):
                total = hat_besov_norm(f, s) + axis_bucket_norm(f, s)
                self.assertGreaterEqual(total, besov_norm(f, s) * (1.0 - 1e-10))

    def test_axis_content_escapes_hat_sum(self):
        f = _mode(self.grid, 0, 5) + _mode(self.grid, 3, 1, 0.01)
        self.assertLess(hat_besov_norm(f, 1.0), besov_norm(f, 1.0))
        self.assertAlmostEqual(axis_bucket_norm(f, 1.0), axis_bucket_norm(_mode(self.grid, 0, 5), 1.0), places=12)

    def test_hybrid_equals_hat_at_low_frequency(self):
        f = _mode(self.grid, 1, 1) + _mode(self.grid, 2, 1, 0.5)
        self.assertAlmostEqual(hybrid_norm(f, 0.5, 0.5), hat_besov_norm(f, 0.5), places=12)

    def test_vector_norm_sums_components(self):
        f = _mode(self.grid, 12, 0)
        v = VectorField(f, f * 2.0)
        self.assertAlmostEqual(hat_besov_norm(v, 0.0), math.sqrt(5.0) * hat_besov_norm(f, 0.0), places=10)

    def test_homogeneity(self):
        f = random_field(self.grid, np.random.default_rng(4), 6)
        self.assertAlmostEqual(hat_besov_norm(2.0 * f, 0.5), 2.0 * hat_besov_norm(f, 0.5), places=8)

    def test_norm_equivalence_on_one_shell(self):
        f = _mode(self.grid, 12, 0)
        self.assertAlmostEqual(norm_equivalence_ratio(f, 1.0), 1.5, places=10)

    def test_embedding_constant(self):
        constant = hybrid_embedding_constant(get_layout(self.grid), 0.0, 1.0)
        self.assertTrue(math.isfinite(constant))
        self.assertGreaterEqual(constant, 1.0)

    def test_linf_embedding(self):
        f = random_field(self.grid, np.random.default_rng(8), 6)
        self.assertGreater(linf_embedding_ratio(f), 0.0)
        with self.assertRaises(ParameterRangeError):
            linf_embedding_ratio(SpectralField.zeros(self.grid))

    def test_block_csv(self):
        f = _mode(self.grid, 12, 0)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, 'blocks.csv')
            self.assertTrue(write_block_csv(path, f))
            with open(path) as fh:
                lines = fh.read().splitlines()
        self.assertEqual(lines[0], 'q,k,l2_norm,regime')
        self.assertEqual(len(lines) - 1, len(get_layout(self.grid).blocks))


class TestParaproduct(unittest.TestCase):

    def test_reconstruction(self):
        grid = Grid.square(32)
        rng = np.random.default_rng(12)
        f, g = random_field(grid, rng, 6), random_field(grid, rng, 6)
        parts = bony_decompose(f, g)
        error = (parts.T + parts.Tbar + parts.R - parts.product).l2_norm()
        self.assertLess(error, 1e-11 * parts.product.l2_norm())

    def test_high_low_pair_lands_in_tbar(self):
        grid = Grid.square(128, 2.0 * math.pi)
        f = _mode(grid, 40, 0)
        g = _mode(grid, 1, 1)
        parts = bony_decompose(f, g)
        scale = parts.product.l2_norm()
        self.assertLess(parts.T.l2_norm(), 1e-12 * scale)
        self.assertLess(parts.R.l2_norm(), 1e-12 * scale)
        self.assertLess((parts.Tbar - parts.product).l2_norm(), 1e-12 * scale)

    def test_product_law_ranges(self):
        grid = Grid.square(32)
        rng = np.random.default_rng(3)
        f, g = random_field(grid, rng, 4), random_field(grid, rng, 4)
        with self.assertRaises(ParameterRangeError):
            product_law_ratio(f, g, 1.5, 0.0)
        with self.assertRaises(ParameterRangeError):
            product_law_ratio(f, g, -0.5, 0.5)
        with self.assertRaises(ParameterRangeError):
            product_law_ratio(f, g, 1.0, 1.0, variant='other')

    def test_product_law_ratio_scale_free(self):
        grid = Grid.square(32)
        rng = np.random.default_rng(6)
        f, g = random_field(grid, rng, 4), random_field(grid, rng, 4)
        for variant in ('hat', 'hybrid'):
            ratio = product_law_ratio(f, g, 1.0, 1.0, variant)
            self.assertGreater(ratio, 0.0)
            self.assertAlmostEqual(product_law_ratio(2.0 * f, 3.0 * g, 1.0, 1.0, variant), ratio, places=10)

    def test_commutator_vanishes_for_constant_transport(self):
        grid = Grid.square(32)
        f = random_field(grid, np.random.default_rng(9), 6)
        e1 = SpectralField.zeros(grid)
        e1.coeffs[0, 0] = 0.7
        e2 = SpectralField.zeros(grid)
        e2.coeffs[0, 0] = -0.3
        table = commutator_table(VectorField(e1, e2), f, m=1.0, n=1)
        self.assertTrue(table)
        scale = f.l2_norm() ** 2 * grid.k_max ** 4
        self.assertLess(max(table.values()), 1e-12 * scale)


if __name__ == '__main__':
    unittest.main()

import math
import os
import tempfile
import unittest

import numpy as np

from mhdlab_modules import config
from mhdlab_modules.diagnostics import (
    NormLedger, invariant_residuals, det_coupling_residual, vorticity, alfven_identity_residual,
    vorticity_equation_residual, dissipation_identity_residual, localized_dissipation,
    EnergyFunctionalParams, iota_threshold, energy_functional, quadrature_error, XMonitor, x_of_t,
    dissipation_budget, write_report, gnuplot_script,
)
from mhdlab_modules.errors import LedgerError, ParameterRangeError, StructureError
from mhdlab_modules.littlewood_paley import get_layout
from mhdlab_modules.solver import MHDState, build_state, step
from mhdlab_modules.spectral import (
    Grid, MatrixField, VectorField, leray_project, partial_derivative, random_field, scaled_to_rms,
    solenoidal_from_stream, solenoidal_mode, transform_inverse,
)

TWO_PI = 2.0 * math.pi


def _row(t, **values):
    row = {name: 0.0 for name in config.LEDGER_COLUMNS}
    row['t'] = t
    row.update(values)
    return row


def _linear_states(grid, modes_u, modes_h, dt, steps, every):
    state = build_state(solenoidal_mode(grid, *modes_u, 1e-3), solenoidal_mode(grid, *modes_h, 1e-3), linear=True)
    states = [state]
    for n in range(1, steps + 1):
        state = step(state, dt, nonlinear=False)
        if n % every == 0:
            states.append(state)
    return states


def _volume_preserving(grid, amplitude, seed):
    rng = np.random.default_rng(seed)
    H = scaled_to_rms(solenoidal_from_stream(random_field(grid, rng, 3)), amplitude)
    return build_state(VectorField.zeros(grid), H)


class TestLedger(unittest.TestCase):

    def test_write_read(self):
        ledger = NormLedger()
        ledger.append(_row(0.0, l2_u=1.0 / 3.0))
        ledger.append(_row(0.1, X_t=2.5))
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, config.LEDGER_NAME)
            self.assertTrue(ledger.write(path))
            back = NormLedger.read(path)
        self.assertEqual(back.rows, ledger.rows)
        self.assertEqual(back.columns, config.LEDGER_COLUMNS)
        np.testing.assert_array_equal(back.column('t'), [0.0, 0.1])

    def test_rejects_non_finite(self):
        ledger = NormLedger()
        with self.assertRaises(LedgerError):
            ledger.append(_row(0.0, l2_h=float('nan')))

    def test_rejects_non_increasing_time(self):
        ledger = NormLedger()
        ledger.append(_row(0.5))
        with self.assertRaises(LedgerError):
            ledger.append(_row(0.5))

    def test_missing_and_malformed(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with self.assertRaises(LedgerError):
                NormLedger.read(os.path.join(tmpdir, 'absent.csv'))
            path = os.path.join(tmpdir, 'bad.csv')
            with open(path, 'w') as f:
                f.write("t,l2_u\n0.0,1.0\n0.1\n")
            with self.assertRaises(LedgerError):
                NormLedger.read(path)
            with open(path, 'w') as f:
                f.write("t,l2_u\n0.0,abc\n")
            with self.assertRaises(LedgerError):
                NormLedger.read(path)


class TestResiduals(unittest.TestCase):

    def test_det_coupling_on_constructed_state(self):
        state = _volume_preserving(Grid.square(32), 1e-3, 1)
        self.assertLess(det_coupling_residual(state), 1e-15)

    def test_alfven_identity(self):
        grid = Grid.square(32)
        rng = np.random.default_rng(2)
        H = leray_project(VectorField(random_field(grid, rng, 6), random_field(grid, rng, 6)))
        scale = float(np.max(np.abs(transform_inverse(H.y))))
        self.assertLess(alfven_identity_residual(H), 1e-12 * max(scale, 1.0))

    def test_vorticity_of_shear(self):
        grid = Grid.square(16, TWO_PI)
        u = solenoidal_mode(grid, 0, 1, 1.0)
        w = transform_inverse(vorticity(u))
        x1, x2 = grid.coords()
        # u = (-sin x2, 0): curl = d2 u1 = -cos x2, and Lambda^-1 leaves |xi| = 1 unchanged
        self.assertLess(np.max(np.abs(w + np.cos(x2))), 1e-13)

    def test_vorticity_equation_converges(self):
        grid = Grid.square(16, TWO_PI)
        coarse = _linear_states(grid, (1, 1), (1, 2), 1e-3, 200, 20)
        fine = _linear_states(grid, (1, 1), (1, 2), 1e-3, 200, 10)
        ratio = vorticity_equation_residual(coarse, False) / vorticity_equation_residual(fine, False)
        self.assertGreater(ratio, 2.0 ** 1.9)

    def test_vorticity_equation_needs_three_snapshots(self):
        grid = Grid.square(16, TWO_PI)
        with self.assertRaises(ParameterRangeError):
            vorticity_equation_residual([MHDState.zeros(grid)] * 2)


class TestDissipationIdentity(unittest.TestCase):

    def test_volume_preserving_family(self):
        grid = Grid.square(64)
        for seed in range(10):
            state = _volume_preserving(grid, 1e-2, seed)
            self.assertLess(dissipation_identity_residual(state.A), 1e-8, msg=f"seed {seed}")

    def test_structure_required(self):
        grid = Grid.square(32)
        rng = np.random.default_rng(0)
        A = MatrixField(*(1e-2 * random_field(grid, rng, 4) for _ in range(4)))
        with self.assertRaises(StructureError):
            dissipation_identity_residual(A)

    def test_violated_volume_gives_proportional_residual(self):
        grid = Grid.square(64)
        A = _volume_preserving(grid, 1e-2, 2).A
        phi = partial_derivative(A.a22, 1)
        dphi1 = partial_derivative(phi, 1)
        dphi2 = partial_derivative(phi, 2)

        def violated(delta):
            # row 1 stays a gradient; only det(I + A) = 1 breaks
            return MatrixField(A.a11 + dphi1 * delta, A.a12 + dphi2 * delta, A.a21, A.a22)

        def volume(B):
            a11, a12, a21, a22 = (transform_inverse(e) for e in B.entries())
            return float(np.max(np.abs((1.0 + a11) * (1.0 + a22) - a12 * a21 - 1.0)))

        with self.assertRaises(StructureError) as ctx:
            dissipation_identity_residual(violated(1.0))
        self.assertEqual(ctx.exception.hypothesis, "det A = 1")

        deltas = (1.0, 2.0, 4.0)
        residuals = [dissipation_identity_residual(violated(d), check_hypotheses=False) for d in deltas]
        violations = [volume(violated(d)) for d in deltas]
        self.assertGreater(residuals[0], 1e3 * dissipation_identity_residual(A))
        for r, v in zip(residuals[1:], violations[1:]):
            self.assertAlmostEqual((r / v) / (residuals[0] / violations[0]), 1.0, delta=0.01)

    def test_localized_terms(self):
        grid = Grid.square(64)
        state = _volume_preserving(grid, 1e-2, 3)
        layout = get_layout(grid)
        q, k = layout.blocks[len(layout.blocks) // 2]
        terms = localized_dissipation(state.A, q, k, layout)
        self.assertGreaterEqual(terms.lhs, 0.0)


class TestEnergyFunctionals(unittest.TestCase):

    def test_iota_threshold_covers_default(self):
        layout = get_layout(Grid.square(64))
        threshold = EnergyFunctionalParams().validate(layout)
        self.assertGreater(threshold, config.DEFAULT_IOTA)
        self.assertEqual(threshold, iota_threshold(layout))
        with self.assertRaises(ParameterRangeError):
            EnergyFunctionalParams(iota=0.9).validate(layout)

    def test_regime_one_value_positive(self):
        grid = Grid.square(64)
        u = solenoidal_mode(grid, 12, 1, 1e-3)
        state = MHDState(u, u * 0.5, MatrixField.zeros(grid))
        value = energy_functional(state, -1, -1)
        self.assertEqual(value.regime, 1)
        self.assertTrue(value.active)
        self.assertGreater(value.value, 0.0)

    def test_inactive_block(self):
        state = MHDState.zeros(Grid.square(16))
        value = energy_functional(state, 40, 40)
        self.assertFalse(value.active)
        self.assertEqual(value.value, 0.0)

    def test_damped_block_functional_decreases(self):
        grid = Grid.square(128)
        states = _linear_states(grid, (24, 32), (24, 32), 1e-3, 500, 50)
        layout = get_layout(grid)
        values = [energy_functional(s, 1, 0, layout=layout) for s in states]
        self.assertEqual(values[0].regime, 2)
        self.assertGreater(values[0].value, 0.0)
        for before, after in zip(values, values[1:]):
            self.assertLessEqual(after.value, before.value * (1.0 + 1e-12))


class TestTimeSeries(unittest.TestCase):

    def test_quadrature_error(self):
        times = np.linspace(0.0, 1.0, 11)
        self.assertLess(quadrature_error(times, 2.0 * times + 1.0), 1e-14)
        self.assertGreater(quadrature_error(times, times ** 2), 0.0)
        self.assertEqual(quadrature_error([0.0, 1.0], [1.0, 2.0]), 0.0)

    def test_x_monitor(self):
        grid = Grid.square(16, TWO_PI)
        monitor = XMonitor()
        norms = monitor.update(MHDState.zeros(grid))
        self.assertEqual(norms['X_t'], 0.0)
        states = _linear_states(grid, (1, 1), (1, 2), 1e-3, 100, 20)
        series = x_of_t(states)
        self.assertEqual(len(series.times), len(states))
        self.assertTrue(np.all(np.diff(series.values) >= 0.0))

    def test_budget_and_report(self):
        grid = Grid.square(16, TWO_PI)
        states = _linear_states(grid, (1, 1), (1, 2), 1e-3, 100, 20)
        budget = dissipation_budget(states)
        self.assertEqual(len(budget), len(states))
        self.assertEqual(budget[0].h_hatB1_sq, 0.0)
        self.assertGreater(budget[-1].h_hatB1_sq, 0.0)
        ledger = NormLedger()
        monitor = XMonitor()
        for state in states:
            row = {'t': state.t, 'l2_u': state.u.l2_norm(), 'l2_h': state.H.l2_norm()}
            row.update(monitor.update(state))
            row.update(invariant_residuals(state))
            ledger.append(row)
        with tempfile.TemporaryDirectory() as tmpdir:
            written = write_report(tmpdir, states, ledger)
            names = sorted(os.path.basename(p) for p in written)
            self.assertEqual(names, sorted([
                config.SUMMARY_NAME, config.BUDGET_NAME, config.BLOCKS_U_NAME, config.BLOCKS_H_NAME,
                config.FUNCTIONALS_NAME, config.GNUPLOT_NAME,
            ]))
            with open(os.path.join(tmpdir, config.SUMMARY_NAME)) as f:
                summary = f.read()
        self.assertIn('invariant maxima', summary)
        self.assertIn('X(0)', summary)

    def test_gnuplot_script_columns(self):
        script = gnuplot_script()
        self.assertIn(f"using 1:{config.LEDGER_COLUMNS.index('X_t') + 1}", script)


if __name__ == '__main__':
    unittest.main()

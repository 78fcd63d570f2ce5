import os
import json
import tempfile
import unittest
from unittest.mock import patch

import mhdlab
from mhdlab_modules import config
from mhdlab_modules.errors import BlowUpError, InitializationError
from mhdlab_modules.utils import set_log_file

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, 'configs')

SMALL_RUN = (
    "grid.n1 = 16\n"
    "grid.n2 = 16\n"
    "time.dt = 0.001\n"
    "time.t_end = 0.01\n"
    "init.kind = random\n"
    "init.amplitude = 0.001\n"
    "init.band = 2\n"
    "output.cadence = 5\n"
)


@patch.object(config, 'LOG_FILE', None)
class TestCli(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.tmpdir = self.tmp.name

    def tearDown(self):
        set_log_file(None)
        self.tmp.cleanup()

    def _simulate(self, text=SMALL_RUN):
        cfg_path = os.path.join(self.tmpdir, 'small.cfg')
        with open(cfg_path, 'w') as f:
            f.write(text)
        run_dir = os.path.join(self.tmpdir, 'run')
        return mhdlab.main(['simulate', cfg_path, '--output-dir', run_dir]), run_dir

    def test_no_command(self):
        self.assertEqual(mhdlab.main([]), mhdlab.EXIT_USAGE)

    def test_parse_norm_spec(self):
        self.assertEqual(mhdlab.parse_norm_spec('B:1'), ('B', 1.0, None))
        self.assertEqual(mhdlab.parse_norm_spec('BH:-0.5'), ('BH', -0.5, None))
        self.assertEqual(mhdlab.parse_norm_spec('HB:0,1'), ('HB', 0.0, 1.0))
        for bad in ('HB:1', 'B:1,2', 'L2', 'B:x'):
            with self.assertRaises(ValueError, msg=bad):
                mhdlab.parse_norm_spec(bad)

    def test_linear_map(self):
        output = os.path.join(self.tmpdir, config.DISPERSION_NAME)
        self.assertEqual(mhdlab.main(['linear-map', '--n', '16', '--output', output]), mhdlab.EXIT_OK)
        with open(output) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], ','.join(config.DISPERSION_COLUMNS))
        self.assertEqual(len(lines) - 1, 16 * 16 - 1)

    def test_linear_map_odd_grid(self):
        output = os.path.join(self.tmpdir, 'x.csv')
        self.assertEqual(mhdlab.main(['linear-map', '--n', '15', '--output', output]), mhdlab.EXIT_USAGE)

    def test_simulate_bad_config(self):
        code, run_dir = self._simulate("grid.n1 = 17\n")
        self.assertEqual(code, mhdlab.EXIT_USAGE)
        self.assertFalse(os.path.exists(run_dir))

    def test_simulate_verify_report(self):
        code, run_dir = self._simulate()
        self.assertEqual(code, mhdlab.EXIT_OK)
        with open(os.path.join(run_dir, config.MANIFEST_NAME)) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['status'], 'completed')
        self.assertEqual(manifest['version'], config.VERSION)
        self.assertIn(config.LEDGER_NAME, manifest['files'])
        self.assertNotIn(config.MANIFEST_NAME, manifest['files'])

        self.assertEqual(mhdlab.main(['verify', run_dir]), mhdlab.EXIT_OK)
        self.assertEqual(mhdlab.main(['report', run_dir]), mhdlab.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(run_dir, config.SUMMARY_NAME)))

        snapshot = os.path.join(run_dir, 'snap_000010.bin')
        self.assertEqual(mhdlab.main(['besov', snapshot, 'BH:0', 'HB:0,1', '--field', 'u']), mhdlab.EXIT_OK)
        self.assertEqual(mhdlab.main(['besov', snapshot, 'Q:1']), mhdlab.EXIT_USAGE)

    @patch('mhdlab.say')
    @patch('mhdlab_modules.solver.init_state', side_effect=InitializationError("det(A0) = 1 not reached after 11 iterations"))
    def test_rejected_initial_data_is_reported_apart(self, mock_init, mock_say):
        code, run_dir = self._simulate()
        self.assertEqual(code, mhdlab.EXIT_FAILED_RUN)
        messages = " ".join(str(c.args[0]) for c in mock_say.call_args_list)
        self.assertIn("Initial data rejected before the first step", messages)
        self.assertNotIn("mid-integration", messages)
        with open(os.path.join(run_dir, config.MANIFEST_NAME)) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['status'], 'truncated')
        self.assertEqual(manifest['failure_stage'], 'initialization')
        with open(os.path.join(run_dir, config.FAILURE_REPORT_NAME)) as f:
            self.assertIn("stage: initialization", f.read())

    @patch('mhdlab.say')
    @patch('mhdlab_modules.solver.step', side_effect=BlowUpError(0.001, {}))
    def test_blow_up_is_reported_as_integration_failure(self, mock_step, mock_say):
        code, run_dir = self._simulate()
        self.assertEqual(code, mhdlab.EXIT_FAILED_RUN)
        messages = " ".join(str(c.args[0]) for c in mock_say.call_args_list)
        self.assertIn("mid-integration", messages)
        with open(os.path.join(run_dir, config.MANIFEST_NAME)) as f:
            self.assertEqual(json.load(f)['failure_stage'], 'integration')

    def test_large_data_preset_ends_in_report(self):
        run_dir = os.path.join(self.tmpdir, 'large')
        code = mhdlab.main(['simulate', os.path.join(CONFIG_DIR, 'large_probe.cfg'), '--output-dir', run_dir])
        self.assertIn(code, (mhdlab.EXIT_OK, mhdlab.EXIT_FAILED_RUN))
        with open(os.path.join(run_dir, config.MANIFEST_NAME)) as f:
            manifest = json.load(f)
        if code == mhdlab.EXIT_OK:
            self.assertEqual(manifest['status'], 'completed')
            return
        self.assertEqual(manifest['status'], 'truncated')
        self.assertTrue(os.path.exists(os.path.join(run_dir, config.TRUNCATION_MARKER)))
        with open(os.path.join(run_dir, config.FAILURE_REPORT_NAME)) as f:
            report = f.read()
        self.assertIn("mhdlab run truncated", report)
        self.assertIn("amplitude=0.5", report)

    def test_simulate_missing_config(self):
        code = mhdlab.main(['simulate', os.path.join(self.tmpdir, 'absent.cfg')])
        self.assertEqual(code, mhdlab.EXIT_USAGE)

    def test_zero_final_time_writes_one_snapshot(self):
        code, run_dir = self._simulate("grid.n1 = 16\ngrid.n2 = 16\ninit.kind = zero\ntime.t_end = 0\n")
        self.assertEqual(code, mhdlab.EXIT_OK)
        snapshots = sorted(name for name in os.listdir(run_dir) if name.startswith('snap_'))
        self.assertEqual(snapshots, ['snap_000000.bin'])
        snapshot = os.path.join(run_dir, snapshots[0])
        self.assertEqual(mhdlab.main(['besov', snapshot, 'B:0', 'BH:1', 'HB:0,1']), mhdlab.EXIT_OK)

    def test_ledgers_are_reproducible(self):
        code, run_dir = self._simulate()
        self.assertEqual(code, mhdlab.EXIT_OK)
        with open(os.path.join(run_dir, config.LEDGER_NAME), 'rb') as f:
            first = f.read()
        code, run_dir = self._simulate()
        self.assertEqual(code, mhdlab.EXIT_OK)
        with open(os.path.join(run_dir, config.LEDGER_NAME), 'rb') as f:
            self.assertEqual(f.read(), first)

    def test_help_exits_cleanly(self):
        for command in ([], ['simulate'], ['linear-map'], ['besov'], ['paraproduct-check'], ['verify'], ['report']):
            with self.assertRaises(SystemExit) as ctx:
                mhdlab.main(command + ['--help'])
            self.assertEqual(ctx.exception.code, 0)

    def test_verify_missing_run(self):
        self.assertEqual(mhdlab.main(['verify', os.path.join(self.tmpdir, 'absent')]), mhdlab.EXIT_USAGE)

    def test_verify_without_ledger(self):
        self.assertEqual(mhdlab.main(['verify', self.tmpdir]), mhdlab.EXIT_USAGE)

    def test_besov_missing_snapshot(self):
        self.assertEqual(mhdlab.main(['besov', os.path.join(self.tmpdir, 'none.bin'), 'B:0']), mhdlab.EXIT_USAGE)

    @patch('mhdlab.run_paraproduct_rich', return_value=True)
    @patch('mhdlab.run_paraproduct_plain', return_value=False)
    def test_paraproduct_check_exit_code(self, mock_plain, mock_rich):
        code = mhdlab.main(['paraproduct-check', '--pairs', '2', '--grids', '32', '64'])
        if mhdlab.RICH_AVAILABLE and mhdlab.console:
            self.assertEqual(code, mhdlab.EXIT_OK)
            mock_rich.assert_called_once_with((32, 64), 2, 0)
        else:
            self.assertEqual(code, mhdlab.EXIT_USAGE)
            mock_plain.assert_called_once_with((32, 64), 2, 0)


if __name__ == '__main__':
    unittest.main()

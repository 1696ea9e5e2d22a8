import io
import json
import tempfile
from contextlib import redirect_stderr
from pathlib import Path

from django.test import TestCase, override_settings

from lab.cli import run
from lab.models import LabRun
from lab.serializers import read_result


class CommandLineTests(TestCase):
    """Códigos de salida, archivos de resultados y registro de ejecuciones."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def run_quietly(self, *argv):
        with redirect_stderr(io.StringIO()) as stderr:
            code = run(list(argv))
        return code, stderr.getvalue()

    def out(self, name):
        return str(self.dir / name)

    def test_couple_on_the_line(self):
        path = self.out('couple.json')
        code, _ = self.run_quietly('couples', '--group', 'z1', '--n', '3', '--window', '40', '--out', path)
        self.assertEqual(code, 0)
        data = json.loads(Path(path).read_text())
        self.assertTrue(data['success'])
        self.assertEqual(data['kind'], 'couple')
        self.assertEqual(data['ratio'], '3/2')
        self.assertEqual(data['diam_F'], 17)

    def test_scale_one_is_rejected(self):
        code, stderr = self.run_quietly('decompose', '--group', 'z1', '--scale', '1')
        self.assertEqual(code, 2)
        self.assertIn('escala', stderr)
        run_record = LabRun.objects.get()
        self.assertEqual(run_record.exit_code, 2)
        self.assertFalse(run_record.succeeded())

    def test_exact_return_probabilities(self):
        path = self.out('return.csv')
        code, _ = self.run_quietly('walk', '--group', 'z1', '--stat', 'return', '--nmax', '4', '--exact',
                                   '--out', path)
        self.assertEqual(code, 0)
        text = Path(path).read_text()
        self.assertIn('4,0.375', text)
        self.assertEqual(read_result(path)['kind'], 'walk-return')

    def test_unknown_group_is_a_usage_error(self):
        code, _ = self.run_quietly('ball', '--group', 'sl2z', '--radius', '2')
        self.assertEqual(code, 2)

    def test_missing_parameter(self):
        code, stderr = self.run_quietly('ball', '--group', 'z1')
        self.assertEqual(code, 2)
        self.assertIn('--radius', stderr)

    def test_memcap_is_a_resource_error(self):
        code, _ = self.run_quietly('ball', '--group', 'f2', '--radius', '8', '--memcap', '100')
        self.assertEqual(code, 3)
        self.assertEqual(LabRun.objects.get().exit_code, 3)

    def test_ball_sizes(self):
        path = self.out('ball.json')
        self.assertEqual(self.run_quietly('ball', '--group', 'heis', '--radius', '2', '--out', path)[0], 0)
        data = json.loads(Path(path).read_text())
        self.assertEqual(data['size'], 17)
        self.assertEqual(data['sizes'], [1, 4, 12])

    def test_growth_csv(self):
        path = self.out('growth.csv')
        self.assertEqual(self.run_quietly('growth', '--group', 'f2', '--radius', '4', '--out', path)[0], 0)
        data = read_result(path)
        self.assertEqual([int(row['v']) for row in data['rows']], [2 * 3 ** n - 1 for n in range(5)])

    def test_runs_are_recorded_with_digest(self):
        path = self.out('scan.csv')
        code, _ = self.run_quietly('folner-scan', '--group', 'z2', '--family', 'boxes', '--nmax', '5',
                                   '--out', path)
        self.assertEqual(code, 0)
        record = LabRun.objects.get()
        self.assertTrue(record.succeeded())
        self.assertEqual(record.output_path, path)
        self.assertEqual(len(record.output_sha256), 64)
        self.assertEqual(record.parameters['nmax'], 5)

    @override_settings(COARSE_LAB_RECORD_RUNS=False)
    def test_recording_can_be_disabled(self):
        self.run_quietly('ball', '--group', 'z1', '--radius', '1', '--out', self.out('b.json'))
        self.assertFalse(LabRun.objects.exists())

    def test_seeded_walks_are_byte_identical(self):
        first, second = self.out('a.csv'), self.out('b.csv')
        for path in (first, second):
            code, _ = self.run_quietly('walk', '--group', 'heis', '--stat', 'drift', '--grid', '5', '10',
                                       '--trials', '500', '--seed', '7', '--out', path)
            self.assertEqual(code, 0)
        self.assertEqual(Path(first).read_bytes(), Path(second).read_bytes())
        digests = set(LabRun.objects.values_list('output_sha256', flat=True))
        self.assertEqual(len(digests), 1)

    def test_greedy_failure_is_reported_not_raised(self):
        path = self.out('partition.json')
        code, _ = self.run_quietly('decompose', '--group', 'z1', '--scale', '3', '--method', 'greedy',
                                   '--radius', '30', '--colors', '1', '--stretch', '2', '--out', path)
        self.assertEqual(code, 0)
        data = json.loads(Path(path).read_text())
        self.assertFalse(data['success'])
        self.assertEqual(data['error'], 'color_budget_exceeded')

    def test_canonical_decomposition(self):
        path = self.out('canonical.json')
        code, _ = self.run_quietly('decompose', '--group', 'z2', '--scale', '2', '--window', '10', '--out', path)
        self.assertEqual(code, 0)
        data = json.loads(Path(path).read_text())
        self.assertEqual(data['method'], 'canonical')
        self.assertTrue(data['report']['valid'])

    def test_profile_with_couple_bounds(self):
        path = self.out('profile.csv')
        code, _ = self.run_quietly('profile', '--group', 'z1', '--rmax', '18', '--couples', '2', '--out', path)
        self.assertEqual(code, 0)
        data = read_result(path)
        self.assertTrue(data['sandwich_ok'])
        self.assertEqual(sum(row['method'] == 'upper_bound' for row in data['rows']), 2)

    def test_config_file(self):
        config = self.dir / 'run.json'
        config.write_text(json.dumps({'group': 'z1', 'radius': 3}))
        path = self.out('ball.json')
        self.assertEqual(self.run_quietly('ball', '--config', str(config), '--out', path)[0], 0)
        self.assertEqual(json.loads(Path(path).read_text())['size'], 7)

    def test_report_pipeline(self):
        couple = self.out('z1-couple.json')
        drift = self.out('z1-drift.csv')
        free = self.out('f2-drift.csv')
        free_couple = self.out('f2-couple.json')
        self.run_quietly('couples', '--group', 'z1', '--n', '2', '--out', couple)
        self.run_quietly('walk', '--group', 'z1', '--stat', 'drift', '--exact', '--grid', '25', '50', '100',
                         '--out', drift)
        self.run_quietly('walk', '--group', 'f2', '--stat', 'drift', '--grid', '25', '50', '100',
                         '--trials', '2000', '--out', free)
        self.assertEqual(self.run_quietly('couples', '--group', 'f2', '--n', '3', '--out', free_couple)[0], 0)
        summary = self.out('report.json')
        code, _ = self.run_quietly('report', couple, drift, free, free_couple, '--format', 'json', '--out', summary)
        self.assertEqual(code, 0)
        rows = {row['group']: row for row in json.loads(Path(summary).read_text())['rows']}
        self.assertEqual(rows['z1']['verdict'], 'pass')
        self.assertEqual(rows['f2']['verdict'], 'fail')
        self.assertFalse(rows['f2']['couples_found'])
        self.assertFalse(rows['f2']['drift_ok'])

    def test_report_full_pipeline_on_the_square(self):
        files = {
            'couple': (self.out('z2-couple.json'), ('couples', '--n', '2')),
            'profile': (self.out('z2-profile.csv'), ('profile', '--rmax', '16', '--couples', '2')),
            'return': (self.out('z2-return.csv'), ('walk', '--stat', 'return', '--exact', '--nmax', '30')),
            'drift': (self.out('z2-drift.csv'),
                      ('walk', '--stat', 'drift', '--exact', '--grid', '25', '50', '100')),
            'cautious': (self.out('z2-cautious.csv'),
                         ('walk', '--stat', 'cautious', '--exact', '--eps', '1', '--grid', '25', '100', '400')),
        }
        for name, (path, argv) in files.items():
            with self.subTest(step=name):
                code, stderr = self.run_quietly(*argv[:1], '--group', 'z2', *argv[1:], '--out', path)
                self.assertEqual(code, 0, stderr)
        summary = self.out('z2-report.json')
        code, _ = self.run_quietly('report', *(path for path, _ in files.values()), '--format', 'json',
                                   '--out', summary)
        self.assertEqual(code, 0)
        row = json.loads(Path(summary).read_text())['rows'][0]
        self.assertEqual(row['group'], 'z2')
        self.assertTrue(row['couples_found'])
        self.assertTrue(row['profile_ok'])
        self.assertTrue(row['return_ok'])
        self.assertTrue(row['drift_ok'])
        self.assertTrue(row['cautious_ok'])
        self.assertEqual(row['verdict'], 'pass')

    def test_free_group_couples_are_not_found(self):
        path = self.out('f2-couple.json')
        code, _ = self.run_quietly('couples', '--group', 'f2', '--n', '3', '--out', path)
        self.assertEqual(code, 0)
        data = json.loads(Path(path).read_text())
        self.assertFalse(data['success'])
        self.assertEqual(data['error'], 'not_found')
        self.assertEqual(data['window_radius'], 4)
        self.assertEqual(data['best_ratio'], '1457/53')
        self.assertTrue(LabRun.objects.get().succeeded())

    def test_censoring_limit_on_the_command_line(self):
        path = self.out('heis-drift.csv')
        code, _ = self.run_quietly('walk', '--group', 'heis', '--stat', 'drift', '--grid', '20', '--trials', '400',
                                   '--length-radius', '6', '--max-censored', '0.01', '--out', path)
        self.assertEqual(code, 3)
        code, _ = self.run_quietly('walk', '--group', 'heis', '--stat', 'drift', '--grid', '20', '--trials', '400',
                                   '--length-radius', '6', '--out', path)
        self.assertEqual(code, 0)
        self.assertGreater(int(read_result(path)['rows'][0]['censored']), 0)

    def test_report_without_inputs(self):
        self.assertEqual(self.run_quietly('report')[0], 2)

    def test_report_schema_mismatch(self):
        stale = self.dir / 'stale.json'
        stale.write_text(json.dumps({'schema_version': 99, 'kind': 'couple', 'group': 'z1'}))
        self.assertEqual(self.run_quietly('report', str(stale))[0], 2)

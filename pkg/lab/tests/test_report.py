import hashlib
import json
import math
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import DomainError
from lab.groups import get_group
from lab.report_service import ReportService, cautiousness_constancy, lattice_corrected
from lab.serializers import csv_text, dumps, read_result, write_atomic
from lab.walk_service import StepDistribution, WalkService


class SerializerTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_fractions_and_numpy_in_json(self):
        data = json.loads(dumps({'ratio': Fraction(3, 2), 'whole': Fraction(4), 'n': np.int64(3),
                                 'x': np.float64(0.5), 'v': np.arange(3)}))
        self.assertEqual(data, {'ratio': '3/2', 'whole': 4, 'n': 3, 'x': 0.5, 'v': [0, 1, 2]})

    def test_atomic_write_returns_digest(self):
        path = self.dir / 'nested' / 'out.json'
        digest = write_atomic(path, 'hola\n')
        self.assertEqual(path.read_text(), 'hola\n')
        self.assertEqual(digest, hashlib.sha256(b'hola\n').hexdigest())
        self.assertEqual([p.name for p in path.parent.iterdir()], ['out.json'])

    def test_csv_header_and_rows(self):
        text = csv_text('walk-return', 'z1', ('n', 'value'), [(0, 1.0), (2, 0.5), (3, None)], {'trials': 10})
        path = self.dir / 'series.csv'
        write_atomic(path, text)
        data = read_result(path)
        self.assertEqual(data['kind'], 'walk-return')
        self.assertEqual(data['group'], 'z1')
        self.assertEqual(data['trials'], 10)
        self.assertEqual(data['rows'][1], {'n': '2', 'value': '0.5'})
        self.assertEqual(data['rows'][2]['value'], '')

    def test_schema_mismatch(self):
        path = self.dir / 'old.json'
        path.write_text(json.dumps({'schema_version': 0, 'kind': 'couple', 'group': 'z1'}))
        with self.assertRaises(DomainError):
            read_result(path)

    def test_missing_file(self):
        with self.assertRaises(DomainError):
            read_result(self.dir / 'missing.csv')


class ReportTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, name, text):
        path = self.dir / name
        write_atomic(path, text)
        return str(path)

    def couple(self, group, success):
        return self.write(f"{group}-couple.json", dumps({
            'schema_version': 1, 'kind': 'couple', 'group': group, 'success': success,
        }))

    def profile(self, group, exponent):
        fit = {'C': 1.2, 'exponent': exponent, 'p': 2, 'violation': False}
        return self.write(f"{group}-profile.csv", csv_text('profile', group, ('r', 'lambda'), [(1, 0.3)],
                                                         {'p': 2, 'fit': fit}))

    def drift(self, group, exponent):
        return self.write(f"{group}-drift.csv", csv_text('walk-drift', group, ('n', 'value'), [(25, 4.0)],
                                                       {'drift_exponent': exponent}))

    def test_amenable_and_free_rows(self):
        paths = [
            self.couple('z1', True), self.profile('z1', -1.94), self.drift('z1', 0.5),
            self.couple('f2', False), self.drift('f2', 0.98),
        ]
        report = ReportService.build(paths)
        rows = {row['group']: row for row in report['rows']}
        self.assertEqual(rows['z1']['verdict'], 'pass')
        self.assertEqual(rows['f2']['verdict'], 'fail')
        self.assertFalse(rows['f2']['couples_ok'])
        self.assertFalse(rows['f2']['drift_ok'])
        text = ReportService.render_text(report)
        self.assertIn('not found', text)
        self.assertIn('PASS -1.940', text)

    def test_return_bound_and_cautiousness(self):
        ret = self.write('lamp-return.csv', csv_text(
            'walk-return', 'lamp', ('n', 'value'), [(2, 0.3)],
            {'return_bound': {'c': 1.1, 'violation': False}},
        ))
        cautious = self.write('lamp-cautious.csv', csv_text(
            'walk-cautious', 'lamp', ('n', 'value', 'stderr', 'method'),
            [(25, 0.41, 0.01, 'monte_carlo'), (50, 0.40, 0.01, 'monte_carlo')],
        ))
        row = ReportService.build([ret, cautious])['rows'][0]
        self.assertTrue(row['return_ok'])
        self.assertTrue(row['cautious_ok'])
        self.assertEqual(row['verdict'], 'pass')

    def test_cautiousness_with_lattice_correction(self):
        rows = [(n, p, math.sqrt(p * (1 - p) / 1e5), 'monte_carlo')
                for n, p in ((100, 0.0394), (400, 0.0213), (1600, 0.0136))]
        cautious = self.write('z1-cautious.csv', csv_text(
            'walk-cautious', 'z1', ('n', 'value', 'stderr', 'method'), rows, {'eps': 0.5},
        ))
        report = ReportService.build([cautious])
        row = report['rows'][0]
        self.assertTrue(row['cautious_ok'])
        self.assertFalse(row['cautious_raw'])
        self.assertEqual(row['verdict'], 'pass')
        self.assertIn('FAIL varies', ReportService.render_text(report))

    def test_empty_input_list(self):
        with self.assertRaises(DomainError):
            ReportService.build([])

    def test_unrelated_kind_gives_no_verdict(self):
        path = self.write('z2-ball.json', dumps({'schema_version': 1, 'kind': 'ball', 'group': 'z2'}))
        self.assertEqual(ReportService.build([path])['rows'][0]['verdict'], 'n/a')


class ConstancyTests(SimpleTestCase):

    def test_monte_carlo_within_three_errors(self):
        rows = [{'value': '0.30', 'stderr': '0.01', 'method': 'monte_carlo'},
                {'value': '0.33', 'stderr': '0.01', 'method': 'monte_carlo'}]
        self.assertTrue(cautiousness_constancy(rows))
        rows[1]['value'] = '0.40'
        self.assertFalse(cautiousness_constancy(rows))

    def test_exact_half_of_maximum(self):
        rows = [{'value': str(v), 'stderr': '0.0', 'method': 'exact'} for v in (0.75, 0.5, 0.4)]
        self.assertTrue(cautiousness_constancy(rows))
        rows.append({'value': str(0.75 / 2 - 0.01), 'stderr': '0.0', 'method': 'exact'})
        self.assertFalse(cautiousness_constancy(rows))

    def test_single_point(self):
        self.assertIsNone(cautiousness_constancy([{'value': '0.5', 'stderr': '0', 'method': 'exact'}]))

    def test_lattice_correction_on_the_line(self):
        # paseo simple en Z, ε = 0.5, 10^5 ensayos en n = 100, 400, 1600
        rows = [
            {'n': str(n), 'value': str(p), 'stderr': str(math.sqrt(p * (1 - p) / 1e5)), 'method': 'monte_carlo'}
            for n, p in ((100, 0.0394), (400, 0.0213), (1600, 0.0136))
        ]
        self.assertFalse(cautiousness_constancy(rows))
        self.assertTrue(cautiousness_constancy(rows, 0.5))
        corrected = [row['value'] for row in lattice_corrected(rows, 0.5)]
        self.assertAlmostEqual(corrected[0], 0.0394 * math.exp(-math.pi ** 2 / 8 * (4 - 1 / 0.36)), places=12)

    def test_lattice_correction_of_exact_values(self):
        mu = StepDistribution.uniform(get_group('z1'))
        rows = [{'n': n, 'value': WalkService.cautiousness_exact(mu, n, 0.5), 'stderr': 0.0, 'method': 'exact'}
                for n in (100, 400, 1600)]
        self.assertFalse(cautiousness_constancy(rows))
        self.assertTrue(cautiousness_constancy(rows, 0.5))

    def test_barrier_on_the_lattice_point(self):
        # ε√n entero: la barrera efectiva es ε√n + 1
        row = lattice_corrected([{'n': '4', 'value': '0.5', 'stderr': '0.1'}], 1.0)[0]
        factor = math.exp(math.pi ** 2 / 8 * (4 / 9 - 1))
        self.assertAlmostEqual(row['value'], 0.5 * factor)
        self.assertAlmostEqual(row['stderr'], 0.1 * factor)

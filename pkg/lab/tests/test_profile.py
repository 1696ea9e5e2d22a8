import math
from fractions import Fraction

from django.test import SimpleTestCase

from lab.cayley import ball
from lab.exceptions import DomainError, NumericalError
from lab.folner_service import FolnerService
from lab.groups import get_group
from lab.profile_service import ProfileService, TestFunction
from lab.walk_service import StepDistribution


def path_eigenvalue(r: int) -> float:
    return 1 - math.cos(math.pi / (2 * r + 2))


class DirichletEigenvalueTests(SimpleTestCase):

    def test_line_small_radii(self):
        z1 = get_group('z1')
        self.assertAlmostEqual(ProfileService.l2_profile_exact(z1, 1), 1 - math.cos(math.pi / 4), places=9)
        self.assertAlmostEqual(ProfileService.l2_profile_exact(z1, 5), 1 - math.cos(math.pi / 12), places=9)

    def test_line_closed_form(self):
        z1 = get_group('z1')
        for r in range(2, 41):
            with self.subTest(r=r):
                self.assertLess(abs(ProfileService.l2_profile_exact(z1, r) - path_eigenvalue(r)), 1e-8)

    def test_radius_zero_is_one(self):
        for name in ('z2', 'heis', 'f2'):
            self.assertAlmostEqual(ProfileService.l2_profile_exact(get_group(name), 0), 1.0, places=10)

    def test_square_closed_form(self):
        # en Z^2 las coordenadas x + y, x - y son paseos independientes en [-r, r]
        z2 = get_group('z2')
        for r in range(1, 9):
            with self.subTest(r=r):
                expected = math.sin(math.pi / (2 * r + 2)) ** 2
                self.assertLess(abs(ProfileService.l2_profile_exact(z2, r) - expected), 1e-8)

    def test_nonincreasing_in_the_radius(self):
        for name, rmax in (('z2', 8), ('heis', 6), ('lamp', 6), ('f2', 5)):
            g = get_group(name)
            values = [ProfileService.l2_profile_exact(g, r) for r in range(rmax + 1)]
            with self.subTest(group=name):
                self.assertTrue(all(b <= a + 1e-9 for a, b in zip(values, values[1:])))

    def test_iteration_matches_dense_oracle(self):
        for name, r in (('heis', 2), ('lamp', 3), ('bs12', 2), ('z2', 4)):
            g = get_group(name)
            with self.subTest(group=name):
                self.assertLess(
                    abs(ProfileService.l2_profile_exact(g, r) - ProfileService.l2_profile_dense(g, r)), 1e-8,
                )

    def test_lazy_measure_halves_the_gap(self):
        z1 = get_group('z1')
        lazy = StepDistribution.lazy(z1)
        self.assertAlmostEqual(ProfileService.l2_profile_exact(z1, 4, lazy), path_eigenvalue(4) / 2, places=9)

    def test_non_convergence(self):
        with self.assertRaises(NumericalError):
            ProfileService.dirichlet_eigenvalue(get_group('z1'), 10, max_iter=2)

    def test_scale_check(self):
        z1 = get_group('z1')
        for r in (20, 25):
            scaled = ProfileService.l2_profile_exact(z1, r) * (2 * r + 2) ** 2
            self.assertLess(abs(scaled / (math.pi ** 2 / 2) - 1), 0.02)


class ProfileFitTests(SimpleTestCase):

    def test_line_exponent(self):
        series = [(r, path_eigenvalue(r)) for r in range(2, 41)]
        fit = ProfileService.profile_fit(series)
        self.assertAlmostEqual(fit['exponent'], -2, delta=0.1)
        self.assertFalse(fit['violation'])

    def test_constant_series(self):
        fit = ProfileService.profile_fit([(1, 0.5), (2, 0.5), (3, 0.5), (4, 0.5)], p=0)
        self.assertAlmostEqual(fit['exponent'], 0.0, places=12)

    def test_nonpositive_values(self):
        with self.assertRaises(DomainError):
            ProfileService.profile_fit([(1, 0.5), (2, 0.0), (3, 0.1)])

    def test_too_few_points(self):
        with self.assertRaises(DomainError):
            ProfileService.profile_fit([(1, 0.5), (2, 0.2)])


class RayleighTests(SimpleTestCase):

    def setUp(self):
        self.z1 = get_group('z1')
        self.mu = StepDistribution.uniform(self.z1)
        self.couple = FolnerService.couple_pipeline(self.z1, 3, 40)['couple']

    def test_indicator_of_identity(self):
        B = ball(self.z1, 3)
        result = ProfileService.lp_rayleigh(TestFunction.indicator(B.radius_subset(0)), 2, self.mu)
        self.assertEqual(result['energy'], 1)
        self.assertEqual(result['quotient'], 1)
        self.assertTrue(result['exact'])

    def test_couple_staircase(self):
        f = ProfileService.couple_test_function(self.couple)
        B = f.ambient
        values = [f.value_at(B.index_of((x,))) for x in range(-28, -23)]
        self.assertEqual(values, [0, Fraction(1, 3), Fraction(2, 3), 1, 1])
        self.assertTrue(all(f.value_at(i) == 1 for i in self.couple.F_prime.indices()))

    def test_couple_quotient_is_exact(self):
        f = ProfileService.couple_test_function(self.couple)
        result = ProfileService.lp_rayleigh(f, 2, self.mu)
        self.assertEqual(result['energy'], Fraction(1, 3))
        self.assertEqual(result['norm_p'], Fraction(136, 9))
        self.assertEqual(result['quotient'], Fraction(3, 136))
        self.assertLessEqual(result['quotient'], Fraction(1, 9))

    def test_l1_quotient(self):
        f = ProfileService.couple_test_function(self.couple)
        self.assertEqual(ProfileService.lp_rayleigh(f, 1, self.mu)['quotient'], Fraction(1, 16))

    def test_fractional_exponent_is_float(self):
        f = ProfileService.couple_test_function(self.couple)
        result = ProfileService.lp_rayleigh(f, 1.5, self.mu)
        self.assertFalse(result['exact'])
        self.assertGreater(result['quotient'], 0)

    def test_exponent_out_of_range(self):
        f = ProfileService.couple_test_function(self.couple)
        with self.assertRaises(DomainError):
            ProfileService.lp_rayleigh(f, 3, self.mu)

    def test_zero_function(self):
        B = ball(self.z1, 3)
        with self.assertRaises(DomainError):
            TestFunction(B, B.lengths * 0, 1, B.radius_subset(1))


class ProfileReportTests(SimpleTestCase):

    def test_couple_bounds_dominate_exact_values(self):
        z1 = get_group('z1')
        couples = [FolnerService.couple_pipeline(z1, n, 8 * n)['couple'] for n in (1, 2)]
        report = ProfileService.profile_report(z1, 18, couples=couples)
        self.assertEqual(len(report.upper_bounds()), 2)
        self.assertTrue(report.sandwich_ok())
        self.assertAlmostEqual(report.fit['exponent'], -2, delta=0.25)

    def test_rows_and_dict(self):
        report = ProfileService.profile_report(get_group('z1'), 4)
        self.assertEqual([row[0] for row in report.rows()], [1, 2, 3, 4])
        self.assertEqual(report.to_dict()['kind'], 'profile')

    def test_rmax_below_rmin(self):
        with self.assertRaises(DomainError):
            ProfileService.profile_report(get_group('z1'), 0)

    def test_couple_bound_over_exact_value_beyond_the_line(self):
        for name, n, window in (('z2', 1, 10), ('z2', 2, 16), ('heis', 1, 6)):
            g = get_group(name)
            couple = FolnerService.couple_pipeline(g, n, window)['couple']
            r = couple.F.max_length()
            report = ProfileService.profile_report(g, r, couples=[couple], rmin=r)
            with self.subTest(group=name, n=n):
                (_, exact), = report.exact_series()
                (_, bound), = report.upper_bounds()
                self.assertGreaterEqual(bound, exact)
                self.assertTrue(report.sandwich_ok())

import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import DomainError, ElementOverflowError, InvalidElementError
from lab.groups import CATALOGUE, encode, get_group, inverse, multiply, random_word


class GroupArithmeticTests(SimpleTestCase):
    """Leyes de multiplicación e inversos del catálogo."""

    def test_heisenberg_product(self):
        heis = get_group('heis')
        self.assertEqual(multiply(heis, (1, 0, 0), (0, 1, 0)), (1, 1, 1))

    def test_heisenberg_inverse(self):
        heis = get_group('heis')
        self.assertEqual(inverse(heis, (1, 1, 1)), (-1, -1, 0))

    def test_bs12_product(self):
        bs = get_group('bs12')
        t = ((0, 0), 1)
        a = ((1, 0), 0)
        # r = 0 + 2^1 · 1
        self.assertEqual(multiply(bs, t, a), ((2, 0), 1))

    def test_bs12_inverse_keeps_lowest_terms(self):
        bs = get_group('bs12')
        x = bs.evaluate('TaTa')
        self.assertEqual(multiply(bs, x, inverse(bs, x)), bs.identity)
        bs.validate(inverse(bs, x))

    def test_free_reduction(self):
        f2 = get_group('f2')
        self.assertEqual(multiply(f2, 'ab', 'BA'), '')

    def test_z2_inverse(self):
        self.assertEqual(inverse(get_group('z2'), (3, -1)), (-3, 1))

    def test_lamplighter_inverse(self):
        lamp = get_group('lamp')
        self.assertEqual(inverse(lamp, (2, (0,))), (-2, (-2,)))
        self.assertEqual(multiply(lamp, (2, (0,)), (-2, (-2,))), lamp.identity)

    def test_random_words_cancel_with_their_reverse_inverse(self):
        rng = np.random.default_rng(1)
        for name in CATALOGUE:
            g = get_group(name)
            inverse_index = g.inverse_generator_index()
            for _ in range(100):
                word = random_word(g, int(rng.integers(0, 21)), rng)
                back = tuple(inverse_index[i] for i in reversed(word))
                with self.subTest(group=name, word=word):
                    self.assertEqual(g._product(g.evaluate(word), g.evaluate(back)), g.identity)

    def test_associativity_on_random_triples(self):
        rng = np.random.default_rng(2)
        for name in CATALOGUE:
            g = get_group(name)
            for _ in range(50):
                a, b, c = (g.evaluate(random_word(g, 8, rng)) for _ in range(3))
                self.assertEqual(multiply(g, multiply(g, a, b), c), multiply(g, a, multiply(g, b, c)))


class EncodingTests(SimpleTestCase):

    def test_identity_key_is_stable(self):
        z1 = get_group('z1')
        self.assertEqual(encode(z1, (0,)), b'z1:0')
        self.assertEqual(encode(z1, (0,)), encode(z1, inverse(z1, (0,))))

    def test_lamplighter_equal_elements_share_key(self):
        lamp = get_group('lamp')
        # a·t enciende la lámpara 0; t·(T a t) también
        first = lamp.evaluate('at')
        second = lamp.evaluate(['t', 'T', 'a', 't'])
        self.assertEqual(encode(lamp, first), encode(lamp, second))

    def test_free_words_have_distinct_keys(self):
        f2 = get_group('f2')
        self.assertNotEqual(encode(f2, 'aBBa'), encode(f2, 'aBB'))

    def test_decode_inverts_encode(self):
        rng = np.random.default_rng(3)
        for name in CATALOGUE:
            g = get_group(name)
            x = g.evaluate(random_word(g, 12, rng))
            self.assertEqual(g.decode(g.encode(x)), x)

    def test_decode_rejects_foreign_prefix(self):
        with self.assertRaises(InvalidElementError):
            get_group('z2').decode('z1:3')


class ValidationTests(SimpleTestCase):

    def test_unknown_group(self):
        with self.assertRaises(DomainError):
            get_group('sl3z')

    def test_unreduced_free_word(self):
        with self.assertRaises(InvalidElementError):
            multiply(get_group('f2'), 'aA', 'b')

    def test_malformed_heisenberg_triple(self):
        with self.assertRaises(InvalidElementError):
            multiply(get_group('heis'), (1, 0), (0, 1, 0))

    def test_unsorted_lamps(self):
        with self.assertRaises(InvalidElementError):
            inverse(get_group('lamp'), (0, (3, 1)))

    def test_dyadic_not_in_lowest_terms(self):
        with self.assertRaises(InvalidElementError):
            inverse(get_group('bs12'), ((2, 1), 0))

    def test_dyadic_overflow(self):
        bs = get_group('bs12')
        with self.assertRaises(ElementOverflowError):
            bs.validate(((2 ** 63, 0), 0))

    def test_lamplighter_word_length_closed_form(self):
        lamp = get_group('lamp')
        self.assertEqual(lamp.word_length(lamp.identity), 0)
        self.assertEqual(lamp.word_length(lamp.evaluate('a')), 1)
        # cursor en 0 con la lámpara 2 encendida: ir, encender y volver
        self.assertEqual(lamp.word_length((0, (2,))), 5)

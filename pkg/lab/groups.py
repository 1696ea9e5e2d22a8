"""
Catálogo de grupos finitamente generados con aritmética explícita.

Cada modelo fija una forma normal única para sus elementos, la ley de
multiplicación y un conjunto generador simétrico. Los elementos son valores
inmutables y hashables (tuplas o cadenas), de modo que todas las operaciones
son puras y se pueden invocar desde varios hilos.

Formas normales:
    Z^d        tupla de d enteros
    heis       (x, y, z) con (x,y,z)(x',y',z') = (x+x', y+y', z+z'+x*y')
    lamp       (cursor, lámparas) con las lámparas como tupla ordenada
    bs12       ((numerador, exponente), k) con r = numerador / 2**exponente
    f2         palabra reducida sobre 'aAbB'
"""

import logging
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DomainError, ElementOverflowError, InvalidElementError

logger = logging.getLogger(__name__)

Element = Any

INT63 = 2 ** 63


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class GroupModel(ABC):
    """
    Grupo con forma normal explícita y generadores simétricos.

    Los métodos ``_product`` e ``_invert`` no validan y son los que usan los
    bucles calientes (BFS, paseos). Las variantes públicas validan primero.
    """

    name: str = ''
    description: str = ''
    dimension_hint: Optional[int] = None

    # Ancho de coordenadas enteras si el grupo admite el motor BFS vectorizado
    coordinate_width: Optional[int] = None

    def __init__(self, generators: Sequence[Element], generator_names: Sequence[str]):
        self.generators: Tuple[Element, ...] = tuple(generators)
        self.generator_names: Tuple[str, ...] = tuple(generator_names)
        self._check_generating_set()

    def __repr__(self):
        return f"GroupModel({self.name})"

    # ----- aritmética -----

    @property
    @abstractmethod
    def identity(self) -> Element:
        ...

    @abstractmethod
    def _product(self, a: Element, b: Element) -> Element:
        ...

    @abstractmethod
    def _invert(self, a: Element) -> Element:
        ...

    @abstractmethod
    def validate(self, a: Element) -> None:
        """Lanza InvalidElementError si ``a`` no es una forma normal válida."""

    @abstractmethod
    def _to_text(self, a: Element) -> str:
        ...

    @abstractmethod
    def _from_text(self, text: str) -> Element:
        ...

    def multiply(self, a: Element, b: Element) -> Element:
        self.validate(a)
        self.validate(b)
        return self._product(a, b)

    def inverse(self, a: Element) -> Element:
        self.validate(a)
        return self._invert(a)

    def encode(self, a: Element) -> bytes:
        """Clave canónica: inyectiva, determinista y estable entre ejecuciones."""
        self.validate(a)
        return f"{self.name}:{self._to_text(a)}".encode('ascii')

    def decode(self, key) -> Element:
        if isinstance(key, bytes):
            key = key.decode('ascii')
        prefix, _, text = key.partition(':')
        if prefix != self.name:
            raise InvalidElementError(f"La clave {key!r} no pertenece al grupo {self.name}")
        try:
            element = self._from_text(text)
        except (ValueError, TypeError) as e:
            raise InvalidElementError(f"Clave mal formada {key!r}: {e}")
        self.validate(element)
        return element

    def key_text(self, a: Element) -> str:
        """Clave canónica como texto, para JSON y CSV."""
        return self.encode(a).decode('ascii')

    def word_length(self, a: Element) -> Optional[int]:
        """Longitud de palabra en forma cerrada; None si solo hay oráculo BFS."""
        return None

    def evaluate(self, word: Sequence) -> Element:
        """
        Producto de una palabra en los generadores.

        Args:
            word: secuencia de índices de generador o de nombres de generador
        """
        result = self.identity
        for letter in word:
            result = self._product(result, self._generator(letter))
        return result

    def _generator(self, letter) -> Element:
        if isinstance(letter, str):
            try:
                return self.generators[self.generator_names.index(letter)]
            except ValueError:
                raise InvalidElementError(f"Generador desconocido {letter!r} en {self.name}")
        return self.generators[letter]

    def inverse_generator_index(self) -> Tuple[int, ...]:
        """Para cada generador, el índice de su inverso en la lista."""
        position = {s: i for i, s in enumerate(self.generators)}
        return tuple(position[self._invert(s)] for s in self.generators)

    # ----- hooks del motor vectorizado -----

    def coordinate_bounds(self, radius: int) -> Optional[Tuple[int, ...]]:
        """Cota de |coordenada| para elementos de longitud <= radius."""
        return None

    def multiply_coordinates(self, coords: np.ndarray, s: Element) -> np.ndarray:
        """Producto x·s para un bloque de coordenadas (una fila por elemento)."""
        raise NotImplementedError

    def relative_coordinates(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Coordenadas de a_i^{-1}·b_j para todos los pares: forma (len(a), len(b), ancho)."""
        raise NotImplementedError

    # ----- invariantes del conjunto generador -----

    def _check_generating_set(self):
        for s in self.generators:
            self.validate(s)
            if s == self.identity:
                raise DomainError(f"La identidad no puede ser generador de {self.name}")
        generator_set = set(self.generators)
        for s in self.generators:
            if self._invert(s) not in generator_set:
                raise DomainError(f"El conjunto generador de {self.name} no es simétrico: falta el inverso de {s!r}")


class FreeAbelianGroup(GroupModel):
    """Z^d con generadores ±e_i; la longitud es la norma l1."""

    def __init__(self, d: int):
        if d not in (1, 2, 3):
            raise DomainError(f"Solo se admiten Z^1, Z^2 y Z^3 (se pidió d={d})")
        self.d = d
        self.name = f"z{d}"
        self.description = f"Z^{d}"
        self.dimension_hint = d
        self.coordinate_width = d
        generators, names = [], []
        for i in range(d):
            unit = tuple(1 if j == i else 0 for j in range(d))
            generators += [unit, tuple(-c for c in unit)]
            names += [f"e{i + 1}", f"E{i + 1}"]
        super().__init__(generators, names)

    @property
    def identity(self):
        return (0,) * self.d

    def _product(self, a, b):
        return tuple(x + y for x, y in zip(a, b))

    def _invert(self, a):
        return tuple(-x for x in a)

    def validate(self, a):
        if not (isinstance(a, tuple) and len(a) == self.d and all(_is_int(x) for x in a)):
            raise InvalidElementError(f"{a!r} no es un vector entero de Z^{self.d}")

    def _to_text(self, a):
        return ','.join(str(x) for x in a)

    def _from_text(self, text):
        return tuple(int(x) for x in text.split(','))

    def word_length(self, a):
        return sum(abs(x) for x in a)

    def coordinate_bounds(self, radius):
        return (radius,) * self.d

    def multiply_coordinates(self, coords, s):
        return coords + np.asarray(s, dtype=np.int64)

    def relative_coordinates(self, a, b):
        return b[None, :, :] - a[:, None, :]


class HeisenbergGroup(GroupModel):
    """H_3(Z) con generadores X^{±1}, Y^{±1}."""

    name = 'heis'
    description = 'Heisenberg H_3(Z)'
    dimension_hint = 3
    coordinate_width = 3

    def __init__(self):
        super().__init__(
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)],
            ['X', 'x', 'Y', 'y'],
        )

    @property
    def identity(self):
        return (0, 0, 0)

    def _product(self, a, b):
        return (a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1])

    def _invert(self, a):
        return (-a[0], -a[1], -a[2] + a[0] * a[1])

    def validate(self, a):
        if not (isinstance(a, tuple) and len(a) == 3 and all(_is_int(x) for x in a)):
            raise InvalidElementError(f"{a!r} no es una terna entera de H_3(Z)")

    def _to_text(self, a):
        return ','.join(str(x) for x in a)

    def _from_text(self, text):
        x, y, z = (int(v) for v in text.split(','))
        return (x, y, z)

    def coordinate_bounds(self, radius):
        # |z| <= radius^2 / 4 para palabras de longitud radius; se usa una cota holgada
        return (radius, radius, radius * radius)

    def multiply_coordinates(self, coords, s):
        out = coords + np.asarray(s, dtype=np.int64)
        out[:, 2] += coords[:, 0] * s[1]
        return out

    def relative_coordinates(self, a, b):
        # a^{-1}·b = (b0 - a0, b1 - a1, b2 - a2 - a0·(b1 - a1))
        out = b[None, :, :] - a[:, None, :]
        out[:, :, 2] -= a[:, None, 0] * out[:, :, 1]
        return out


class LamplighterGroup(GroupModel):
    """
    Z ≀ (Z/2Z) con generadores t^{±1} (mueven el cursor) y a (cambia la
    lámpara bajo el cursor; es su propio inverso).
    """

    name = 'lamp'
    description = 'Lamplighter Z wr Z/2Z'
    dimension_hint = 1

    def __init__(self):
        super().__init__(
            [(1, ()), (-1, ()), (0, (0,))],
            ['t', 'T', 'a'],
        )

    @property
    def identity(self):
        return (0, ())

    def _product(self, a, b):
        cursor, lamps = a
        shifted = {p + cursor for p in b[1]}
        return (cursor + b[0], tuple(sorted(set(lamps) ^ shifted)))

    def _invert(self, a):
        cursor, lamps = a
        return (-cursor, tuple(p - cursor for p in lamps))

    def validate(self, a):
        ok = (
            isinstance(a, tuple) and len(a) == 2 and _is_int(a[0])
            and isinstance(a[1], tuple) and all(_is_int(p) for p in a[1])
            and all(a[1][i] < a[1][i + 1] for i in range(len(a[1]) - 1))
        )
        if not ok:
            raise InvalidElementError(f"{a!r} no es (cursor, lámparas ordenadas) del lamplighter")

    def _to_text(self, a):
        return f"{a[0]}|{','.join(str(p) for p in a[1])}"

    def _from_text(self, text):
        cursor, _, lamps = text.partition('|')
        return (int(cursor), tuple(int(p) for p in lamps.split(',')) if lamps else ())

    def word_length(self, a):
        cursor, lamps = a
        if not lamps:
            return abs(cursor)
        low = min(lamps[0], 0, cursor)
        high = max(lamps[-1], 0, cursor)
        return len(lamps) + 2 * (high - low) - abs(cursor)


class BaumslagSolitarGroup(GroupModel):
    """
    BS(1,2) = Z[1/2] ⋊ Z con (r,k)(r',k') = (r + 2^k r', k + k').

    r se guarda como (numerador, exponente) en términos mínimos: exponente 0
    o numerador impar. Un numerador de más de 63 bits es un error.
    """

    name = 'bs12'
    description = 'Baumslag-Solitar BS(1,2)'
    dimension_hint = 2

    def __init__(self):
        super().__init__(
            [((1, 0), 0), ((-1, 0), 0), ((0, 0), 1), ((0, 0), -1)],
            ['a', 'A', 't', 'T'],
        )

    @property
    def identity(self):
        return ((0, 0), 0)

    @staticmethod
    def _normalize(num: int, exp: int) -> Tuple[int, int]:
        if num == 0:
            return (0, 0)
        while exp > 0 and num % 2 == 0:
            num //= 2
            exp -= 1
        if exp < 0:
            num <<= -exp
            exp = 0
        if abs(num) >= INT63:
            raise ElementOverflowError(f"Numerador diádico {num} fuera del rango de 63 bits")
        return (num, exp)

    def _product(self, a, b):
        (n1, e1), k1 = a
        (n2, e2), k2 = b
        # 2^k1 * n2 / 2^e2 = n2 / 2^(e2 - k1)
        e2s = e2 - k1
        if e2s < 0:
            n2 <<= -e2s
            e2s = 0
        exp = max(e1, e2s)
        num = (n1 << (exp - e1)) + (n2 << (exp - e2s))
        return (self._normalize(num, exp), k1 + k2)

    def _invert(self, a):
        (num, exp), k = a
        # -(2^-k) r
        return (self._normalize(-num, exp + k), -k)

    def validate(self, a):
        ok = (
            isinstance(a, tuple) and len(a) == 2 and _is_int(a[1])
            and isinstance(a[0], tuple) and len(a[0]) == 2
            and _is_int(a[0][0]) and _is_int(a[0][1])
        )
        if not ok:
            raise InvalidElementError(f"{a!r} no es ((numerador, exponente), k) de BS(1,2)")
        (num, exp), _ = a
        if exp < 0 or (num == 0 and exp != 0) or (exp > 0 and num % 2 == 0):
            raise InvalidElementError(f"Racional diádico {num}/2^{exp} no está en términos mínimos")
        if abs(num) >= INT63:
            raise ElementOverflowError(f"Numerador diádico {num} fuera del rango de 63 bits")

    def _to_text(self, a):
        (num, exp), k = a
        return f"{num}/{exp}|{k}"

    def _from_text(self, text):
        r, _, k = text.partition('|')
        num, _, exp = r.partition('/')
        return ((int(num), int(exp)), int(k))


class FreeGroup(GroupModel):
    """F_2 con generadores a^{±1}, b^{±1}; los elementos son palabras reducidas."""

    name = 'f2'
    description = 'Free group F_2'
    dimension_hint = 1

    _INVERSE_LETTER = {'a': 'A', 'A': 'a', 'b': 'B', 'B': 'b'}

    def __init__(self):
        super().__init__(['a', 'A', 'b', 'B'], ['a', 'A', 'b', 'B'])

    @property
    def identity(self):
        return ''

    def _product(self, a, b):
        i = 0
        limit = min(len(a), len(b))
        while i < limit and self._INVERSE_LETTER[a[-1 - i]] == b[i]:
            i += 1
        return a[:len(a) - i] + b[i:]

    def _invert(self, a):
        return a[::-1].swapcase()

    def validate(self, a):
        if not isinstance(a, str) or any(c not in self._INVERSE_LETTER for c in a):
            raise InvalidElementError(f"{a!r} no es una palabra sobre 'aAbB'")
        for x, y in zip(a, a[1:]):
            if self._INVERSE_LETTER[x] == y:
                raise InvalidElementError(f"La palabra {a!r} no está reducida")

    def _to_text(self, a):
        return a

    def _from_text(self, text):
        return text

    def word_length(self, a):
        return len(a)


CATALOGUE = {
    'z1': lambda: FreeAbelianGroup(1),
    'z2': lambda: FreeAbelianGroup(2),
    'z3': lambda: FreeAbelianGroup(3),
    'heis': HeisenbergGroup,
    'lamp': LamplighterGroup,
    'bs12': BaumslagSolitarGroup,
    'f2': FreeGroup,
}


@lru_cache(maxsize=None)
def get_group(name: str) -> GroupModel:
    """Devuelve el modelo del catálogo por nombre ('z2', 'heis', 'lamp', ...)."""
    try:
        factory = CATALOGUE[name]
    except KeyError:
        raise DomainError(f"Grupo desconocido {name!r}; opciones: {', '.join(CATALOGUE)}")
    return factory()


def multiply(g: GroupModel, a: Element, b: Element) -> Element:
    return g.multiply(a, b)


def inverse(g: GroupModel, a: Element) -> Element:
    return g.inverse(a)


def encode(g: GroupModel, a: Element) -> bytes:
    return g.encode(a)


def random_word(g: GroupModel, length: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """Palabra aleatoria de índices de generador (para pruebas y oráculos)."""
    return tuple(int(i) for i in rng.integers(0, len(g.generators), size=length))

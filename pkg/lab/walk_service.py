"""
Paseos aleatorios simétricos sobre los grupos del catálogo.

Dos motores:

- Exacto: convolución de la distribución sobre una bola (matriz dispersa de
  transición). La masa que sale de la bola se acumula como ``escaped`` y se
  comprueba la conservación en cada paso.
- Monte Carlo: trayectorias por bloques con un generador Philox por ensayo
  (clave = semilla, contador = índice de ensayo), de modo que el resultado no
  depende del tamaño de bloque ni del número de hilos.

Las longitudes de palabra salen de la forma cerrada del grupo cuando existe y,
si no, de una bola-oráculo; las trayectorias que la abandonan se censuran.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from django.conf import settings

from .cayley import Ball, ball
from .exceptions import DomainError, NumericalError, ResourceLimitError
from .groups import Element, FreeAbelianGroup, FreeGroup, GroupModel

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'philox4x64-10'

CONSERVATION_TOL = 1e-12

# Longitud máxima de palabra (sobre el soporte) para comprobar que genera
GENERATION_DEPTH = 6


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """Flujo independiente para el ensayo ``trial`` de la semilla ``seed``."""
    return np.random.Generator(np.random.Philox(key=seed, counter=trial << 192))


def _as_fraction(p) -> Fraction:
    if isinstance(p, float):
        return Fraction(str(p))
    return Fraction(p)


@dataclass(frozen=True)
class StepDistribution:
    """
    Medida de paso μ de soporte finito: simétrica, con probabilidades
    positivas que suman 1 y cuyo soporte genera el grupo.
    """

    group: GroupModel
    atoms: Tuple[Tuple[Element, Fraction], ...]

    def __post_init__(self):
        atoms = tuple((s, _as_fraction(p)) for s, p in self.atoms)
        object.__setattr__(self, 'atoms', atoms)
        if not atoms:
            raise DomainError("La medida de paso necesita al menos un átomo")
        g = self.group
        weights = {}
        for s, p in atoms:
            g.validate(s)
            if s in weights:
                raise DomainError(f"Átomo repetido {s!r}")
            if p <= 0:
                raise DomainError(f"Las probabilidades deben ser positivas ({s!r}: {p})")
            weights[s] = p
        if sum(weights.values()) != 1:
            raise DomainError(f"Las probabilidades suman {sum(weights.values())}, no 1")
        for s, p in atoms:
            if weights.get(g._invert(s)) != p:
                raise DomainError(f"La medida no es simétrica en {s!r}")
        self._check_generates()

    def _check_generates(self):
        # si todos los generadores son alcanzables, se alcanza cualquier bola
        g = self.group
        missing = set(g.generators)
        seen = {g.identity}
        frontier = [g.identity]
        for _ in range(GENERATION_DEPTH):
            missing -= seen
            if not missing or not frontier:
                break
            nxt = []
            for x in frontier:
                for s in self.elements:
                    y = g._product(x, s)
                    if y not in seen:
                        seen.add(y)
                        nxt.append(y)
            frontier = nxt
        missing -= seen
        if missing:
            raise DomainError(f"El soporte de la medida no genera {g.name}")

    @classmethod
    def uniform(cls, g: GroupModel) -> 'StepDistribution':
        """Paseo simple: uniforme sobre los generadores."""
        p = Fraction(1, len(g.generators))
        return cls(g, tuple((s, p) for s in g.generators))

    @classmethod
    def lazy(cls, g: GroupModel, holding=Fraction(1, 2)) -> 'StepDistribution':
        """Paseo perezoso: se queda quieto con probabilidad ``holding``."""
        holding = _as_fraction(holding)
        if not 0 < holding < 1:
            raise DomainError(f"La probabilidad de espera debe estar en (0, 1) (se recibió {holding})")
        p = (1 - holding) / len(g.generators)
        return cls(g, ((g.identity, holding),) + tuple((s, p) for s in g.generators))

    @property
    def elements(self) -> List[Element]:
        return [s for s, _ in self.atoms]

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.array([float(p) for _, p in self.atoms])

    @cached_property
    def atom_lengths(self) -> List[int]:
        oracle = ball(self.group, 4)
        try:
            return [int(oracle.lengths[oracle.index_of(s)]) for s in self.elements]
        except DomainError:
            raise DomainError("Los átomos de la medida deben tener longitud <= 4")

    @property
    def max_atom_length(self) -> int:
        return max(self.atom_lengths)

    def describe(self) -> str:
        return ', '.join(f"{self.group.key_text(s)}:{p}" for s, p in self.atoms)


@dataclass(frozen=True)
class WalkReport:
    """Serie (n, valor, error estándar, método) de un estadístico del paseo."""

    group: str
    kind: str
    series: Tuple[Dict[str, Any], ...]
    seed: Optional[int] = None
    trials: Optional[int] = None
    rng: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def values(self) -> List[float]:
        return [row['value'] for row in self.series]

    def rows(self) -> List[Tuple]:
        return [(row['n'], row['value'], row['stderr'], row['method'], self.seed, row.get('censored', 0))
                for row in self.series]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': f"walk-{self.kind}",
            'group': self.group,
            'seed': self.seed,
            'trials': self.trials,
            'rng': self.rng,
            'series': list(self.series),
            **self.extra,
        }


def _exact_row(n: int, value: float) -> Dict[str, Any]:
    return {'n': n, 'value': value, 'stderr': 0.0, 'method': 'exact', 'exact': True}


# =============================================================================
# MOTOR EXACTO
# =============================================================================

def _transition(mu: StepDistribution, ambient: Ball, inside: Optional[np.ndarray] = None):
    """
    Matriz T con (T v)(x·s) = Σ v(x) μ(s) y vector de masa que sale por paso.
    ``inside`` restringe los estados vivos (el resto mata la masa).
    """
    table = ambient.step_table(mu.elements)
    alive = np.ones(ambient.size, dtype=bool) if inside is None else inside
    sources = np.flatnonzero(alive)
    rows, cols, data = [], [], []
    leak = np.zeros(ambient.size)
    for j, p in enumerate(mu.probabilities):
        target = table[sources, j]
        ok = target >= 0
        ok[ok] = alive[target[ok]]
        rows.append(target[ok])
        cols.append(sources[ok])
        data.append(np.full(int(ok.sum()), p))
        leak[sources[~ok]] += p
    T = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ambient.size, ambient.size),
    )
    return T, leak


def _check_conservation(total: float, step: int):
    residual = abs(total - 1.0)
    if residual > CONSERVATION_TOL:
        logger.error(f"Conservación de masa violada en el paso {step}: residuo {residual:.3e}")
        raise NumericalError(f"La masa total se desvía de 1 en {residual:.3e} en el paso {step}", residual=residual)


def distribution_exact(mu: StepDistribution, n: int) -> Tuple[Ball, np.ndarray]:
    """Ley exacta de W_n sobre B(e, n·L), donde el paseo no puede salir."""
    if n < 0:
        raise DomainError(f"n debe ser >= 0 (se recibió {n})")
    ambient = ball(mu.group, n * mu.max_atom_length)
    T, leak = _transition(mu, ambient)
    v = np.zeros(ambient.size)
    v[0] = 1.0
    for k in range(1, n + 1):
        v = T @ v
        _check_conservation(float(v.sum()), k)
    return ambient, v


class WalkService:
    """
    Estadísticos del paseo aleatorio: probabilidad de retorno, deriva y
    cautela (total).
    """

    @staticmethod
    def return_probability_exact(mu: StepDistribution, nmax: int) -> WalkReport:
        """
        p_n(e,e) para n = 0..nmax sobre B(e, ⌈nmax·L/2⌉): la masa que sale de
        esa bola ya no puede volver a e antes de nmax.
        """
        if nmax < 0:
            raise DomainError(f"nmax debe ser >= 0 (se recibió {nmax})")
        radius = math.ceil(nmax * mu.max_atom_length / 2)
        ambient = ball(mu.group, radius)
        T, leak = _transition(mu, ambient)
        v = np.zeros(ambient.size)
        v[0] = 1.0
        escaped = 0.0
        series = [_exact_row(0, 1.0)]
        for n in range(1, nmax + 1):
            escaped += float(leak @ v)
            v = T @ v
            _check_conservation(float(v.sum()) + escaped, n)
            series.append(_exact_row(n, float(v[0])))
        logger.info(f"Retorno exacto en {mu.group.name} hasta n={nmax} (bola de {ambient.size} elementos)")
        return WalkReport(group=mu.group.name, kind='return', series=tuple(series),
                          extra={'ball_radius': radius, 'escaped': escaped})

    @staticmethod
    def drift_exact(mu: StepDistribution, n: int) -> float:
        """L(n) = E[l(W_n)] a partir de la ley exacta."""
        ambient, v = distribution_exact(mu, n)
        return float(v @ ambient.lengths)

    @staticmethod
    def cautiousness_exact(mu: StepDistribution, n: int, eps: float) -> float:
        """
        P(max_{k<=n} l(W_k) <= ε√n) con el paseo matado al salir de
        B(e, ⌊ε√n⌋).
        """
        if eps <= 0:
            raise DomainError(f"ε debe ser positivo (se recibió {eps})")
        if n < 1:
            raise DomainError(f"n debe ser >= 1 (se recibió {n})")
        rho = math.floor(eps * math.sqrt(n) + 1e-9)
        if rho >= n * mu.max_atom_length:
            return 1.0
        ambient = ball(mu.group, rho + mu.max_atom_length)
        T, _ = _transition(mu, ambient, inside=ambient.lengths <= rho)
        v = np.zeros(ambient.size)
        v[0] = 1.0
        for _ in range(n):
            v = T @ v
        return float(v.sum())

    # ----- Monte Carlo -----

    @staticmethod
    def drift_estimate(mu: StepDistribution, n: int, trials: int, seed: int, **options) -> Tuple[float, float]:
        """(L(n) estimada, error estándar)."""
        row = WalkService.drift_series(mu, [n], trials, seed, **options).series[0]
        return row['value'], row['stderr']

    @staticmethod
    def drift_series(mu: StepDistribution, ns: Sequence[int], trials: int, seed: int, **options) -> WalkReport:
        sample = _sample(mu, ns, trials, seed, **options)

        def statistic(lengths, maxima):
            return lengths.astype(float)

        return _report(mu, 'drift', sample, statistic, seed, trials)

    @staticmethod
    def cautiousness_estimate(mu: StepDistribution, n: int, eps: float, trials: int, seed: int,
                              **options) -> Tuple[float, float]:
        """(P(max_{k<=n} l(W_k) <= ε√n) estimada, error estándar)."""
        row = WalkService.cautiousness_series(mu, [n], eps, trials, seed, **options).series[0]
        return row['value'], row['stderr']

    @staticmethod
    def cautiousness_series(mu: StepDistribution, ns: Sequence[int], eps: float, trials: int, seed: int,
                            **options) -> WalkReport:
        if eps <= 0:
            raise DomainError(f"ε debe ser positivo (se recibió {eps})")
        sample = _sample(mu, ns, trials, seed, **options)
        limits = np.floor(eps * np.sqrt(np.asarray(sample['ns'], dtype=float)) + 1e-9)

        def statistic(lengths, maxima):
            return (maxima <= limits).astype(float)

        report = _report(mu, 'cautious', sample, statistic, seed, trials)
        report.extra['eps'] = eps
        return report

    @staticmethod
    def return_probability_estimate(mu: StepDistribution, ns: Sequence[int], trials: int, seed: int,
                                    **options) -> WalkReport:
        sample = _sample(mu, ns, trials, seed, **options)

        def statistic(lengths, maxima):
            return (lengths == 0).astype(float)

        return _report(mu, 'return', sample, statistic, seed, trials)

    @staticmethod
    def simulate_walk(mu: StepDistribution, n: int, seed: int, trial: int = 0,
                      length_radius: Optional[int] = None) -> List[int]:
        """(l(W_1), ..., l(W_n)) del ensayo ``trial``."""
        _check_walk_args(n, 1, seed)
        kernel = _make_kernel(mu, n, length_radius)
        lengths, censor = kernel(_draw_steps(mu, n, seed, trial, trial + 1))
        if censor[0] <= n:
            logger.error(f"Trayectoria censurada en el paso {censor[0]}")
            raise ResourceLimitError(
                f"La trayectoria sale de la bola-oráculo en el paso {censor[0]}; "
                f"aumente --length-radius (COARSE_LAB_LENGTH_RADIUS)",
                cap=length_radius or settings.COARSE_LAB_LENGTH_RADIUS,
            )
        return lengths[0].tolist()

    # ----- ajustes -----

    @staticmethod
    def return_bound_check(series: Sequence[float], slack: float = 0.25) -> Dict[str, Any]:
        """
        Ajuste de -log p_n frente a n^{1/3} en los n pares. Se marca violación
        si la pendiente de la cola supera (1 + slack) veces la global, es decir,
        si -log p_n crece más que linealmente en n^{1/3}.
        """
        p = np.asarray(series, dtype=float)
        if not (p > 0).any():
            raise DomainError("La serie de probabilidades de retorno es idénticamente cero")
        n = np.arange(len(p))
        keep = (n >= 2) & (n % 2 == 0) & (p > 0)
        if keep.sum() < 3:
            raise DomainError("Se necesitan al menos tres n pares con p_n > 0")
        x = n[keep] ** (1 / 3)
        y = -np.log(p[keep])
        slope, intercept = np.polyfit(x, y, 1)
        half = len(x) // 2
        tail_slope = float(np.polyfit(x[half:], y[half:], 1)[0]) if len(x) - half >= 2 else float(slope)
        violation = tail_slope > 0 and tail_slope > (1 + slack) * max(float(slope), 0.0)
        return {
            'c': float(slope),
            'intercept': float(intercept),
            'tail_slope': tail_slope,
            'slack': slack,
            'points': int(keep.sum()),
            'violation': bool(violation),
        }

    @staticmethod
    def drift_exponent(series: Sequence[Tuple[int, float]]) -> float:
        """Pendiente de log L(n) frente a log n (1/2 difusivo, 1 lineal)."""
        points = [(n, value) for n, value in series if n > 0 and value > 0]
        if len(points) < 2:
            raise DomainError("Se necesitan al menos dos puntos con n > 0 y L(n) > 0")
        n, value = np.asarray(points, dtype=float).T
        return float(np.polyfit(np.log(n), np.log(value), 1)[0])

    @staticmethod
    def profile_to_cautiousness(lambda_series: Sequence[Tuple[int, float]], c: float,
                                mu: StepDistribution) -> List[Dict[str, Any]]:
        """
        Para cada (r, λ) toma n = (r/c)^2 y mide la probabilidad exacta de no
        salir de B(e, 2c√n) ≈ B(e, 2r) en n pasos: un perfil λ(r) <= C r^{-2}
        se traduce en probabilidades de permanencia acotadas inferiormente.
        """
        if c <= 0:
            raise DomainError(f"c debe ser positivo (se recibió {c})")
        rows = []
        for r, lam in lambda_series:
            n = max(1, round((r / c) ** 2))
            rows.append({
                'r': r,
                'lambda': lam,
                'n': n,
                'radius': math.floor(2 * c * math.sqrt(n) + 1e-9),
                'probability': WalkService.cautiousness_exact(mu, n, 2 * c),
            })
        return rows


def geometric_grid(nmax: int, start: int = 25) -> List[int]:
    """Malla geométrica {25, 50, 100, ...} hasta nmax."""
    grid = []
    n = start
    while n <= nmax:
        grid.append(n)
        n *= 2
    return grid


# =============================================================================
# MOTOR MONTE CARLO
# =============================================================================

def _check_walk_args(n: int, trials: int, seed: int):
    if n < 1:
        raise DomainError(f"n debe ser >= 1 (se recibió {n})")
    if trials < 1:
        raise DomainError(f"Se necesita al menos un ensayo (se recibió {trials})")
    if seed is None or seed < 0:
        raise DomainError(f"La semilla debe ser un entero >= 0 (se recibió {seed})")


def _draw_steps(mu: StepDistribution, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    k = len(mu.atoms)
    p = mu.probabilities
    return np.stack([
        trial_generator(seed, t).choice(k, size=n, p=p) for t in range(start, stop)
    ])


Kernel = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _make_kernel(mu: StepDistribution, n: int, length_radius: Optional[int]) -> Kernel:
    """
    Núcleo vectorizado según el grupo. Devuelve, para un bloque de pasos
    (B, n), las longitudes en los tiempos 1..n y el primer paso censurado
    (n + 1 si la trayectoria no se censura).
    """
    g = mu.group
    atoms = mu.elements

    if isinstance(g, FreeAbelianGroup):
        moves = np.asarray(atoms, dtype=np.int32).reshape(len(atoms), g.d)

        def coordinates(steps):
            positions = np.cumsum(moves[steps], axis=1)
            lengths = np.abs(positions).sum(axis=2).astype(np.int32)
            return lengths, np.full(len(steps), n + 1)
        return coordinates

    if isinstance(g, FreeGroup) and all(len(s) <= 1 for s in atoms):
        # pila de letras: a=0, A=1, b=2, B=3; la inversa de c es c ^ 1
        codes = np.array(['aAbB'.index(s) if s else -1 for s in atoms], dtype=np.int8)

        def stack(steps):
            B = len(steps)
            rows = np.arange(B)
            word = np.zeros((B, n), dtype=np.int8)
            depth = np.zeros(B, dtype=np.int64)
            lengths = np.empty((B, n), dtype=np.int32)
            for k in range(n):
                letter = codes[steps[:, k]]
                moving = letter >= 0
                top = word[rows, np.maximum(depth - 1, 0)]
                cancel = moving & (depth > 0) & (top == (letter ^ 1))
                push = moving & ~cancel
                depth[cancel] -= 1
                word[rows[push], depth[push]] = letter[push]
                depth[push] += 1
                lengths[:, k] = depth
            return lengths, np.full(B, n + 1)
        return stack

    if g.word_length(g.identity) is not None:
        product = g._product
        word_length = g.word_length

        def elements(steps):
            lengths = np.empty(steps.shape, dtype=np.int32)
            for b, row in enumerate(steps):
                x = g.identity
                for k, j in enumerate(row):
                    x = product(x, atoms[j])
                    lengths[b, k] = word_length(x)
            return lengths, np.full(len(steps), n + 1)
        return elements

    radius = min(length_radius or settings.COARSE_LAB_LENGTH_RADIUS, n * mu.max_atom_length)
    oracle = ball(g, radius)
    table = oracle.step_table(atoms)

    def window(steps):
        B = len(steps)
        position = np.zeros(B, dtype=np.int64)
        alive = np.ones(B, dtype=bool)
        censor = np.full(B, n + 1)
        lengths = np.zeros((B, n), dtype=np.int32)
        for k in range(n):
            moved = table[position, steps[:, k]]
            leaving = alive & (moved < 0)
            censor[leaving] = k + 1
            alive &= ~leaving
            position = np.where(alive, moved, position)
            lengths[:, k] = oracle.lengths[position]
        return lengths, censor
    return window


def _sample(mu: StepDistribution, ns: Sequence[int], trials: int, seed: int,
            length_radius: Optional[int] = None, threads: Optional[int] = None,
            block: Optional[int] = None, max_censored: Optional[float] = None) -> Dict[str, Any]:
    """
    Longitud y máximo acumulado de longitud en cada n de la malla para cada
    ensayo, más el paso de censura. ``max_censored`` (o
    COARSE_LAB_MAX_CENSORED_FRACTION) activa el aborto por censura.
    """
    ns = sorted(set(int(n) for n in ns))
    if not ns:
        raise DomainError("La malla de tiempos está vacía")
    nmax = ns[-1]
    _check_walk_args(ns[0], trials, seed)
    kernel = _make_kernel(mu, nmax, length_radius)
    grid = np.asarray(ns) - 1

    size = block or settings.COARSE_LAB_TRIAL_BLOCK
    width = mu.group.coordinate_width or 1
    size = max(1, min(size, 4_000_000 // (nmax * width)))
    starts = list(range(0, trials, size))

    def run(start):
        stop = min(start + size, trials)
        lengths, censor = kernel(_draw_steps(mu, nmax, seed, start, stop))
        maxima = np.maximum.accumulate(lengths, axis=1)
        return lengths[:, grid], maxima[:, grid], censor

    workers = threads or settings.COARSE_LAB_THREADS
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(start) for start in starts]

    return {
        'ns': ns,
        'lengths': np.concatenate([p[0] for p in parts]),
        'maxima': np.concatenate([p[1] for p in parts]),
        'censor': np.concatenate([p[2] for p in parts]),
        'length_radius': length_radius or settings.COARSE_LAB_LENGTH_RADIUS,
        'max_censored': max_censored if max_censored is not None else settings.COARSE_LAB_MAX_CENSORED_FRACTION,
    }


def _report(mu: StepDistribution, kind: str, sample: Dict[str, Any],
            statistic: Callable[[np.ndarray, np.ndarray], np.ndarray],
            seed: int, trials: int) -> WalkReport:
    values = statistic(sample['lengths'], sample['maxima'])
    limit = sample['max_censored']
    series = []
    for j, n in enumerate(sample['ns']):
        valid = sample['censor'] > n
        censored = int(trials - valid.sum())
        if censored:
            fraction = censored / trials
            logger.warning(f"{censored} de {trials} trayectorias censuradas en n={n} ({mu.group.name})")
            if limit is not None and fraction > limit:
                logger.error(f"Fracción censurada {fraction:.4f} supera el límite {limit}")
                raise ResourceLimitError(
                    f"El {fraction:.2%} de las trayectorias sale de la bola-oráculo de radio "
                    f"{sample['length_radius']} en n={n}; aumente --length-radius",
                    cap=sample['length_radius'],
                )
        column = values[valid, j]
        m = len(column)
        if not m:
            raise ResourceLimitError(
                f"Todas las trayectorias salen de la bola-oráculo de radio {sample['length_radius']} en n={n}",
                cap=sample['length_radius'],
            )
        stderr = float(column.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
        series.append({
            'n': n,
            'value': float(column.mean()),
            'stderr': stderr,
            'method': 'monte_carlo',
            'exact': False,
            'censored': censored,
            'censored_fraction': censored / trials,
        })
    logger.info(f"Monte Carlo {kind} en {mu.group.name}: {trials} ensayos, semilla {seed}")
    return WalkReport(group=mu.group.name, kind=kind, series=tuple(series),
                      seed=seed, trials=trials, rng=RNG_ALGORITHM)

"""
Parejas de Følner: cocientes de borde, extracción a partir de una partición
coloreada a escala 2n y verificación de las tres condiciones (cociente,
separación y diámetro).
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence

from django.conf import settings

from .cayley import (
    FiniteSubset, ball, boundary, diameter, element_boundary_count, neighborhood, radius_within,
)
from .decomposition_service import DecompositionService, Partition, greedy_margin
from .exceptions import DomainError, MarginError
from .groups import FreeAbelianGroup, GroupModel, HeisenbergGroup, LamplighterGroup, get_group

logger = logging.getLogger(__name__)

SCAN_FAMILIES = ('balls', 'boxes', 'intervals-of-lamps')

DEFAULT_STRETCH = Fraction(4)

# En el árbol de F_2 las piezas son bolas de radio r/2
PIPELINE_STRETCH = {'f2': Fraction(1)}


@dataclass(frozen=True)
class FolnerCouple:
    """F' ⊆ F con d_S(F', G∖F) >= n y #F <= C·#F'."""

    F_prime: FiniteSubset
    F: FiniteSubset
    n: int
    ratio: Fraction
    diam_F: int
    C: int
    bound: Fraction
    observed_bound: int
    piece: Optional[int] = None
    color: Optional[int] = None

    def __post_init__(self):
        if not self.F_prime.issubset(self.F):
            raise DomainError("F' debe estar contenido en F")
        if self.n < 1:
            raise DomainError(f"n debe ser >= 1 (se recibió {self.n})")

    @property
    def ambient(self):
        return self.F.ambient

    @property
    def group(self):
        return self.F.ambient.group

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'couple',
            'group': self.group.name,
            'ambient_radius': self.ambient.radius,
            'n': self.n,
            'C': self.C,
            'F_prime': self.F_prime.keys(),
            'F': self.F.keys(),
            'ratio': self.ratio,
            'diam_F': self.diam_F,
            'bound': self.bound,
            'observed_bound': self.observed_bound,
            'piece': self.piece,
            'color': self.color,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FolnerCouple':
        group = get_group(data['group'])
        ambient = ball(group, int(data['ambient_radius']))
        return cls(
            F_prime=ambient.subset_of_elements(group.decode(k) for k in data['F_prime']),
            F=ambient.subset_of_elements(group.decode(k) for k in data['F']),
            n=int(data['n']), ratio=Fraction(data['ratio']), diam_F=int(data['diam_F']),
            C=int(data['C']), bound=Fraction(data['bound']),
            observed_bound=int(data['observed_bound']),
            piece=data.get('piece'), color=data.get('color'),
        )


def controlled_bound(K, n: int) -> Fraction:
    """f(2n) + 2n = 2(K+1)·n: cota de diámetro de F con control lineal f(r) = K·r."""
    return 2 * (Fraction(K) + 1) * n


def pipeline_stretch(g: GroupModel) -> Fraction:
    """Estiramiento por defecto de la descomposición voraz para ``g``."""
    return PIPELINE_STRETCH.get(g.name, DEFAULT_STRETCH)


def default_window(g: GroupModel, n: int, margin: int = 0) -> int:
    """
    Ventana por defecto para parejas a escala 2n: max(8n, 10), reducida
    hasta que B(e, ventana + margin) quepa en COARSE_LAB_PIPELINE_BALL.
    """
    window = max(8 * n, 10)
    if isinstance(g, FreeAbelianGroup):
        return window
    fits = radius_within(g, settings.COARSE_LAB_PIPELINE_BALL, window + margin)
    if fits < window + margin:
        logger.info(f"{g.name}: ventana reducida a {max(fits - margin, 0)} (bola de radio {fits})")
    return max(min(window, fits - margin), 0)


class FolnerService:
    """
    Servicio para medir cocientes de Følner y construir parejas controladas.
    """

    @staticmethod
    def folner_ratio(F: FiniteSubset) -> Fraction:
        """#∂_S F / #F."""
        if not F.members:
            raise DomainError("El cociente de Følner no está definido para el conjunto vacío")
        return Fraction(len(boundary(F)), len(F))

    @staticmethod
    def couple_from_decomposition(p: Partition, n: int, threads: Optional[int] = None) -> Dict[str, Any]:
        """
        Busca una pieza A con #B(A, n) <= c·#A en una partición a escala 2n.

        Solo se consideran piezas no recortadas. Los colores se recorren por
        cardinal total decreciente (empates por índice de color) y, dentro de
        cada color, las piezas por índice; se acepta la primera que cumple.

        Returns:
            dict: {'success': True, 'couple', 'report'} o bien
                  {'success': False, 'error': 'not_found', 'best_ratio', ...}
        """
        if n < 1:
            raise DomainError(f"n debe ser >= 1 (se recibió {n})")
        if p.scale != 2 * n:
            raise DomainError(f"La partición debe tener escala 2n = {2 * n} (tiene {p.scale})")
        available = p.ambient.radius - p.window_radius
        if available < n:
            logger.error(f"Margen {available} insuficiente para entornos de radio {n}")
            raise MarginError(
                f"La bola ambiente debe superar la ventana en al menos n = {n} (margen {available})",
                required=n, available=available,
            )
        report = DecompositionService.verify_decomposition(p, threads)
        if not report['valid']:
            raise DomainError(f"La partición no es válida: {report}")

        c = p.colors
        candidates = [i for i, clipped in enumerate(p.clipped) if not clipped]
        weight = {k: 0 for k in range(c)}
        for i in candidates:
            weight[p.color[i]] += len(p.pieces[i])
        color_order = sorted(range(c), key=lambda k: (-weight[k], k))
        rank = {k: position for position, k in enumerate(color_order)}
        ordered = sorted(candidates, key=lambda i: (rank[p.color[i]], i))

        def measure(i: int):
            return i, len(neighborhood(p.pieces[i], n))

        workers = threads or settings.COARSE_LAB_THREADS
        best = None
        chosen = None
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                measured = list(pool.map(measure, ordered))
        else:
            measured = (measure(i) for i in ordered)
        for i, size in measured:
            ratio = Fraction(size, len(p.pieces[i]))
            if best is None or ratio < best[1]:
                best = (i, ratio)
            if ratio <= c:
                chosen = i
                break

        if chosen is None:
            logger.warning(
                f"Sin pareja de Følner en {p.group.name} para n={n}: "
                f"{len(candidates)} piezas candidatas, mejor cociente {best[1] if best else None}"
            )
            return {
                'success': False,
                'error': 'not_found',
                'message': f"Ninguna pieza cumple #B(A, {n}) <= {c}·#A",
                'group': p.group.name,
                'n': n,
                'C': c,
                'candidates': len(candidates),
                'best_ratio': best[1] if best else None,
                'best_piece': best[0] if best else None,
            }

        A = p.pieces[chosen]
        F = neighborhood(A, n)
        # diam F <= diam A + 2n: la bola debe contener los cocientes a^{-1}b
        # (motor de coordenadas) o certificar el BFS desde cada punto de F
        reach = report['max_piece_diameter'] + 2 * n
        needed = reach if p.ambient.has_coordinates else F.max_length() + reach
        if needed > p.ambient.radius:
            logger.info(f"Diámetro de F en {p.group.name}: se amplía la bola ambiente a radio {needed}")
            host = ball(p.group, needed)
            A = host.subset_of_elements(A.elements())
            F = neighborhood(A, n)
        diam_F = diameter(F)
        couple = FolnerCouple(
            F_prime=A, F=F, n=n, ratio=Fraction(len(F), len(A)), diam_F=diam_F, C=c,
            bound=controlled_bound(p.stretch, n),
            observed_bound=report['max_piece_diameter'] + 2 * n,
            piece=chosen, color=p.color[chosen],
        )
        logger.info(
            f"Pareja de Følner en {p.group.name}: n={n}, #F'={len(A)}, #F={len(F)}, "
            f"cociente {couple.ratio}, diam F = {diam_F}"
        )
        return {
            'success': True,
            'couple': couple,
            'report': FolnerService.verify_couple(couple, c, n),
        }

    @staticmethod
    def verify_couple(cpl: FolnerCouple, C, n: int, bound=None) -> Dict[str, Any]:
        """
        Comprueba por separado #F <= C·#F', B(F', n-1) ⊆ F (equivale a
        d_S(F', G∖F) >= n) y diam F <= cota.
        """
        if n < 1:
            raise DomainError(f"n debe ser >= 1 (se recibió {n})")
        C = Fraction(C)
        bound = Fraction(cpl.bound if bound is None else bound)
        ok_ratio = len(cpl.F) <= C * len(cpl.F_prime)
        ok_separation = neighborhood(cpl.F_prime, n - 1).issubset(cpl.F)
        diam_F = diameter(cpl.F)
        ok_diameter = diam_F <= bound
        return {
            'ok_ratio': ok_ratio,
            'ok_separation': ok_separation,
            'ok_diameter': ok_diameter,
            'diam_F': diam_F,
            'bound': bound,
            'valid': ok_ratio and ok_separation and ok_diameter,
        }

    @staticmethod
    def couple_pipeline(g: GroupModel, n: int, window_radius: Optional[int] = None,
                        colors: Optional[int] = None, stretch=None,
                        seed: Optional[int] = None, threads: Optional[int] = None) -> Dict[str, Any]:
        """
        Partición a escala 2n sobre B(e, window_radius) y extracción de pareja.

        Z^d usa el tablero canónico; el resto, la descomposición voraz con
        estiramiento ``stretch`` (por defecto el del grupo) y ``colors``
        colores. Sin ``colors`` se empieza en 2^dimensión y se duplica tras
        cada fallo de colores hasta COARSE_LAB_MAX_COLORS.
        """
        if n < 1:
            raise DomainError(f"n debe ser >= 1 (se recibió {n})")
        if isinstance(g, FreeAbelianGroup):
            window = window_radius if window_radius is not None else default_window(g, n)
            K = Fraction(2) if g.d == 1 else Fraction(g.d * (4 * n - 1), 2 * n)
            partition = DecompositionService.canonical_decomposition_zd(
                g.d, 2 * n, window,
                ambient_radius=window + n + math.ceil(controlled_bound(K, n)),
            )
        else:
            K = Fraction(stretch) if stretch is not None else pipeline_stretch(g)
            margin = max(greedy_margin(2 * n, K), n)
            window = window_radius if window_radius is not None else default_window(g, n, margin)
            ambient = ball(g, window + margin)
            target = colors if colors is not None else 2 ** (g.dimension_hint or 1)
            while True:
                built = DecompositionService.greedy_decomposition(
                    ambient, 2 * n, target, K, seed=seed, window_radius=window,
                )
                if built['success'] or colors is not None or 2 * target > settings.COARSE_LAB_MAX_COLORS:
                    break
                logger.info(f"{g.name}: {target} colores no bastan a escala {2 * n}; se prueba con {2 * target}")
                target *= 2
            if not built['success']:
                return {**built, 'window_radius': window}
            partition = built['partition']
        result = FolnerService.couple_from_decomposition(partition, n, threads)
        result['partition'] = partition
        result['window_radius'] = window
        return result

    @staticmethod
    def folner_scan(g: GroupModel, family: str, nmax: int) -> List[Dict[str, Any]]:
        """
        Serie (n, #F, #∂F, cociente) para una familia de formas.

        balls: B(e, n); boxes: [0..n-1]^d en Z^d y [0..n-1]^2 × [0..n^2-1] en
        Heisenberg; intervals-of-lamps: cursor y lámparas en [0..n-1].
        """
        if family not in SCAN_FAMILIES:
            raise DomainError(f"Familia desconocida {family!r}; opciones: {', '.join(SCAN_FAMILIES)}")
        if nmax < 1:
            raise DomainError(f"nmax debe ser >= 1 (se recibió {nmax})")

        rows = []
        if family == 'balls':
            ambient = ball(g, nmax + 1)
            for n in range(1, nmax + 1):
                F = ambient.radius_subset(n)
                rows.append(_scan_row(n, len(F), len(boundary(F))))
        elif family == 'boxes':
            if isinstance(g, FreeAbelianGroup):
                shape = lambda n: itertools.product(range(n), repeat=g.d)
            elif isinstance(g, HeisenbergGroup):
                shape = lambda n: itertools.product(range(n), range(n), range(n * n))
            else:
                raise DomainError(f"La familia 'boxes' solo existe para Z^d y Heisenberg (no {g.name})")
            for n in range(1, nmax + 1):
                counts = element_boundary_count(g, shape(n))
                rows.append(_scan_row(n, counts['size'], counts['boundary']))
        else:
            if not isinstance(g, LamplighterGroup):
                raise DomainError(f"La familia 'intervals-of-lamps' solo existe para el lamplighter (no {g.name})")
            for n in range(1, nmax + 1):
                elements = (
                    (cursor, lamps)
                    for cursor in range(n)
                    for size in range(n + 1)
                    for lamps in itertools.combinations(range(n), size)
                )
                counts = element_boundary_count(g, elements)
                rows.append(_scan_row(n, counts['size'], counts['boundary']))
        logger.info(f"Escaneo de Følner {family} en {g.name} hasta n={nmax}: último cociente {rows[-1]['ratio']}")
        return rows

    @staticmethod
    def folner_function_estimate(scan: Sequence[Dict[str, Any]]) -> List[Dict[str, int]]:
        """
        Para k = 1, 2, ... el menor #F escaneado con cociente <= 1/k; se detiene
        en el primer k sin testigo. Es una cota superior de la función de Følner
        a lo largo de la familia.
        """
        estimate = []
        k = 1
        while True:
            sizes = [row['size'] for row in scan if Fraction(row['ratio']) <= Fraction(1, k)]
            if not sizes:
                return estimate
            estimate.append({'k': k, 'size': min(sizes)})
            k += 1

    @staticmethod
    def mass_transport_check(A_list: Sequence[FiniteSubset], B_list: Sequence[FiniteSubset], lam) -> bool:
        """
        Caso finito del transporte de masa: si A_i ⊆ B_i, los B_i son disjuntos
        y #B_i >= λ·#A_i, entonces #(⊔A_i) <= #(⊔B_i)/λ.

        Devuelve si se cumplen a la vez las hipótesis y la conclusión.
        """
        lam = Fraction(lam)
        if lam <= 0:
            raise DomainError(f"λ debe ser positivo (se recibió {lam})")
        if len(A_list) != len(B_list):
            raise DomainError("Las familias A y B deben tener la misma longitud")
        seen = set()
        for B in B_list:
            if seen & B.members:
                raise DomainError("Los conjuntos B_i deben ser disjuntos dos a dos")
            seen |= B.members
        hypotheses = all(
            A.issubset(B) and len(B) >= lam * len(A)
            for A, B in zip(A_list, B_list)
        )
        total_A = sum(len(A) for A in A_list)
        total_B = sum(len(B) for B in B_list)
        return hypotheses and total_A <= total_B / lam


def _scan_row(n: int, size: int, inner: int) -> Dict[str, Any]:
    return {'n': n, 'size': size, 'boundary': inner, 'ratio': Fraction(inner, size)}

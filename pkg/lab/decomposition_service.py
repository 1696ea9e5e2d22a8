"""
Particiones coloreadas de ventanas finitas: testigos a escala finita de la
dimensión de Assouad-Nagata y de la dimensión asintótica.

Una partición cubre una ventana B(e, W) dentro de una bola ambiente de radio
mayor; el margen R - W es lo que permite certificar diámetros y separaciones
con distancias exactas del grupo.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings

from .cayley import Ball, FiniteSubset, ball, diameter
from .exceptions import DomainError, MarginError
from .groups import get_group

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    """
    Partición de la ventana en piezas coloreadas.

    ``stretch`` es la K declarada (cota de diámetro K·r); ``clipped`` marca las
    piezas recortadas por el borde de la ventana.
    """

    ambient: Ball
    scale: int
    pieces: Tuple[FiniteSubset, ...]
    color: Tuple[int, ...]
    colors: int
    stretch: Fraction
    window: FiniteSubset
    window_radius: int
    clipped: Tuple[bool, ...]
    method: str = 'canonical'
    seed: Optional[int] = None
    labels: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.pieces) != len(self.color) or len(self.pieces) != len(self.clipped):
            raise DomainError("Cada pieza necesita un color y una marca de recorte")
        labels = np.full(self.ambient.size, -1, dtype=np.int64)
        for i, piece in enumerate(self.pieces):
            if not piece.members:
                raise DomainError(f"La pieza {i} está vacía")
            idx = piece.indices()
            if (labels[idx] >= 0).any():
                raise DomainError(f"La pieza {i} se solapa con otra pieza")
            labels[idx] = i
        covered = np.flatnonzero(labels >= 0)
        if set(covered.tolist()) != set(self.window.members):
            raise DomainError("La unión de las piezas no coincide con la ventana")
        if any(c < 0 or c >= self.colors for c in self.color):
            raise DomainError(f"Los colores deben estar en 0..{self.colors - 1}")
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)

    @property
    def group(self):
        return self.ambient.group

    def pieces_of_color(self, c: int) -> List[int]:
        return [i for i, k in enumerate(self.color) if k == c]

    def with_colors(self, color: Sequence[int]) -> 'Partition':
        """Copia con otra asignación de colores (útil para contraejemplos)."""
        return Partition(
            ambient=self.ambient, scale=self.scale, pieces=self.pieces,
            color=tuple(color), colors=max(self.colors, max(color) + 1),
            stretch=self.stretch, window=self.window, window_radius=self.window_radius,
            clipped=self.clipped, method=self.method, seed=self.seed,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'partition',
            'group': self.group.name,
            'method': self.method,
            'seed': self.seed,
            'scale': self.scale,
            'colors': self.colors,
            'K': str(self.stretch),
            'window_radius': self.window_radius,
            'ambient_radius': self.ambient.radius,
            'pieces': [piece.keys() for piece in self.pieces],
            'color': list(self.color),
            'clipped': list(self.clipped),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Partition':
        group = get_group(data['group'])
        ambient = ball(group, int(data['ambient_radius']))
        pieces = tuple(
            ambient.subset(ambient.index_of(group.decode(key)) for key in keys)
            for keys in data['pieces']
        )
        return cls(
            ambient=ambient, scale=int(data['scale']), pieces=pieces,
            color=tuple(int(c) for c in data['color']), colors=int(data['colors']),
            stretch=Fraction(data['K']),
            window=ambient.radius_subset(int(data['window_radius'])),
            window_radius=int(data['window_radius']),
            clipped=tuple(bool(c) for c in data['clipped']),
            method=data.get('method', 'canonical'), seed=data.get('seed'),
        )


def canonical_margin(d: int, r: int) -> int:
    """Margen para certificar separaciones hasta 2r+1 y diámetros d(2r-1)."""
    return max(2 * r + 1, d * (2 * r - 1))


def greedy_margin(r: int, K: Fraction) -> int:
    rho = math.floor(Fraction(K) * r / 2)
    return max(2 * rho, r + 1)


class DecompositionService:
    """
    Construcción y verificación de particiones r-disjuntas por color con
    diámetro acotado.
    """

    @staticmethod
    def canonical_decomposition_zd(d: int, r: int, window_radius: int, check: bool = True,
                                   ambient_radius: Optional[int] = None) -> Partition:
        """
        Partición de Z^d en cubos de lado 2r coloreados por la paridad de sus
        coordenadas (2 colores en Z, 2^d en general), recortados a la ventana.

        Args:
            d: dimensión (1, 2 o 3)
            r: escala, entero > 1
            window_radius: radio de la ventana B(e, W)
            check: verificar la partición antes de devolverla
            ambient_radius: radio ambiente mínimo (para certificar más lejos)

        Returns:
            Partition: con K = 2 para d = 1 y K = d(2r-1)/r para d >= 2
        """
        if d not in (1, 2, 3):
            raise DomainError(f"Solo hay partición canónica para Z^1, Z^2 y Z^3 (d={d})")
        if r <= 1:
            raise DomainError(f"La escala debe ser > 1 (se recibió r={r})")
        if window_radius < 0:
            raise DomainError(f"El radio de la ventana debe ser >= 0 (se recibió {window_radius})")

        group = get_group(f"z{d}")
        ambient = ball(group, max(window_radius + canonical_margin(d, r), ambient_radius or 0))
        window_idx = np.flatnonzero(ambient.lengths <= window_radius)
        coords = np.asarray([ambient.elements[i] for i in window_idx], dtype=np.int64).reshape(-1, d)

        cubes, inverse = np.unique(np.floor_divide(coords, 2 * r), axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        pieces, color, clipped = [], [], []
        full_size = (2 * r) ** d
        for k, cube in enumerate(cubes):
            members = window_idx[inverse == k]
            pieces.append(ambient.subset(members))
            color.append(int(sum(int(q % 2) << i for i, q in enumerate(cube))))
            clipped.append(len(members) < full_size)

        stretch = Fraction(2) if d == 1 else Fraction(d * (2 * r - 1), r)
        partition = Partition(
            ambient=ambient, scale=r, pieces=tuple(pieces), color=tuple(color),
            colors=2 ** d, stretch=stretch, window=ambient.subset(window_idx),
            window_radius=window_radius, clipped=tuple(clipped), method='canonical',
        )
        logger.info(f"Partición canónica de Z^{d}: r={r}, {len(pieces)} piezas, ventana {window_radius}")

        if check:
            report = DecompositionService.verify_decomposition(partition)
            if not report['valid']:
                raise DomainError(f"La partición canónica no superó la verificación: {report}")
        return partition

    @staticmethod
    def greedy_decomposition(ambient: Ball, r: int, target_colors: int, K,
                             seed: Optional[int] = None,
                             window_radius: Optional[int] = None) -> Dict[str, Any]:
        """
        Talla piezas por bolas: toma el elemento libre de menor longitud (empates
        por índice), forma la pieza con los elementos libres a distancia <= ⌊K·r/2⌋
        y le asigna el menor color cuyas piezas estén todas a distancia > r.

        Args:
            ambient: bola ambiente
            r: escala (> 1)
            target_colors: presupuesto de colores
            K: estiramiento declarado (>= 1)
            seed: si se indica, baraja los empates de longitud
            window_radius: por defecto, el mayor radio certificable

        Returns:
            dict: {'success': True, 'partition', 'report'} o bien
                  {'success': False, 'error', 'message', 'certificate'}
        """
        K = Fraction(K)
        if r <= 1:
            raise DomainError(f"La escala debe ser > 1 (se recibió r={r})")
        if target_colors < 1:
            raise DomainError(f"Se necesita al menos un color (se recibió {target_colors})")
        if K < 1:
            raise DomainError(f"El estiramiento K debe ser >= 1 (se recibió {K})")

        rho = math.floor(K * r / 2)
        margin = greedy_margin(r, K)
        if window_radius is None:
            window_radius = ambient.radius - margin
        if window_radius < 0 or window_radius + margin > ambient.radius:
            logger.error(f"Ventana {window_radius} sin margen {margin} en bola de radio {ambient.radius}")
            raise MarginError(
                f"La ventana de radio {window_radius} necesita margen {margin} "
                f"y la bola ambiente tiene radio {ambient.radius}",
                required=margin, available=ambient.radius - max(window_radius, 0),
            )

        group = ambient.group
        window_idx = np.flatnonzero(ambient.lengths <= window_radius)
        order = window_idx
        if seed is not None:
            rng = np.random.Generator(np.random.Philox(key=seed))
            shuffle = rng.permutation(len(window_idx))
            order = window_idx[np.lexsort((shuffle, ambient.lengths[window_idx]))]

        # -2 fuera de la ventana, -1 libre, >= 0 pieza asignada
        labels = np.full(ambient.size, -2, dtype=np.int64)
        labels[window_idx] = -1
        pieces: List[np.ndarray] = []
        color: List[int] = []
        clipped: List[bool] = []

        for x in order:
            if labels[x] != -1:
                continue
            reached, _ = ambient.reach(np.array([x]), rho)
            members = reached[labels[reached] == -1]
            is_clipped = bool((labels[reached] == -2).any())

            near, dist = ambient.reach(members, r)
            hit = labels[near]
            blocking: Dict[int, int] = {}
            for piece_id, d in zip(hit[hit >= 0].tolist(), dist[hit >= 0].tolist()):
                blocking[piece_id] = min(d, blocking.get(piece_id, d))
            blocked_colors = {color[i] for i in blocking}
            free = [c for c in range(target_colors) if c not in blocked_colors]
            if not free:
                logger.warning(
                    f"Descomposición voraz de {group.name} sin colores: r={r}, "
                    f"{target_colors} colores, elemento {group.key_text(ambient.elements[x])}"
                )
                return {
                    'success': False,
                    'error': 'color_budget_exceeded',
                    'message': f"Se necesitan más de {target_colors} colores a escala r={r}",
                    'certificate': {
                        'element': group.key_text(ambient.elements[x]),
                        'piece': [group.key_text(ambient.elements[i]) for i in sorted(members.tolist())],
                        'blocking_pieces': [
                            {
                                'piece': [group.key_text(ambient.elements[i]) for i in sorted(pieces[p].tolist())],
                                'color': color[p],
                                'distance': blocking[p],
                            }
                            for p in sorted(blocking)
                        ],
                    },
                    'pieces_built': len(pieces),
                    'scale': r,
                    'colors': target_colors,
                    'K': str(K),
                    'group': group.name,
                }
            labels[members] = len(pieces)
            pieces.append(members)
            color.append(free[0])
            clipped.append(is_clipped)

        partition = Partition(
            ambient=ambient, scale=r,
            pieces=tuple(ambient.subset(m) for m in pieces),
            color=tuple(color), colors=target_colors, stretch=K,
            window=ambient.subset(window_idx), window_radius=window_radius,
            clipped=tuple(clipped), method='greedy', seed=seed,
        )
        report = DecompositionService.verify_decomposition(partition)
        if not report['valid']:
            logger.error(f"La partición voraz no superó la autoverificación: {report}")
            return {
                'success': False,
                'error': 'self_check_failed',
                'message': 'La partición construida no es válida',
                'report': report,
            }
        logger.info(f"Partición voraz de {group.name}: r={r}, {len(pieces)} piezas, {target_colors} colores")
        return {'success': True, 'partition': partition, 'report': report}

    @staticmethod
    def verify_decomposition(p: Partition, threads: Optional[int] = None) -> Dict[str, Any]:
        """
        Comprueba diámetro <= K·r y separación estricta > r entre piezas del
        mismo color.

        Returns:
            dict: max_piece_diameter, min_same_color_gap (None si no hay dos
                  piezas del mismo color a distancia certificable),
                  gap_is_lower_bound, diameter_ok, gap_ok, valid
        """
        ambient = p.ambient
        cap = ambient.radius - p.window_radius
        if cap < p.scale + 1:
            logger.error(f"Margen {cap} insuficiente para certificar separaciones > {p.scale}")
            raise MarginError(
                f"Para certificar separaciones > {p.scale} hace falta margen {p.scale + 1} (hay {cap})",
                required=p.scale + 1, available=cap,
            )
        color = np.asarray(p.color, dtype=np.int64)

        def inspect(i: int):
            piece = p.pieces[i]
            reached, dist = ambient.reach(piece.indices(), cap)
            hit = p.labels[reached]
            same = (hit >= 0) & (hit != i)
            same[same] = color[hit[same]] == color[i]
            gap = int(dist[same].min()) if same.any() else None
            return diameter(piece), gap

        workers = threads or settings.COARSE_LAB_THREADS
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(inspect, range(len(p.pieces))))
        else:
            results = [inspect(i) for i in range(len(p.pieces))]

        max_diameter = max(d for d, _ in results)
        gaps = [g for _, g in results if g is not None]
        min_gap = min(gaps) if gaps else None
        diameter_ok = max_diameter <= p.stretch * p.scale
        gap_ok = min_gap is None or min_gap > p.scale
        return {
            'max_piece_diameter': max_diameter,
            'min_same_color_gap': min_gap,
            'gap_certified_up_to': cap,
            'gap_is_lower_bound': min_gap is None,
            'diameter_bound': str(p.stretch * p.scale),
            'diameter_ok': diameter_ok,
            'gap_ok': gap_ok,
            'valid': bool(diameter_ok and gap_ok),
            'pieces': len(p.pieces),
        }

    @staticmethod
    def observed_control(partitions: Sequence[Partition]) -> Dict[str, Any]:
        """
        Muestras (r_i, diámetro máximo) de la función de control y pendiente del
        ajuste lineal; una pendiente finita estable indica control lineal.
        """
        if not partitions:
            raise DomainError("Se necesita al menos una partición")
        names = {p.group.name for p in partitions}
        if len(names) > 1:
            raise DomainError(f"Las particiones mezclan grupos: {sorted(names)}")
        samples = []
        for p in sorted(partitions, key=lambda q: q.scale):
            report = DecompositionService.verify_decomposition(p)
            if not report['valid']:
                raise DomainError(f"La partición a escala {p.scale} no es válida")
            samples.append((p.scale, report['max_piece_diameter']))
        result = {'group': names.pop(), 'samples': samples, 'slope': None, 'intercept': None}
        if len(samples) >= 2:
            r, diam = np.asarray(samples, dtype=float).T
            slope, intercept = np.polyfit(r, diam, 1)
            result['slope'] = float(slope)
            result['intercept'] = float(intercept)
        return result

"""
Bolas de Cayley y geometría de subconjuntos finitos en la métrica de palabras.

Dentro de una bola los elementos se manejan por índice denso (orden de
descubrimiento BFS); la adyacencia es una tabla ``neighbors[i, j]`` con el
índice de ``x_i · s_j`` o -1 si cae fuera de la bola.

Las distancias se calculan por BFS dentro de la bola ambiente. Una distancia
solo se da por certificada cuando todos los caminos de esa longitud que
salen del conjunto de partida siguen dentro de la bola; en otro caso se lanza
MarginError en lugar de confundir el borde de la bola con el del grupo.
"""

import logging
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from django.conf import settings

from .exceptions import DomainError, MarginError, ResourceLimitError
from .groups import Element, GroupModel, get_group

logger = logging.getLogger(__name__)

# Pares a^{-1}b por bloque en el cálculo vectorizado del diámetro
PAIR_BLOCK = 2_000_000


class Ball:
    """
    Bola B(e, R) con longitudes exactas y adyacencia por generadores.
    Inmutable una vez construida; se puede compartir entre hilos.
    """

    def __init__(self, group: GroupModel, radius: int, elements: List[Element],
                 lengths: np.ndarray, neighbors: np.ndarray):
        self.group = group
        self.radius = radius
        self.elements = elements
        self.lengths = lengths
        self.neighbors = neighbors
        self.lengths.setflags(write=False)
        self.neighbors.setflags(write=False)
        self._index: Optional[Dict[Element, int]] = None
        # (cotas, dimensiones, claves ordenadas, longitudes) en grupos con coordenadas
        self._lookup = None
        self._local = threading.local()

    def __repr__(self):
        return f"Ball({self.group.name}, R={self.radius}, size={self.size})"

    def __len__(self):
        return len(self.elements)

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def index(self) -> Dict[Element, int]:
        if self._index is None:
            self._index = {x: i for i, x in enumerate(self.elements)}
        return self._index

    def index_of(self, element: Element) -> int:
        try:
            return self.index[element]
        except KeyError:
            raise DomainError(f"{element!r} no está en la bola de radio {self.radius} de {self.group.name}")

    def sphere_sizes(self) -> List[int]:
        return np.bincount(self.lengths, minlength=self.radius + 1).tolist()

    def subset(self, indices: Iterable[int]) -> 'FiniteSubset':
        return FiniteSubset(self, frozenset(int(i) for i in indices))

    def subset_of_elements(self, elements: Iterable[Element]) -> 'FiniteSubset':
        return self.subset(self.index_of(x) for x in elements)

    def radius_subset(self, r: int) -> 'FiniteSubset':
        """B(e, r) como subconjunto de esta bola."""
        return self.subset(np.flatnonzero(self.lengths <= r))

    @property
    def has_coordinates(self) -> bool:
        """Si la bola admite consultas de longitud por coordenadas."""
        return self._lookup is not None

    def coordinate_lengths(self, coords: np.ndarray) -> np.ndarray:
        """Longitud de palabra de cada fila de coordenadas; -1 si no está en la bola."""
        if self._lookup is None:
            raise DomainError(f"{self.group.name} no tiene motor de coordenadas")
        bounds, dims, keys, lengths = self._lookup
        coords = np.asarray(coords, dtype=np.int64)
        result = np.full(len(coords), -1, dtype=np.int64)
        inside = np.all(np.abs(coords) <= bounds, axis=1)
        packed = np.ravel_multi_index(tuple((coords[inside] + bounds).T), dims)
        pos = np.minimum(np.searchsorted(keys, packed), len(keys) - 1)
        found = keys[pos] == packed
        column = np.full(len(packed), -1, dtype=np.int64)
        column[found] = lengths[pos[found]]
        result[inside] = column
        return result

    def step_table(self, atoms: Sequence[Element]) -> np.ndarray:
        """
        Índice de x·s para cada elemento x y cada átomo s (-1 fuera de la bola).
        Para generadores se reutiliza la tabla de adyacencia.
        """
        columns = []
        for s in atoms:
            if s in self.group.generators:
                columns.append(self.neighbors[:, self.group.generators.index(s)])
                continue
            index = self.index
            product = self.group._product
            columns.append(np.fromiter(
                (index.get(product(x, s), -1) for x in self.elements),
                dtype=np.int64, count=self.size,
            ))
        table = np.stack(columns, axis=1) if columns else np.empty((self.size, 0), dtype=np.int64)
        table.setflags(write=False)
        return table

    def distances_from(self, sources: np.ndarray, depth: int) -> np.ndarray:
        """BFS multi-fuente hasta ``depth`` dentro de la bola; -1 si no se alcanza."""
        dist = np.full(self.size, -1, dtype=np.int64)
        idx, d = self.reach(sources, depth)
        dist[idx] = d
        return dist

    def reach(self, sources: np.ndarray, depth: int, targets: Optional[np.ndarray] = None):
        """
        BFS acotado que solo toca la región alcanzada. Con ``targets`` (máscara)
        se detiene en cuanto todos los objetivos han sido alcanzados.

        Returns:
            (índices alcanzados, distancias) en orden de capa
        """
        scratch = self._scratch()
        frontier = np.unique(np.asarray(sources, dtype=np.int64))
        scratch[frontier] = 0
        touched = [frontier]
        pending = int(targets.sum() - targets[frontier].sum()) if targets is not None else -1
        for d in range(1, depth + 1):
            if frontier.size == 0 or pending == 0:
                break
            candidates = self.neighbors[frontier].ravel()
            candidates = candidates[candidates >= 0]
            candidates = np.unique(candidates[scratch[candidates] < 0])
            scratch[candidates] = d
            touched.append(candidates)
            if targets is not None:
                pending -= int(targets[candidates].sum())
            frontier = candidates
        idx = np.concatenate(touched)
        dist = scratch[idx].copy()
        scratch[idx] = -1
        return idx, dist

    def _scratch(self) -> np.ndarray:
        # un búfer por hilo: las consultas concurrentes comparten la bola, no el búfer
        buffer = getattr(self._local, 'buffer', None)
        if buffer is None:
            buffer = np.full(self.size, -1, dtype=np.int64)
            self._local.buffer = buffer
        return buffer


@dataclass(frozen=True)
class FiniteSubset:
    """Subconjunto finito de una bola ambiente, dado por índices."""

    ambient: Ball
    members: frozenset

    def __post_init__(self):
        if self.members and (min(self.members) < 0 or max(self.members) >= self.ambient.size):
            raise DomainError("Los miembros deben ser índices de la bola ambiente")

    def __len__(self):
        return len(self.members)

    def __contains__(self, index):
        return index in self.members

    def __repr__(self):
        return f"FiniteSubset({self.ambient.group.name}, size={len(self)})"

    def indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.members), dtype=np.int64, count=len(self.members))

    def mask(self) -> np.ndarray:
        mask = np.zeros(self.ambient.size, dtype=bool)
        mask[self.indices()] = True
        return mask

    def elements(self) -> List[Element]:
        return [self.ambient.elements[i] for i in sorted(self.members)]

    def keys(self) -> List[str]:
        return [self.ambient.group.key_text(x) for x in self.elements()]

    def max_length(self) -> int:
        if not self.members:
            return 0
        return int(self.ambient.lengths[self.indices()].max())

    def issubset(self, other: 'FiniteSubset') -> bool:
        return self.members <= other.members


# =============================================================================
# CONSTRUCCIÓN DE BOLAS
# =============================================================================

def _memcap(memcap: Optional[int]) -> int:
    return memcap if memcap is not None else settings.COARSE_LAB_MEMCAP


def _over_cap(group: GroupModel, radius: int, count: int, cap: int, complete: int):
    logger.error(f"Bola de {group.name} de radio {radius} supera el límite de {cap} elementos")
    raise ResourceLimitError(
        f"La bola de radio {radius} en {group.name} supera el límite de memoria "
        f"COARSE_LAB_MEMCAP={cap} ({count} elementos o más)",
        cap=cap, complete_radius=complete,
    )


def _bfs_generic(group: GroupModel, radius: int, cap: int) -> Ball:
    generators = group.generators
    product = group._product
    elements = [group.identity]
    index = {group.identity: 0}
    lengths = [0]
    neighbors: List[int] = []
    i = 0
    while i < len(elements):
        x = elements[i]
        depth = lengths[i]
        if depth < radius:
            for s in generators:
                y = product(x, s)
                j = index.get(y)
                if j is None:
                    j = len(elements)
                    index[y] = j
                    elements.append(y)
                    lengths.append(depth + 1)
                neighbors.append(j)
            if len(elements) > cap:
                _over_cap(group, radius, len(elements), cap, depth)
        else:
            neighbors.extend(index.get(product(x, s), -1) for s in generators)
        i += 1
    ball = Ball(
        group, radius, elements,
        np.asarray(lengths, dtype=np.int64),
        np.asarray(neighbors, dtype=np.int64).reshape(len(elements), len(generators)),
    )
    ball._index = index
    return ball


def _bfs_coordinates(group: GroupModel, radius: int, cap: int) -> Ball:
    """
    BFS por capas sobre arrays de coordenadas enteras (Z^d, Heisenberg).
    Cada capa se ordena por clave empaquetada, lo que fija el orden de índices.
    """
    bounds = np.asarray(group.coordinate_bounds(radius), dtype=np.int64)
    dims = tuple(int(b) for b in 2 * bounds + 1)
    generators = group.generators

    def inside(coords):
        return np.all(np.abs(coords) <= bounds, axis=1)

    def pack(coords):
        return np.ravel_multi_index(tuple((coords + bounds).T), dims)

    frontier = np.zeros((1, group.coordinate_width), dtype=np.int64)
    layers = [frontier]
    visited = pack(frontier)
    count = 1
    for depth in range(1, radius + 1):
        candidates = np.concatenate([group.multiply_coordinates(frontier, s) for s in generators])
        keys, first = np.unique(pack(candidates), return_index=True)
        fresh = ~np.isin(keys, visited, assume_unique=True)
        frontier = candidates[first[fresh]]
        visited = np.union1d(visited, keys[fresh])
        layers.append(frontier)
        count += len(frontier)
        if count > cap:
            _over_cap(group, radius, count, cap, depth - 1)

    coords = np.concatenate(layers)
    lengths = np.concatenate([np.full(len(layer), d, dtype=np.int64) for d, layer in enumerate(layers)])
    keys = pack(coords)
    order = np.argsort(keys)
    sorted_keys = keys[order]

    neighbors = np.full((len(coords), len(generators)), -1, dtype=np.int64)
    for j, s in enumerate(generators):
        moved = group.multiply_coordinates(coords, s)
        ok = inside(moved)
        moved_keys = pack(moved[ok])
        pos = np.searchsorted(sorted_keys, moved_keys)
        pos_clipped = np.minimum(pos, len(sorted_keys) - 1)
        found = sorted_keys[pos_clipped] == moved_keys
        column = np.full(int(ok.sum()), -1, dtype=np.int64)
        column[found] = order[pos_clipped[found]]
        neighbors[ok, j] = column

    elements = [tuple(row) for row in coords.tolist()]
    result = Ball(group, radius, elements, lengths, neighbors)
    result._lookup = (bounds, dims, sorted_keys, lengths[order])
    return result


@lru_cache(maxsize=8)
def _cached_ball(name: str, radius: int, cap: int) -> Ball:
    group = get_group(name)
    if group.coordinate_width is not None:
        result = _bfs_coordinates(group, radius, cap)
    else:
        result = _bfs_generic(group, radius, cap)
    logger.info(f"Bola construida: {group.name} R={radius} con {result.size} elementos")
    return result


def ball(g: GroupModel, R: int, memcap: Optional[int] = None) -> Ball:
    """
    Construye B(e, R) por BFS con longitudes de palabra exactas.

    Args:
        g: modelo del grupo (del catálogo)
        R: radio, entero >= 0
        memcap: límite de elementos; por defecto settings.COARSE_LAB_MEMCAP

    Returns:
        Ball: elementos en orden BFS, longitudes y adyacencia
    """
    if not isinstance(R, int) or R < 0:
        raise DomainError(f"El radio debe ser un entero >= 0 (se recibió {R!r})")
    return _cached_ball(g.name, R, _memcap(memcap))


@lru_cache(maxsize=32)
def _radius_within(name: str, budget: int, limit: int) -> int:
    try:
        _cached_ball(name, limit, budget)
    except ResourceLimitError as e:
        return e.complete_radius
    return limit


def radius_within(g: GroupModel, budget: int, limit: int) -> int:
    """Mayor R <= limit con #B(e, R) <= budget (un solo BFS que se corta en el límite)."""
    if budget < 1 or limit < 0:
        raise DomainError(f"Presupuesto y radio deben ser positivos (se recibió {budget}, {limit})")
    return _radius_within(g.name, budget, limit)


# =============================================================================
# GEOMETRÍA DE SUBCONJUNTOS
# =============================================================================

def require_margin(A: FiniteSubset, needed: int, what: str):
    available = A.ambient.radius - A.max_length()
    if available < needed:
        logger.error(f"Margen insuficiente para {what}: se necesita {needed}, hay {available}")
        raise MarginError(
            f"Margen insuficiente para {what}: el conjunto llega a longitud {A.max_length()} "
            f"y la bola ambiente tiene radio {A.ambient.radius} (se necesita margen {needed})",
            required=needed, available=available,
        )


def _require_nonempty(*sets: FiniteSubset):
    for A in sets:
        if not A.members:
            raise DomainError("La operación no está definida para el conjunto vacío")


def _require_same_ambient(A: FiniteSubset, B: FiniteSubset):
    if A.ambient is not B.ambient:
        raise DomainError("Los conjuntos deben compartir la misma bola ambiente")


def boundary(A: FiniteSubset) -> FiniteSubset:
    """Borde interior ∂_S A: elementos de A con algún vecino fuera de A."""
    require_margin(A, 1, 'el borde')
    if not A.members:
        return A
    idx = A.indices()
    mask = A.mask()
    outside = ~mask[A.ambient.neighbors[idx]]
    return A.ambient.subset(idx[outside.any(axis=1)])


def neighborhood(A: FiniteSubset, n: int) -> FiniteSubset:
    """B(A, n) = {x : d_S(x, A) <= n} por BFS multi-fuente."""
    if n < 0:
        raise DomainError(f"El radio del entorno debe ser >= 0 (se recibió {n})")
    require_margin(A, n, f'el {n}-entorno')
    if not A.members:
        return A
    idx, _ = A.ambient.reach(A.indices(), n)
    return A.ambient.subset(idx)


def distance_at_most(A: FiniteSubset, B: FiniteSubset, cap: int) -> Optional[int]:
    """
    d_S(A, B) si es <= cap; None si es estrictamente mayor que cap.
    Exige margen ``cap`` alrededor de A para que la respuesta sea exacta.
    """
    _require_nonempty(A, B)
    _require_same_ambient(A, B)
    require_margin(A, cap, f'certificar distancias hasta {cap}')
    idx, dist = A.ambient.reach(A.indices(), cap)
    hits = dist[B.mask()[idx]]
    return int(hits.min()) if hits.size else None


def set_distance(A: FiniteSubset, B: FiniteSubset) -> int:
    """min d_S(a, b) sobre a ∈ A, b ∈ B."""
    _require_nonempty(A, B)
    _require_same_ambient(A, B)
    depth = A.ambient.radius - A.max_length()
    d = distance_at_most(A, B, max(depth, 0))
    if d is None:
        logger.error(f"La distancia entre conjuntos supera la profundidad certificable {depth}")
        raise MarginError(
            f"No se puede certificar la distancia: supera {depth} con la bola de radio {A.ambient.radius}",
            required=depth + 1, available=depth,
        )
    return d


def _diameter_by_coordinates(A: FiniteSubset) -> Optional[int]:
    """
    max |a^{-1}b| consultando la longitud de cada cociente en la bola; None si
    algún cociente cae fuera de ella.
    """
    g = A.ambient.group
    coords = np.asarray(A.elements(), dtype=np.int64).reshape(len(A), g.coordinate_width)
    rows = max(1, PAIR_BLOCK // len(coords))
    best = 0
    for start in range(0, len(coords), rows):
        quotients = g.relative_coordinates(coords[start:start + rows], coords)
        lengths = A.ambient.coordinate_lengths(quotients.reshape(-1, g.coordinate_width))
        if (lengths < 0).any():
            return None
        best = max(best, int(lengths.max()))
    return best


def diameter(A: FiniteSubset) -> int:
    """
    max d_S(a, b) sobre pares de A. En grupos con coordenadas se consultan
    los cocientes a^{-1}b en la bola; si no, un BFS acotado por cada elemento.
    """
    _require_nonempty(A)
    ambient = A.ambient
    if ambient.has_coordinates:
        best = _diameter_by_coordinates(A)
        if best is not None:
            return best
    mask = A.mask()
    best = 0
    for i in A.indices():
        depth = ambient.radius - int(ambient.lengths[i])
        reached, dist = ambient.reach(np.array([i]), depth, targets=mask)
        dist = dist[mask[reached]]
        if dist.size < len(A):
            logger.error(f"Diámetro no certificable desde el índice {i} con profundidad {depth}")
            raise MarginError(
                f"No se puede certificar el diámetro: hay pares a distancia mayor que {depth} "
                f"dentro de la bola de radio {ambient.radius}",
                required=depth + 1, available=depth,
            )
        best = max(best, int(dist.max()))
    return best


def growth(g: GroupModel, Rmax: int, memcap: Optional[int] = None) -> List[int]:
    """Función de crecimiento v(0..Rmax) = #B(e, r)."""
    spheres = ball(g, Rmax, memcap).sphere_sizes()
    return np.cumsum(spheres).tolist()


def growth_rate_estimate(series: Sequence[int]) -> dict:
    """
    Cocientes v(n+1)/v(n) y pendiente log-log de la cola: una pendiente que
    crece con n indica crecimiento exponencial; estable, polinomial de ese grado.
    """
    v = np.asarray(series, dtype=float)
    ratios = (v[1:] / v[:-1]).tolist() if len(v) > 1 else []
    tail = np.arange(len(v))[max(1, len(v) // 2):]
    degree = None
    if len(tail) >= 2:
        degree = float(np.polyfit(np.log(tail), np.log(v[tail]), 1)[0])
    return {
        'ratios': ratios,
        'last_ratio': ratios[-1] if ratios else None,
        'polynomial_degree_estimate': degree,
    }


def element_boundary_count(g: GroupModel, elements: Iterable[Element]) -> Dict[str, int]:
    """
    #F y #∂_S F calculados con la aritmética del grupo, sin bola ambiente.
    Sirve para familias de formas que no caben cómodamente en una bola.
    """
    members = set(elements)
    product = g._product
    inner = sum(
        1 for x in members
        if any(product(x, s) not in members for s in g.generators)
    )
    return {'size': len(members), 'boundary': inner}

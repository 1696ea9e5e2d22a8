"""
Perfil l_p dentro de bolas.

Para p = 2 el perfil de B(e, r) es el menor autovalor de I - P_B, con P_B el
operador de transición restringido a la bola y exterior absorbente. Se
calcula por iteración de potencias sobre el operador perezoso (I + P_B)/2,
cuyo autovalor dominante es simple y positivo incluso en grafos bipartitos.

Para cualquier p, las parejas de Følner dan cotas superiores mediante la
función de prueba min(d(x, G∖F), n)/n.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from django.conf import settings

from .cayley import Ball, FiniteSubset, ball, require_margin
from .exceptions import DomainError, NumericalError
from .folner_service import FolnerCouple
from .groups import GroupModel
from .walk_service import StepDistribution

logger = logging.getLogger(__name__)

DENSE_ORACLE_LIMIT = 400


@dataclass(frozen=True)
class TestFunction:
    """
    Función racional numerators/denominator sobre la bola ambiente, nula
    fuera del soporte.
    """

    ambient: Ball
    numerators: np.ndarray
    denominator: int
    support: FiniteSubset

    def __post_init__(self):
        if self.denominator <= 0:
            raise DomainError("El denominador debe ser positivo")
        if not (self.numerators != 0).any():
            raise DomainError("La función de prueba es idénticamente cero")
        outside = np.ones(self.ambient.size, dtype=bool)
        outside[self.support.indices()] = False
        if (self.numerators[outside] != 0).any():
            raise DomainError("La función de prueba debe anularse fuera del soporte")

    @property
    def values(self) -> np.ndarray:
        return self.numerators / self.denominator

    def value_at(self, index: int) -> Fraction:
        return Fraction(int(self.numerators[index]), self.denominator)

    @classmethod
    def indicator(cls, A: FiniteSubset) -> 'TestFunction':
        numerators = np.zeros(A.ambient.size, dtype=np.int64)
        numerators[A.indices()] = 1
        return cls(A.ambient, numerators, 1, A)


@dataclass(frozen=True)
class ProfileReport:
    """
    Serie (r, λ, método, residuo) con λ exacto ('exact') o cota superior
    ('upper_bound'), y el ajuste potencial C·r^exponente.
    """

    group: str
    p: float
    series: Tuple[Dict[str, Any], ...]
    fit: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if any(row['lambda'] < 0 for row in self.series):
            raise DomainError("Los valores del perfil deben ser >= 0")

    def exact_series(self) -> List[Tuple[int, float]]:
        return [(row['r'], row['lambda']) for row in self.series if row['method'] == 'exact']

    def upper_bounds(self) -> List[Tuple[int, float]]:
        return [(row['r'], row['lambda']) for row in self.series if row['method'] == 'upper_bound']

    def sandwich_ok(self) -> bool:
        """Cada cota superior domina al valor exacto con el mismo r."""
        exact = dict(self.exact_series())
        return all(bound >= exact[r] - 1e-12 for r, bound in self.upper_bounds() if r in exact)

    def rows(self) -> List[Tuple]:
        return [(row['r'], row['lambda'], row['method'], row.get('residual')) for row in self.series]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'profile',
            'group': self.group,
            'p': self.p,
            'series': list(self.series),
            'fit': self.fit,
            **self.extra,
        }


class ProfileService:
    """
    Servicio para el perfil l_p: funciones de prueba, cocientes de Rayleigh y
    autovalor de Dirichlet.
    """

    @staticmethod
    def couple_test_function(cpl: FolnerCouple) -> TestFunction:
        """
        f(x) = min(d_S(x, G∖F), n)/n en F y 0 fuera: vale 1 en F' y decrece
        linealmente en el collar de anchura n.
        """
        F, n = cpl.F, cpl.n
        require_margin(F, n, 'la función de prueba de la pareja')
        ambient = F.ambient
        mask = F.mask()
        distance = ambient.distances_from(np.flatnonzero(~mask), n)
        numerators = np.where(mask, np.where(distance < 0, n, np.minimum(distance, n)), 0).astype(np.int64)
        return TestFunction(ambient, numerators, n, F)

    @staticmethod
    def lp_rayleigh(f: TestFunction, p, mu: StepDistribution) -> Dict[str, Any]:
        """
        energía = (1/2) Σ_x Σ_s |f(x) - f(xs)|^p μ(s), norma = Σ |f|^p y
        cociente = energía / norma. Con p entero el resultado es exacto
        (Fraction).

        Por simetría de μ, los términos con x fuera del soporte equivalen a los
        saltos hacia fuera desde el soporte, que se cuentan dos veces.
        """
        if not 1 <= p <= 2:
            raise DomainError(f"p debe estar en [1, 2] (se recibió {p})")
        if mu.group is not f.ambient.group:
            raise DomainError("La medida y la función deben ser del mismo grupo")
        require_margin(f.support, mu.max_atom_length, 'el cociente de Rayleigh')

        ambient = f.ambient
        idx = f.support.indices()
        table = ambient.step_table(mu.elements)[idx]
        inside = np.zeros(ambient.size, dtype=bool)
        inside[idx] = True
        here = f.numerators[idx]
        there = f.numerators[table]
        weight = np.where(inside[table], 1, 2)
        exact = float(p).is_integer()

        if exact:
            p = int(p)
            D = Fraction(f.denominator) ** p
            jumps = (np.abs(here[:, None] - there) ** p) * weight
            energy = sum(
                (prob * int(jumps[:, j].sum()) for j, (_, prob) in enumerate(mu.atoms)),
                Fraction(0),
            ) / 2 / D
            norm = Fraction(int((np.abs(here) ** p).sum())) / D
        else:
            values = f.values
            jumps = (np.abs(values[idx][:, None] - values[table]) ** p) * weight
            energy = float((jumps * mu.probabilities).sum() / 2)
            norm = float((np.abs(values[idx]) ** p).sum())
        return {'energy': energy, 'norm_p': norm, 'quotient': energy / norm, 'exact': exact}

    @staticmethod
    def dirichlet_operator(g: GroupModel, r: int, mu: StepDistribution) -> Tuple[Ball, sp.csr_matrix]:
        """P_B(x, y) = μ(x^{-1} y) para x, y ∈ B(e, r)."""
        if r < 0:
            raise DomainError(f"El radio debe ser >= 0 (se recibió {r})")
        ambient = ball(g, r + mu.max_atom_length)
        # el orden BFS hace de B(e, r) un prefijo de índices
        inner = np.flatnonzero(ambient.lengths <= r)
        table = ambient.step_table(mu.elements)[inner]
        rows, cols, data = [], [], []
        for j, prob in enumerate(mu.probabilities):
            target = table[:, j]
            ok = (target >= 0) & (target < len(inner))
            rows.append(inner[ok])
            cols.append(target[ok])
            data.append(np.full(int(ok.sum()), prob))
        P = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(inner), len(inner)),
        )
        return ambient, P

    @staticmethod
    def dirichlet_eigenvalue(g: GroupModel, r: int, mu: Optional[StepDistribution] = None,
                             tol: Optional[float] = None, max_iter: Optional[int] = None) -> Dict[str, Any]:
        """
        Menor autovalor de I - P_B por iteración de potencias sobre (I + P_B)/2
        desde el vector uniforme positivo.

        Returns:
            dict: lambda, residual, iterations, size
        """
        mu = mu or StepDistribution.uniform(g)
        tol = tol if tol is not None else settings.COARSE_LAB_EIGEN_TOL
        max_iter = max_iter if max_iter is not None else settings.COARSE_LAB_EIGEN_MAX_ITER
        if tol <= 0:
            raise DomainError(f"La tolerancia debe ser positiva (se recibió {tol})")

        _, P = ProfileService.dirichlet_operator(g, r, mu)
        size = P.shape[0]
        Q = (sp.identity(size, format='csr') + P) * 0.5
        v = np.full(size, 1 / math.sqrt(size))
        theta = 0.0
        residual = math.inf
        for iteration in range(1, max_iter + 1):
            w = Q @ v
            theta = float(v @ w)
            residual = float(np.linalg.norm(w - theta * v))
            if residual < tol:
                break
            v = w / np.linalg.norm(w)
        else:
            logger.error(f"Iteración de potencias sin converger en {g.name}, r={r}: residuo {residual:.3e}")
            raise NumericalError(
                f"La iteración de potencias no convergió en {max_iter} iteraciones (residuo {residual:.3e})",
                residual=residual,
            )
        lam = 2 * (1 - theta)
        logger.info(f"Autovalor de Dirichlet en {g.name}, r={r}: λ={lam:.12g} ({iteration} iteraciones)")
        return {'lambda': lam, 'residual': residual, 'iterations': iteration, 'size': size}

    @staticmethod
    def l2_profile_exact(g: GroupModel, r: int, mu: Optional[StepDistribution] = None,
                         tol: Optional[float] = None) -> float:
        """λ_{S,2}(B(e, r))."""
        return ProfileService.dirichlet_eigenvalue(g, r, mu, tol)['lambda']

    @staticmethod
    def l2_profile_dense(g: GroupModel, r: int, mu: Optional[StepDistribution] = None) -> float:
        """Mismo autovalor por descomposición densa; solo para bolas pequeñas."""
        mu = mu or StepDistribution.uniform(g)
        _, P = ProfileService.dirichlet_operator(g, r, mu)
        if P.shape[0] > DENSE_ORACLE_LIMIT:
            raise DomainError(f"La bola tiene {P.shape[0]} elementos; el oráculo denso admite {DENSE_ORACLE_LIMIT}")
        M = np.eye(P.shape[0]) - P.toarray()
        return float(scipy.linalg.eigh(M, eigvals_only=True)[0])

    @staticmethod
    def profile_fit(series: Sequence[Tuple[int, float]], p: float = 2, slack: float = 1.0) -> Dict[str, Any]:
        """
        Ajuste log λ = exponente·log r + b sobre la mitad superior de la serie
        (al menos tres puntos). C es la media geométrica de λ_r·r^p y se marca
        violación si algún λ_r > C·r^{-p}·(1 + slack).
        """
        if len(series) < 3:
            raise DomainError(f"Se necesitan al menos tres puntos (hay {len(series)})")
        r, lam = np.asarray(series, dtype=float).T
        if (lam <= 0).any():
            raise DomainError("Los valores del perfil deben ser positivos para el ajuste")
        if (r <= 0).any() or (np.diff(r) <= 0).any():
            raise DomainError("Los radios deben ser positivos y crecientes")
        start = min(len(r) // 2, len(r) - 3)
        exponent, intercept = np.polyfit(np.log(r[start:]), np.log(lam[start:]), 1)
        C = float(np.exp(np.mean(np.log(lam) + p * np.log(r))))
        violations = [int(x) for x, y in zip(r, lam) if y > C * x ** (-p) * (1 + slack)]
        return {
            'C': C,
            'exponent': float(exponent),
            'fit_constant': float(np.exp(intercept)),
            'p': p,
            'slack': slack,
            'violations': violations,
            'violation': bool(violations),
        }

    @staticmethod
    def profile_report(g: GroupModel, rmax: int, p: float = 2, mu: Optional[StepDistribution] = None,
                       tol: Optional[float] = None, couples: Sequence[FolnerCouple] = (),
                       rmin: int = 1) -> ProfileReport:
        """
        Serie exacta para r = rmin..rmax (solo p = 2) más las cotas superiores
        de las parejas dadas, cada una en el menor r con F ⊆ B(e, r).
        """
        if rmax < rmin:
            raise DomainError(f"rmax debe ser >= {rmin} (se recibió {rmax})")
        mu = mu or StepDistribution.uniform(g)
        series = []
        if p == 2:
            for r in range(rmin, rmax + 1):
                result = ProfileService.dirichlet_eigenvalue(g, r, mu, tol)
                series.append({'r': r, 'lambda': result['lambda'], 'method': 'exact',
                               'residual': result['residual']})
        for cpl in couples:
            f = ProfileService.couple_test_function(cpl)
            quotient = ProfileService.lp_rayleigh(f, p, mu)['quotient']
            series.append({'r': cpl.F.max_length(), 'lambda': float(quotient), 'method': 'upper_bound',
                           'residual': None, 'n': cpl.n})
        series.sort(key=lambda row: (row['r'], row['method']))

        fit = None
        points = [(row['r'], row['lambda']) for row in series if row['method'] == ('exact' if p == 2 else 'upper_bound')]
        if len(points) >= 3:
            fit = ProfileService.profile_fit(points, p)
        report = ProfileReport(group=g.name, p=p, series=tuple(series), fit=fit)
        if not report.sandwich_ok():
            logger.warning(f"Alguna cota de pareja queda por debajo del valor exacto en {g.name}")
        return report

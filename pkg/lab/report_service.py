"""
Tabla de condiciones de pequeñez por grupo a partir de archivos de resultados.

Columnas: parejas controladas encontradas, exponente del perfil, cota de la
probabilidad de retorno, exponente de deriva y constancia de la cautela
(con corrección de red y sin ella).
"""

import logging
import math
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence

from django.conf import settings

from .exceptions import DomainError
from .serializers import read_result

logger = logging.getLogger(__name__)

DRIFT_EXPONENT_LIMIT = 0.55
PROFILE_EXPONENT_SLACK = 0.3

# Exponente de bola pequeña browniana: P(sup_{t<=1} |B_t| <= a) ~ exp(-π²/(8a²))
SMALL_BALL_EXPONENT = math.pi ** 2 / 8

CONDITIONS = ('couples', 'profile', 'return', 'drift', 'cautious')


def _row_float(row: Dict[str, str], key: str) -> Optional[float]:
    value = row.get(key, '')
    return float(value) if value not in ('', None) else None


def lattice_corrected(rows: Sequence[Dict[str, Any]], eps: float) -> List[Dict[str, Any]]:
    """
    Lleva cada estimación de la barrera efectiva (⌊ε√n⌋ + 1)/√n, donde el
    paseo en la red sale de verdad, a la barrera nominal ε con el exponente
    de bola pequeña. El valor y su error estándar se escalan por igual.
    """
    if eps <= 0:
        raise DomainError(f"ε debe ser positivo (se recibió {eps})")
    corrected = []
    for r in rows:
        value = _row_float(r, 'value')
        if value is None:
            continue
        root = math.sqrt(float(r['n']))
        barrier = (math.floor(eps * root + 1e-9) + 1) / root
        factor = math.exp(SMALL_BALL_EXPONENT * (1 / barrier ** 2 - 1 / eps ** 2))
        corrected.append({
            **r,
            'value': value * factor,
            'stderr': (_row_float(r, 'stderr') or 0.0) * factor,
        })
    return corrected


def cautiousness_constancy(rows: Sequence[Dict[str, Any]], eps: Optional[float] = None) -> Optional[bool]:
    """
    Monte Carlo: todas las estimaciones a menos de 3 errores estándar entre sí.
    Exacto: la probabilidad mínima es al menos la mitad de la máxima.
    Con ``eps`` se compara tras la corrección de red (``lattice_corrected``).
    """
    if eps is not None:
        rows = lattice_corrected(rows, eps)
    points = [(_row_float(r, 'value'), _row_float(r, 'stderr') or 0.0, r.get('method')) for r in rows]
    points = [p for p in points if p[0] is not None]
    if len(points) < 2:
        return None
    if all(method == 'exact' for _, _, method in points):
        values = [v for v, _, _ in points]
        return min(values) >= 0.5 * max(values)
    return all(
        abs(a - b) <= 3 * math.sqrt(sa ** 2 + sb ** 2)
        for (a, sa, _), (b, sb, _) in combinations(points, 2)
    )


class ReportService:
    """
    Servicio que resume los resultados de varias ejecuciones en la tabla de
    condiciones de pequeñez.
    """

    @staticmethod
    def build(paths: Sequence[str]) -> Dict[str, Any]:
        if not paths:
            raise DomainError("El informe necesita al menos un archivo de resultados")
        table: Dict[str, Dict[str, Any]] = {}
        for path in paths:
            data = read_result(path)
            row = table.setdefault(data['group'], _empty_row(data['group']))
            ReportService._absorb(row, data)

        rows = []
        for group in sorted(table):
            row = table[group]
            checks = [row[f"{name}_ok"] for name in CONDITIONS if row[f"{name}_ok"] is not None]
            row['verdict'] = 'pass' if checks and all(checks) else ('fail' if checks else 'n/a')
            rows.append(row)
        logger.info(f"Informe con {len(rows)} grupos a partir de {len(paths)} archivos")
        return {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'report',
            'inputs': [str(p) for p in paths],
            'rows': rows,
        }

    @staticmethod
    def _absorb(row: Dict[str, Any], data: Dict[str, Any]):
        kind = data['kind']
        if kind == 'couple':
            found = bool(data.get('success'))
            row['couples_found'] = found if row['couples_found'] is None else (row['couples_found'] and found)
            row['couples_ok'] = row['couples_found']
        elif kind == 'profile':
            fit = data.get('fit')
            if fit:
                p = float(data.get('p', fit.get('p', 2)))
                row['profile_exponent'] = fit['exponent']
                row['profile_ok'] = (not fit['violation']) and fit['exponent'] <= -p + PROFILE_EXPONENT_SLACK
        elif kind == 'walk-return':
            check = data.get('return_bound')
            if check:
                row['return_c'] = check['c']
                row['return_ok'] = not check['violation']
        elif kind == 'walk-drift':
            exponent = data.get('drift_exponent')
            if exponent is not None:
                row['drift_exponent'] = exponent
                row['drift_ok'] = exponent <= DRIFT_EXPONENT_LIMIT
        elif kind == 'walk-cautious':
            series = data.get('rows') or data.get('series', [])
            eps = data.get('eps')
            row['cautious_raw'] = cautiousness_constancy(series)
            row['cautious_ok'] = cautiousness_constancy(series, float(eps)) if eps else row['cautious_raw']
        elif kind == 'folner-scan':
            rows = data.get('rows', [])
            if rows:
                row['folner_last_ratio'] = rows[-1].get('ratio')
        else:
            logger.info(f"{data['path']}: tipo {kind!r} sin columna en el informe")

    @staticmethod
    def render_text(report: Dict[str, Any]) -> str:
        headers = ['group', 'couples', 'profile exp', 'return c', 'drift exp', 'cautious', 'cautious raw', 'verdict']
        lines = []
        for row in report['rows']:
            lines.append([
                row['group'],
                _mark(row['couples_ok'], 'found' if row['couples_found'] else 'not found'),
                _mark(row['profile_ok'], _number(row['profile_exponent'])),
                _mark(row['return_ok'], _number(row['return_c'])),
                _mark(row['drift_ok'], _number(row['drift_exponent'])),
                _mark(row['cautious_ok'], 'constant' if row['cautious_ok'] else 'varies'),
                _mark(row['cautious_raw'], 'constant' if row['cautious_raw'] else 'varies'),
                row['verdict'],
            ])
        widths = [max(len(h), *(len(line[i]) for line in lines)) if lines else len(h) for i, h in enumerate(headers)]
        out = ['  '.join(h.ljust(w) for h, w in zip(headers, widths))]
        out.append('  '.join('-' * w for w in widths))
        for line in lines:
            out.append('  '.join(cell.ljust(w) for cell, w in zip(line, widths)))
        return '\n'.join(out) + '\n'


def _empty_row(group: str) -> Dict[str, Any]:
    row = {'group': group, 'couples_found': None, 'profile_exponent': None, 'return_c': None,
           'drift_exponent': None, 'folner_last_ratio': None, 'cautious_raw': None}
    for name in CONDITIONS:
        row[f"{name}_ok"] = None
    return row


def _number(value) -> str:
    return '-' if value is None else f"{value:.3f}"


def _mark(ok: Optional[bool], text: str) -> str:
    if ok is None:
        return '-'
    return f"{'PASS' if ok else 'FAIL'} {text}"

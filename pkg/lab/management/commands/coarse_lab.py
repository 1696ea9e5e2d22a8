"""
Comando de gestión ``coarse_lab``: punto de entrada del laboratorio.

    python manage.py coarse_lab ball --group heis --radius 2
    python manage.py coarse_lab couples --group z1 --n 3 --window 40
    python manage.py coarse_lab walk --group z1 --stat return --exact --nmax 4

Códigos de salida: 0 correcto, 2 validación o dominio, 3 recursos, márgenes o
fallos numéricos.
"""

import argparse
import hashlib
import logging
from contextlib import nullcontext
from fractions import Fraction

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.test.utils import override_settings

from lab.cayley import ball, growth, growth_rate_estimate
from lab.config import RunConfig
from lab.decomposition_service import DecompositionService, canonical_margin
from lab.exceptions import CoarseLabError, DomainError
from lab.folner_service import SCAN_FAMILIES, FolnerService, pipeline_stretch
from lab.groups import CATALOGUE, FreeAbelianGroup, get_group
from lab.models import LabRun
from lab.profile_service import ProfileService
from lab.report_service import ReportService
from lab.serializers import csv_text, dumps, write_atomic
from lab.walk_service import StepDistribution, WalkReport, WalkService, geometric_grid

logger = logging.getLogger('lab.commands')

DEFAULT_TRIALS = 10_000
DEFAULT_SEED = 0
WALK_STATS = ('return', 'drift', 'cautious')


class Command(BaseCommand):
    requires_system_checks = []
    help = 'Laboratorio de geometría gruesa: bolas, particiones, parejas de Følner, perfiles y paseos'

    def add_arguments(self, parser):
        common = self._common_parser()
        sub = parser.add_subparsers(dest='subcommand', required=True)

        p = sub.add_parser('ball', parents=[common], help='Tamaños de esferas y bola B(e, R)')
        self._group_argument(p)
        p.add_argument('--radius', type=int, help='Radio R')

        p = sub.add_parser('growth', parents=[common], help='Función de crecimiento v(0..R)')
        self._group_argument(p)
        p.add_argument('--radius', type=int, help='Radio máximo')

        p = sub.add_parser('decompose', parents=[common], help='Partición r-disjunta por colores')
        self._group_argument(p)
        p.add_argument('--scale', type=int, help='Escala r (> 1)')
        p.add_argument('--method', choices=('auto', 'canonical', 'greedy'), default=None)
        p.add_argument('--radius', type=int, help='Radio de la bola ambiente')
        p.add_argument('--window', type=int, help='Radio de la ventana')
        p.add_argument('--colors', type=int, help='Presupuesto de colores (voraz)')
        p.add_argument('--stretch', help='Estiramiento K (voraz), entero o p/q')

        p = sub.add_parser('couples', parents=[common], help='Pareja de Følner controlada a escala 2n')
        self._group_argument(p)
        p.add_argument('--n', type=int, help='Anchura del collar')
        p.add_argument('--window', type=int,
                       help='Radio de la ventana (por defecto max(8n, 10), acotada por COARSE_LAB_PIPELINE_BALL)')
        p.add_argument('--colors', type=int)
        p.add_argument('--stretch')

        p = sub.add_parser('folner-scan', parents=[common], help='Cocientes de Følner de una familia')
        self._group_argument(p)
        p.add_argument('--family', choices=SCAN_FAMILIES, default=None)
        p.add_argument('--nmax', type=int)

        p = sub.add_parser('profile', parents=[common], help='Perfil l_p: autovalor de Dirichlet y cotas')
        self._group_argument(p)
        p.add_argument('--rmax', type=int)
        p.add_argument('--p', type=float, help='Exponente p en [1, 2] (por defecto 2)')
        p.add_argument('--couples', type=int, help='Añadir cotas de parejas para n = 1..N')
        p.add_argument('--lazy', type=float, help='Probabilidad de espera del paseo perezoso')

        p = sub.add_parser('walk', parents=[common], help='Estadísticos del paseo aleatorio')
        self._group_argument(p)
        p.add_argument('--stat', choices=WALK_STATS, default=None)
        p.add_argument('--exact', action='store_true', help='Motor exacto en lugar de Monte Carlo')
        p.add_argument('--n', type=int)
        p.add_argument('--nmax', type=int)
        p.add_argument('--grid', type=int, nargs='+', help='Malla explícita de tiempos')
        p.add_argument('--trials', type=int)
        p.add_argument('--eps', type=float)
        p.add_argument('--lazy', type=float)
        p.add_argument('--max-censored', dest='max_censored', type=float,
                       help='Abortar si la fracción de trayectorias censuradas supera este valor')

        p = sub.add_parser('report', parents=[common], help='Tabla de condiciones de pequeñez')
        p.add_argument('inputs', nargs='+', help='Archivos de resultados')

    @staticmethod
    def _common_parser():
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--out', help='Archivo de salida (por defecto, salida estándar)')
        common.add_argument('--format', help='csv, json o text')
        common.add_argument('--seed', type=int)
        common.add_argument('--memcap', type=int, help='Máximo de elementos por bola')
        common.add_argument('--threads', type=int)
        common.add_argument('--length-radius', dest='length_radius', type=int,
                            help='Radio de la bola-oráculo de longitudes')
        common.add_argument('--tol', type=float, help='Tolerancia de la iteración de potencias')
        common.add_argument('--config', help='Archivo JSON con parámetros')
        return common

    @staticmethod
    def _group_argument(parser):
        parser.add_argument('--group', choices=sorted(CATALOGUE), default=None)

    # ----- ejecución -----

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        config = None
        try:
            config = RunConfig.from_options(subcommand, options)
            with self._overrides(config):
                output = getattr(self, f"run_{subcommand.replace('-', '_')}")(config)
            digest = self._emit(config, output)
        except ValidationError as e:
            message = '; '.join(e.messages)
            logger.error(f"{subcommand}: parámetros no válidos: {message}")
            self._record(subcommand, config, options, 2, message)
            raise CommandError(message, returncode=2)
        except CoarseLabError as e:
            logger.error(f"{subcommand}: {type(e).__name__}: {e}")
            self._record(subcommand, config, options, e.exit_code, str(e))
            raise CommandError(str(e), returncode=e.exit_code)
        self._record(subcommand, config, options, 0, '', digest)

    @staticmethod
    def _overrides(config: RunConfig):
        values = {}
        if config.memcap is not None:
            values['COARSE_LAB_MEMCAP'] = config.memcap
        if config.threads is not None:
            values['COARSE_LAB_THREADS'] = config.threads
        if config.length_radius is not None:
            values['COARSE_LAB_LENGTH_RADIUS'] = config.length_radius
        if config.tol is not None:
            values['COARSE_LAB_EIGEN_TOL'] = config.tol
        if config.max_censored is not None:
            values['COARSE_LAB_MAX_CENSORED_FRACTION'] = config.max_censored
        return override_settings(**values) if values else nullcontext()

    def _emit(self, config: RunConfig, text: str) -> str:
        if config.out:
            digest = write_atomic(config.out, text)
            logger.info(f"{config.subcommand}: resultado escrito en {config.out} (sha256 {digest[:12]})")
            return digest
        self.stdout.write(text, ending='')
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    @staticmethod
    def _record(subcommand, config, options, exit_code, message, digest=''):
        if not settings.COARSE_LAB_RECORD_RUNS:
            return
        try:
            LabRun.objects.create(
                subcommand=subcommand,
                group=(config.group if config else options.get('group')) or '',
                parameters=config.parameters() if config else {},
                seed=config.seed if config else None,
                output_path=(config.out if config else None) or '',
                output_sha256=digest,
                exit_code=exit_code,
                message=message[:2000],
            )
        except DatabaseError as e:
            logger.warning(f"No se pudo registrar la ejecución de {subcommand}: {e}")

    @staticmethod
    def _format(config: RunConfig, default: str, allowed=('csv', 'json')) -> str:
        fmt = config.format or default
        if fmt not in allowed:
            raise ValidationError(
                {'format': [f"El subcomando {config.subcommand} admite {', '.join(allowed)} (se pidió {fmt})"]}
            )
        return fmt

    # ----- subcomandos -----

    def run_ball(self, config: RunConfig) -> str:
        config.require('group', 'radius')
        self._format(config, 'json', ('json',))
        B = ball(get_group(config.group), config.radius)
        return dumps({
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'ball',
            'group': config.group,
            'radius': config.radius,
            'size': B.size,
            'sizes': B.sphere_sizes(),
        })

    def run_growth(self, config: RunConfig) -> str:
        config.require('group', 'radius')
        series = growth(get_group(config.group), config.radius)
        estimate = growth_rate_estimate(series)
        if self._format(config, 'csv') == 'json':
            return dumps({
                'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
                'kind': 'growth',
                'group': config.group,
                'series': series,
                'growth_rate': estimate,
            })
        return csv_text('growth', config.group, ('r', 'v'), enumerate(series), {'growth_rate': estimate})

    def run_decompose(self, config: RunConfig) -> str:
        config.require('group', 'scale')
        self._format(config, 'json', ('json',))
        g = get_group(config.group)
        method = config.method or 'auto'
        if method == 'auto':
            method = 'canonical' if isinstance(g, FreeAbelianGroup) else 'greedy'

        if method == 'canonical':
            if not isinstance(g, FreeAbelianGroup):
                raise DomainError(f"La partición canónica solo existe para Z^d (no {g.name})")
            window = config.window
            if window is None:
                config.require('radius')
                window = config.radius - canonical_margin(g.d, config.scale)
            partition = DecompositionService.canonical_decomposition_zd(
                g.d, config.scale, window, check=False, ambient_radius=config.radius,
            )
            report = DecompositionService.verify_decomposition(partition)
            return dumps({**partition.to_dict(), 'success': report['valid'], 'report': report})

        config.require('radius')
        K = Fraction(config.stretch) if config.stretch is not None else pipeline_stretch(g)
        colors = config.colors if config.colors is not None else 2 ** (g.dimension_hint or 1)
        result = DecompositionService.greedy_decomposition(
            ball(g, config.radius), config.scale, colors, K,
            seed=config.seed, window_radius=config.window,
        )
        if result['success']:
            return dumps({**result['partition'].to_dict(), 'success': True, 'report': result['report']})
        return dumps({
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'partition',
            **result,
            'group': g.name,
        })

    def run_couples(self, config: RunConfig) -> str:
        config.require('group', 'n')
        self._format(config, 'json', ('json',))
        g = get_group(config.group)
        result = FolnerService.couple_pipeline(
            g, config.n, config.window, colors=config.colors,
            stretch=Fraction(config.stretch) if config.stretch is not None else None,
            seed=config.seed,
        )
        return dumps(self._couple_payload(g.name, config.n, result))

    @staticmethod
    def _couple_payload(group: str, n: int, result) -> dict:
        payload = {
            'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
            'kind': 'couple',
            'group': group,
            'n': n,
            'window_radius': result['window_radius'],
            'success': result['success'],
        }
        if result['success']:
            payload.update(result['couple'].to_dict())
            payload['report'] = result['report']
        else:
            payload.update({k: v for k, v in result.items() if k not in ('partition', 'success')})
            payload['kind'] = 'couple'
        return payload

    def run_folner_scan(self, config: RunConfig) -> str:
        config.require('group', 'nmax')
        family = config.family or 'balls'
        rows = FolnerService.folner_scan(get_group(config.group), family, config.nmax)
        estimate = FolnerService.folner_function_estimate(rows)
        if self._format(config, 'csv') == 'json':
            return dumps({
                'schema_version': settings.COARSE_LAB_SCHEMA_VERSION,
                'kind': 'folner-scan',
                'group': config.group,
                'family': family,
                'rows': rows,
                'folner_function': estimate,
            })
        return csv_text(
            'folner-scan', config.group, ('n', 'size', 'boundary', 'ratio'),
            ((row['n'], row['size'], row['boundary'], row['ratio']) for row in rows),
            {'family': family, 'folner_function': estimate},
        )

    def run_profile(self, config: RunConfig) -> str:
        config.require('group', 'rmax')
        g = get_group(config.group)
        p = config.p if config.p is not None else 2
        mu = StepDistribution.lazy(g, config.lazy) if config.lazy else StepDistribution.uniform(g)

        couples = []
        for n in range(1, (config.couples or 0) + 1):
            result = FolnerService.couple_pipeline(g, n, seed=config.seed)
            if result['success']:
                couples.append(result['couple'])
            else:
                logger.warning(f"Sin pareja para n={n} en {g.name}: {result.get('error')}")

        report = ProfileService.profile_report(g, config.rmax, p=p, mu=mu, couples=couples)
        if self._format(config, 'csv') == 'json':
            return dumps({**report.to_dict(), 'sandwich_ok': report.sandwich_ok()})
        return csv_text(
            'profile', g.name, ('r', 'lambda', 'method', 'residual'), report.rows(),
            {'p': p, 'fit': report.fit, 'sandwich_ok': report.sandwich_ok(), 'measure': mu.describe()},
        )

    def run_walk(self, config: RunConfig) -> str:
        config.require('group', 'stat')
        g = get_group(config.group)
        mu = StepDistribution.lazy(g, config.lazy) if config.lazy else StepDistribution.uniform(g)
        report = self._walk_report(config, mu)

        meta = {'measure': mu.describe(), 'rng': report.rng, 'trials': report.trials}
        if config.stat == 'return':
            try:
                meta['return_bound'] = WalkService.return_bound_check(report.values() if config.exact
                                                                      else _dense(report))
            except DomainError as e:
                logger.info(f"Sin comprobación de la cota de retorno: {e}")
        if config.stat == 'drift':
            try:
                meta['drift_exponent'] = WalkService.drift_exponent(
                    [(row['n'], row['value']) for row in report.series]
                )
            except DomainError as e:
                logger.info(f"Sin exponente de deriva: {e}")
        if config.stat == 'cautious':
            meta['eps'] = config.eps
        report.extra.update({k: v for k, v in meta.items() if k not in ('rng', 'trials')})

        if self._format(config, 'csv') == 'json':
            return dumps(report.to_dict())
        return csv_text(
            f"walk-{config.stat}", g.name, ('n', 'value', 'stderr', 'method', 'seed', 'censored'),
            report.rows(), meta,
        )

    @staticmethod
    def _walk_times(config: RunConfig):
        if config.grid:
            return sorted(set(config.grid))
        if config.n is not None:
            return [config.n]
        config.require('nmax')
        grid = geometric_grid(config.nmax)
        return grid if len(grid) >= 2 else list(range(1, config.nmax + 1))

    def _walk_report(self, config: RunConfig, mu: StepDistribution):
        if config.stat == 'cautious':
            config.require('eps')

        if config.exact:
            if config.stat == 'return':
                config.require('nmax')
                return WalkService.return_probability_exact(mu, config.nmax)
            ns = self._walk_times(config)
            if config.stat == 'drift':
                values = [(n, WalkService.drift_exact(mu, n)) for n in ns]
            else:
                values = [(n, WalkService.cautiousness_exact(mu, n, config.eps)) for n in ns]
            series = tuple({'n': n, 'value': v, 'stderr': 0.0, 'method': 'exact', 'exact': True}
                           for n, v in values)
            return WalkReport(group=mu.group.name, kind=config.stat, series=series)

        trials = config.trials or DEFAULT_TRIALS
        seed = config.seed if config.seed is not None else DEFAULT_SEED
        if config.stat == 'return':
            if not config.grid:
                config.require('nmax')
            ns = config.grid or list(range(1, config.nmax + 1))
            return WalkService.return_probability_estimate(mu, ns, trials, seed)
        ns = self._walk_times(config)
        if config.stat == 'drift':
            return WalkService.drift_series(mu, ns, trials, seed)
        return WalkService.cautiousness_series(mu, ns, config.eps, trials, seed)

    def run_report(self, config: RunConfig) -> str:
        config.require('inputs')
        report = ReportService.build(config.inputs)
        if self._format(config, 'text', ('text', 'json')) == 'json':
            return dumps(report)
        return ReportService.render_text(report)


def _dense(report) -> list:
    """Serie p_0..p_nmax a partir de filas Monte Carlo (p_0 = 1, huecos a 0)."""
    values = {row['n']: row['value'] for row in report.series}
    nmax = max(values)
    return [1.0] + [values.get(n, 0.0) for n in range(1, nmax + 1)]

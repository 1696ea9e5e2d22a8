"""
Configuración validada de una ejecución del comando ``coarse_lab``.

Los parámetros llegan de la línea de comandos y, opcionalmente, de un
archivo JSON (``--config``); los de la línea de comandos tienen prioridad.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

from django.core.exceptions import ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator

SUBCOMMANDS = ('ball', 'growth', 'decompose', 'couples', 'folner-scan', 'profile', 'walk', 'report')

FORMATS = ('csv', 'json', 'text')


def validate_positive(value):
    if value <= 0:
        raise ValidationError('El valor debe ser positivo (se recibió %(value)s).', params={'value': value})


def validate_fraction(value):
    if not 0 <= value <= 1:
        raise ValidationError('La fracción debe estar en [0, 1] (se recibió %(value)s).', params={'value': value})


def validate_holding(value):
    if not 0 < value < 1:
        raise ValidationError('La probabilidad de espera debe estar en (0, 1).')


FIELD_VALIDATORS = {
    'radius': [MinValueValidator(0)],
    'rmax': [MinValueValidator(0)],
    'scale': [MinValueValidator(2, message='La escala debe ser mayor que 1.')],
    'colors': [MinValueValidator(1)],
    'stretch': [MinValueValidator(1)],
    'n': [MinValueValidator(1)],
    'nmax': [MinValueValidator(0)],
    'window': [MinValueValidator(0)],
    'trials': [MinValueValidator(1)],
    'tol': [validate_positive],
    'seed': [MinValueValidator(0)],
    'eps': [validate_positive],
    'p': [MinValueValidator(1), MaxValueValidator(2)],
    'couples': [MinValueValidator(0)],
    'memcap': [MinValueValidator(1)],
    'threads': [MinValueValidator(1)],
    'length_radius': [MinValueValidator(1)],
    'lazy': [validate_holding],
    'max_censored': [validate_fraction],
}


@dataclass
class RunConfig:
    """Parámetros de una ejecución; ``None`` significa «valor por defecto»."""

    subcommand: str
    group: Optional[str] = None
    radius: Optional[int] = None
    rmax: Optional[int] = None
    scale: Optional[int] = None
    colors: Optional[int] = None
    stretch: Optional[str] = None
    method: Optional[str] = None
    n: Optional[int] = None
    nmax: Optional[int] = None
    window: Optional[int] = None
    family: Optional[str] = None
    stat: Optional[str] = None
    exact: bool = False
    grid: Optional[List[int]] = None
    trials: Optional[int] = None
    eps: Optional[float] = None
    lazy: Optional[float] = None
    p: Optional[float] = None
    couples: Optional[int] = None
    tol: Optional[float] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    format: Optional[str] = None
    memcap: Optional[int] = None
    threads: Optional[int] = None
    length_radius: Optional[int] = None
    max_censored: Optional[float] = None
    inputs: List[str] = field(default_factory=list)

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_options(cls, subcommand: str, options: Dict[str, Any]) -> 'RunConfig':
        """
        Combina el archivo ``options['config']`` (si existe) con las opciones
        explícitas y valida el resultado.

        Raises:
            ValidationError: claves desconocidas o valores fuera de rango
        """
        values: Dict[str, Any] = {}
        if options.get('config'):
            values.update(cls._read_file(options['config']))
        known = set(cls.keys())
        for key, value in options.items():
            if key in known and value is not None and value is not False and value != []:
                values[key] = value
        values['subcommand'] = subcommand
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def _read_file(cls, path) -> Dict[str, Any]:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"No se pudo leer la configuración {path}: {e}")
        if not isinstance(data, dict):
            raise ValidationError(f"La configuración {path} debe ser un objeto JSON")
        unknown = sorted(set(data) - set(cls.keys()) - {'subcommand'})
        if unknown:
            raise ValidationError(f"Claves desconocidas en {path}: {', '.join(unknown)}")
        data.pop('subcommand', None)
        return data

    def validate(self):
        errors: Dict[str, List[str]] = {}
        if self.subcommand not in SUBCOMMANDS:
            errors['subcommand'] = [f"Subcomando desconocido {self.subcommand!r}"]
        if self.format is not None and self.format not in FORMATS:
            errors['format'] = [f"Formato desconocido {self.format!r}"]
        for name, validators in FIELD_VALIDATORS.items():
            value = getattr(self, name)
            if value is None:
                continue
            if name == 'stretch':
                value = _as_number(value, errors, name)
                if value is None:
                    continue
            for validator in validators:
                try:
                    validator(value)
                except ValidationError as e:
                    errors.setdefault(name, []).extend(e.messages)
        if errors:
            raise ValidationError(errors)

    def require(self, *names: str):
        """Exige que los parámetros indicados tengan valor."""
        missing = [name for name in names if getattr(self, name) in (None, [])]
        if missing:
            raise ValidationError(
                {name: [f"El subcomando {self.subcommand} necesita --{name.replace('_', '-')}"] for name in missing}
            )

    def parameters(self) -> Dict[str, Any]:
        """Parámetros con valor, para el registro de ejecuciones."""
        return {
            key: value for key, value in asdict(self).items()
            if value is not None and value is not False and value != []
        }


def _as_number(value, errors, name):
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        errors.setdefault(name, []).append(f"{value!r} no es un racional válido")
        return None

"""
Lectura y escritura de resultados.

JSON para objetos estructurados (particiones, parejas, informes) y CSV para
series. Ambos llevan ``schema_version``; en CSV va en comentarios de cabecera
junto con el tipo de resultado y el grupo. La escritura es atómica: archivo
temporal en el mismo directorio y ``os.replace``.
"""

import csv
import hashlib
import io
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

import numpy as np
from django.conf import settings
from django.core.serializers.json import DjangoJSONEncoder

from .exceptions import DomainError


class LabJSONEncoder(DjangoJSONEncoder):
    """Añade Fraction (como "p/q" o entero) y escalares/arrays de numpy."""

    def default(self, o):
        if isinstance(o, Fraction):
            return o.numerator if o.denominator == 1 else f"{o.numerator}/{o.denominator}"
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (set, frozenset)):
            return sorted(o)
        return super().default(o)


def dumps(data: Dict[str, Any]) -> str:
    return json.dumps(data, cls=LabJSONEncoder, sort_keys=True, indent=2) + '\n'


def csv_text(kind: str, group: str, columns: Sequence[str], rows: Iterable[Sequence],
             meta: Dict[str, Any] = None) -> str:
    buffer = io.StringIO()
    buffer.write(f"# schema_version: {settings.COARSE_LAB_SCHEMA_VERSION}\n")
    buffer.write(f"# kind: {kind}\n")
    buffer.write(f"# group: {group}\n")
    for key, value in sorted((meta or {}).items()):
        buffer.write(f"# {key}: {json.dumps(value, cls=LabJSONEncoder, sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow(['' if value is None else _cell(value) for value in row])
    return buffer.getvalue()


def _cell(value):
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else value.numerator
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_atomic(path, text: str) -> str:
    """
    Escribe ``text`` en ``path`` sin dejar archivos a medias.

    Returns:
        str: SHA-256 del contenido escrito
    """
    path = Path(path)
    directory = path.parent if str(path.parent) else Path('.')
    directory.mkdir(parents=True, exist_ok=True)
    data = text.encode('utf-8')
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def read_result(path) -> Dict[str, Any]:
    """
    Lee un resultado JSON o CSV del laboratorio.

    Para CSV devuelve los metadatos de cabecera más 'columns' y 'rows'
    (valores como texto).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise DomainError(f"No se puede leer {path}: {e}")
    if path.suffix == '.json' or text.lstrip().startswith('{'):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise DomainError(f"{path} no es JSON válido: {e}")
    else:
        data = _parse_csv(text, path)
    if data.get('schema_version') != settings.COARSE_LAB_SCHEMA_VERSION:
        raise DomainError(
            f"{path}: versión de esquema {data.get('schema_version')!r}, "
            f"se esperaba {settings.COARSE_LAB_SCHEMA_VERSION}"
        )
    if 'kind' not in data or 'group' not in data:
        raise DomainError(f"{path}: faltan los campos 'kind' y 'group'")
    data['path'] = str(path)
    return data


def _parse_csv(text: str, path: Path) -> Dict[str, Any]:
    meta: Dict[str, Any] = {}
    body = []
    for line in text.splitlines():
        if line.startswith('#'):
            key, _, value = line[1:].partition(':')
            key, value = key.strip(), value.strip()
            if key in ('kind', 'group'):
                meta[key] = value
            else:
                try:
                    meta[key] = json.loads(value)
                except json.JSONDecodeError:
                    meta[key] = value
        elif line:
            body.append(line)
    if not body:
        raise DomainError(f"{path}: el CSV no tiene cabecera de columnas")
    reader = csv.reader(body)
    columns = next(reader)
    meta['columns'] = columns
    meta['rows'] = [dict(zip(columns, row)) for row in reader]
    return meta

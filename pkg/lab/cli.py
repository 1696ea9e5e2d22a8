"""
Entrada programática al comando ``coarse_lab`` con su código de salida.
"""

from typing import Sequence

from django.core.management import ManagementUtility


def run(argv: Sequence[str]) -> int:
    """
    Ejecuta ``coarse_lab`` como desde la línea de comandos y devuelve el
    código de salida (0, 2 o 3) en lugar de terminar el proceso.
    """
    utility = ManagementUtility(['manage.py', 'coarse_lab', *argv])
    try:
        utility.execute()
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 1)
    return 0

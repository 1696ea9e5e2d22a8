"""
Errores del laboratorio.

Cada error lleva el código de salida que usa el comando ``coarse_lab``:
2 para validación/dominio y 3 para recursos, márgenes y fallos numéricos.
"""


class CoarseLabError(Exception):
    exit_code = 2


class InvalidElementError(CoarseLabError):
    """Forma normal mal construida para el grupo indicado."""


class ElementOverflowError(InvalidElementError):
    """Numerador diádico fuera del rango de 63 bits."""


class DomainError(CoarseLabError):
    """Argumentos fuera del dominio de la operación."""


class MarginError(CoarseLabError):
    """
    La bola ambiente no deja margen suficiente para certificar una distancia.
    Nunca se trata el borde de la bola como borde del grupo.
    """
    exit_code = 3

    def __init__(self, message: str, required: int = None, available: int = None):
        super().__init__(message)
        self.required = required
        self.available = available


class ResourceLimitError(CoarseLabError):
    """
    Se superó un límite de recursos. En las bolas, ``complete_radius`` es el
    mayor radio cuya bola cabía en el límite.
    """
    exit_code = 3

    def __init__(self, message: str, cap: int = None, complete_radius: int = None):
        super().__init__(message)
        self.cap = cap
        self.complete_radius = complete_radius


class NumericalError(CoarseLabError):
    exit_code = 3

    def __init__(self, message: str, residual: float = None):
        super().__init__(message)
        self.residual = residual

from django.db import models
from django.core.validators import MinValueValidator, MaxValueValidator


class LabRun(models.Model):
    """
    Registro de una ejecución del comando ``coarse_lab``.
    Guarda los parámetros y la huella del archivo producido para poder
    reproducir y comparar resultados.
    """
    EXIT_CODE_CHOICES = [
        (0, 'Correcto'),
        (2, 'Error de validación'),
        (3, 'Error de recursos o margen'),
    ]

    subcommand = models.CharField(max_length=30, verbose_name="Subcomando")
    group = models.CharField(max_length=10, blank=True, verbose_name="Grupo")

    # Parámetros efectivos tras validar (RunConfig)
    parameters = models.JSONField(default=dict, verbose_name="Parámetros")

    seed = models.BigIntegerField(
        null=True,
        blank=True,
        validators=[MinValueValidator(0)],
        verbose_name="Semilla"
    )

    output_path = models.CharField(max_length=500, blank=True, verbose_name="Archivo de Salida")

    # SHA-256 del contenido escrito (vacío si no hubo salida)
    output_sha256 = models.CharField(max_length=64, blank=True, verbose_name="SHA-256")

    exit_code = models.IntegerField(
        choices=EXIT_CODE_CHOICES,
        default=0,
        validators=[MinValueValidator(0), MaxValueValidator(3)],
        verbose_name="Código de Salida"
    )
    message = models.TextField(blank=True, verbose_name="Mensaje")

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        verbose_name = "Ejecución"
        verbose_name_plural = "Ejecuciones"
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.subcommand} {self.group} -> {self.exit_code}"

    def succeeded(self):
        """Verifica si la ejecución terminó sin errores"""
        return self.exit_code == 0

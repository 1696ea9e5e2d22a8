"""
Django settings for coarse_lab_project project.

Generated by 'django-admin startproject' using Django 6.0.

For more information on this file, see
https://docs.djangoproject.com/en/6.0/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-coarse-lab-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition
# El laboratorio no expone vistas: solo comandos de gestión y el registro de ejecuciones.

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'lab',
]


# Database
# https://docs.djangoproject.com/en/6.0/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('COARSE_LAB_DB', default=str(BASE_DIR / 'db.sqlite3')),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization
# https://docs.djangoproject.com/en/6.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/6.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'lab': {
            'handlers': ['console'],
            'level': config('COARSE_LAB_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}


# Configuración del laboratorio (sobrescribible desde el entorno o un archivo .env)

# Máximo de elementos que puede tener una bola de Cayley
COARSE_LAB_MEMCAP = config('COARSE_LAB_MEMCAP', default=20_000_000, cast=int)

# Radio de la bola usada como oráculo de longitud de palabra en los paseos
COARSE_LAB_LENGTH_RADIUS = config('COARSE_LAB_LENGTH_RADIUS', default=40, cast=int)

# Iteración de potencias para el perfil l_2
COARSE_LAB_EIGEN_TOL = config('COARSE_LAB_EIGEN_TOL', default=1e-10, cast=float)
COARSE_LAB_EIGEN_MAX_ITER = config('COARSE_LAB_EIGEN_MAX_ITER', default=1_000_000, cast=int)

# Trabajadores y tamaño de bloque para Monte Carlo y escaneos
COARSE_LAB_THREADS = config('COARSE_LAB_THREADS', default=1, cast=int)
COARSE_LAB_TRIAL_BLOCK = config('COARSE_LAB_TRIAL_BLOCK', default=4096, cast=int)

# Fracción máxima de trayectorias censuradas antes de abortar una estimación.
# Vacío: no se aborta y cada fila del resultado lleva su recuento ``censored``.
COARSE_LAB_MAX_CENSORED_FRACTION = config(
    'COARSE_LAB_MAX_CENSORED_FRACTION', default='', cast=lambda v: float(v) if v not in (None, '') else None
)

# Tamaño máximo de la bola ambiente que elige por defecto la tubería de parejas
COARSE_LAB_PIPELINE_BALL = config('COARSE_LAB_PIPELINE_BALL', default=400_000, cast=int)

# Tope de colores al reintentar la descomposición voraz con el doble de colores
COARSE_LAB_MAX_COLORS = config('COARSE_LAB_MAX_COLORS', default=32, cast=int)

# Registrar cada ejecución del comando en la base de datos
COARSE_LAB_RECORD_RUNS = config('COARSE_LAB_RECORD_RUNS', default=True, cast=bool)

COARSE_LAB_SCHEMA_VERSION = 1

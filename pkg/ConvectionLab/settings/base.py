"""
Django settings for the ConvectionLab project.

The project hosts a single app, ot_convection, whose numerical modules are driven through manage.py commands
(run, validate, compare, configdocs). There are no views; the database only holds the run registry.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get("CONVECTIONLAB_SECRET_KEY", "django-insecure-convectionlab-local-only")


ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "ot_convection.apps.OtConvectionConfig",
]

MIDDLEWARE = []


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/4.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Solver and experiment settings

OT_CONVECTION = {
    "SWEEP_MAX_WORKERS": int(os.environ.get("OT_CONVECTION_WORKERS", "2")),
    "DEFAULT_OUTPUT_ROOT": BASE_DIR / "runs",
    "HUNGARIAN_MAX_ATOMS": 512,
    "CG_MAX_ITERATIONS": 5000,
    "CG_TOLERANCE": 1e-12,
}


# Logging
# https://docs.djangoproject.com/en/4.2/topics/logging/

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "ot_convection": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
    },
}

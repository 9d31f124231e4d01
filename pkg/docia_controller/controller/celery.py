"""Celery setttings."""

import logging.config
import os
from pathlib import Path
from typing import Any

import dotenv
from celery import Celery
from celery.signals import setup_logging
from django_structlog.celery.steps import DjangoStructLogInitStep

dotenv.load_dotenv(Path(__file__).parent.parent / ".env")

_var = "DJANGO_SETTINGS_MODULE"
if os.getenv(_var, ""):
    module = os.getenv(_var) or ""
    os.environ[_var] = module
else:
    error = f"The environment variable {_var} does not exist."
    raise RuntimeError(error)

app = Celery("controller")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.steps["worker"].add(DjangoStructLogInitStep)
app.autodiscover_tasks()


@setup_logging.connect
def receiver_setup_logging(*args: Any, **kwargs: Any) -> None:
    """Make workers log like the management commands."""
    # importing here to avoid circular imports
    from django.conf import settings

    logging.config.dictConfig(settings.LOGGING)

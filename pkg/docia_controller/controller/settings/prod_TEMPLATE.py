"""Template for settings used in a production environment.

Create a copy of this file and name it "prod.py".

Fill in the missing values.
A short description is given below each field.

Documentation:
https://docs.djangoproject.com/en/3.2/ref/settings/
"""

from django.core.exceptions import ImproperlyConfigured

from .base import *

##########################################################################

DOCIA_BACKEND_DEFAULTS = {
    "endpoint_url": "",
    "model_name": "",
    "credentials_env_var": "DOCIA_API_KEY",
    "timeout": 60.0,
    "max_retries": 5,
    "concurrency_limit": 4,
}
"""Chat-completion backend.

The API key is read from the environment variable named by
``credentials_env_var``; it is never written to settings files.
"""

##########################################################################

DOCIA_PIPELINE_DEFAULTS = {
    # "L": 6,
    # "m": 3,
    # "n": 3,
    # "lambda": 0.7,
}
"""Defaults of the pipeline configuration (config files and flags
override them)."""

##########################################################################

DOCIA_ENABLE_QUEUE = True
"""Whether documents are distributed to Celery workers."""

_celery_host = "127.0.0.1"
_celery_port = 6379
"""Redis server used as Celery broker and result backend."""

##########################################################################

DOCIA_PROMPT_DIR = None
"""Directory with prompt templates that replace the built-in ones
(``asr_refine.txt``, ``translate.txt``, ``translate_refine.txt``)."""

##########################################################################
# IT IS NOT NECESSARY TO EDIT THE CONTENTS BELOW
##########################################################################


DEBUG = False

CELERY_BROKER_URL = f"redis://{_celery_host}:{_celery_port}"
CELERY_RESULT_BACKEND = f"redis://{_celery_host}:{_celery_port}"

if not DOCIA_BACKEND_DEFAULTS.get("endpoint_url"):
    error = "DOCIA_BACKEND_DEFAULTS has no endpoint_url"
    raise ImproperlyConfigured(error)

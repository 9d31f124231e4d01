"""Settings for development environment."""

# DO NOT EDIT THIS FILE TO CHANGE LOCAL SETTINGS.
# OVERRIDE ANY VALUES ON dev.py INSTEAD
# (use dev_TEMPLATE.py as a starting point).


from .base import *

DEBUG = True

SECRET_KEY = (
    SECRET_KEY or "django-insecure-r7^k2m#x0v!q9d$c@5w8e-j3z&n6t_b1y*h4u%p+s=ga(f)l"
)

DOCIA_BACKEND_DEFAULTS = {
    "endpoint_url": "http://localhost:8080/v1",
    "model_name": "local-model",
}

LOGGING["loggers"]["docia_controller"]["level"] = "DEBUG"

"""Settings used in a test environment."""

from .dev_base import *

DOCIA_ENABLE_QUEUE = False

# tasks run in the calling process when a test enables the queue
CELERY_TASK_ALWAYS_EAGER = True
CELERY_TASK_EAGER_PROPAGATES = True

LOGGING["loggers"]["docia_controller"]["handlers"] = ["flat_line_file", "json_file"]

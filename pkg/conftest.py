"""Pytest wiring: mirror ``manage.py test`` (run from docia_controller/)."""

import os
import sys
from pathlib import Path

import django

sys.path.insert(0, str(Path(__file__).resolve().parent / "docia_controller"))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "controller.settings._tests")
django.setup()

"""Configure Django before pytest collects the ``pairs`` test modules."""

import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "pairs_engine.settings")
django.setup()

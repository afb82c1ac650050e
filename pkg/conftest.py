"""Configure Django so the SimpleTestCase suites run under pytest."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'finegrain.settings')
django.setup()

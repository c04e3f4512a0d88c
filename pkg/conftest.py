import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'arena_platform.settings')
django.setup()

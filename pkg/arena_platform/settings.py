"""
Django settings for the arena_platform project.

The project has no web surface: Django provides configuration, caching,
template rendering and the management-command CLI for the ``arena`` app.
Game and provider tunables with their defaults live in ``arena/conf.py``;
anything set here overrides them.
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

SECRET_KEY = os.environ.get('ARENA_SECRET_KEY', 'arena-local-development-key')

DEBUG = os.environ.get('ARENA_DEBUG', '') in ('1', 'true', 'yes')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'arena.apps.ArenaConfig',
]

# Transcripts and completion logs are plain files in the run directory.
DATABASES = {}

TEMPLATES = [
    {
        # Prompt templates: plain text, never HTML-escaped.
        'NAME': 'prompts',
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [os.path.join(BASE_DIR, 'arena', 'prompts')],
        'APP_DIRS': False,
        'OPTIONS': {
            'autoescape': False,
        },
    },
]


# Caches
# The "completions" alias is the on-disk response cache of the model providers.

ARENA_CACHE_DIR = os.environ.get('ARENA_CACHE_DIR', os.path.join(BASE_DIR, '.arena-cache'))

CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
    },
    'completions': {
        'BACKEND': 'django.core.cache.backends.filebased.FileBasedCache',
        'LOCATION': ARENA_CACHE_DIR,
        'TIMEOUT': None,
        'OPTIONS': {
            'MAX_ENTRIES': 1000000,
        },
    },
}


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name} {message}',
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
        'arena': {
            'handlers': ['console'],
            'level': os.environ.get('ARENA_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Arena

ARENA_API_KEY = os.environ.get('ARENA_API_KEY', '')
ARENA_RUN_DIR = os.environ.get('ARENA_RUN_DIR', os.path.join(BASE_DIR, 'runs'))
ARENA_GOLDENS_DIR = os.path.join(BASE_DIR, 'arena', 'goldens')

"""
Django settings for the pairs_engine project.

The project has no web surface: Django provides configuration, management
commands and the test runner for the ``pairs`` app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-placeholder')

DEBUG = str(os.environ.get("DEBUG")) == "1"


# Application definition

INSTALLED_APPS = [
    'pairs.apps.PairsConfig',
]

# Nothing is persisted through the ORM; indexes and reports live on disk.
DATABASES = {}

TIME_ZONE = 'UTC'
USE_TZ = True


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'pairs': {
            'handlers': ['console'],
            'level': os.getenv('PAIRS_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}


# Pipeline defaults. A JSON config file and command-line flags override these.

PAIRS_MODE = os.getenv('PAIRS_MODE', 'pairs')
PAIRS_N = int(os.getenv('PAIRS_N', '5'))
PAIRS_K = int(os.getenv('PAIRS_K', '3'))
PAIRS_SCORER = os.getenv('PAIRS_SCORER', 'ais')
PAIRS_AGREEMENT = os.getenv('PAIRS_AGREEMENT', 'normalized_exact')
PAIRS_AGREEMENT_THRESHOLD = float(os.getenv('PAIRS_AGREEMENT_THRESHOLD', '1.0'))
PAIRS_EXCLUDE_NUM = str(os.getenv('PAIRS_EXCLUDE_NUM')) == "1"
PAIRS_PARALLELISM = int(os.getenv('PAIRS_PARALLELISM', '8'))
PAIRS_TEMPLATE_DIR = Path(os.getenv('PAIRS_TEMPLATE_DIR', BASE_DIR / 'pairs' / 'templates' / 'pairs'))

# Fitted on sampled (theta0, alpha) pairs; see the fit_alpha command.
PAIRS_ALPHA_SLOPE = float(os.getenv('PAIRS_ALPHA_SLOPE', '0.058'))
PAIRS_ALPHA_INTERCEPT = float(os.getenv('PAIRS_ALPHA_INTERCEPT', '0.455'))


# Providers

PAIRS_PROVIDER_BASE_URL = os.getenv('PAIRS_PROVIDER_BASE_URL', 'http://127.0.0.1:8080')
PAIRS_API_KEY_ENV = os.getenv('PAIRS_API_KEY_ENV', 'PAIRS_API_KEY')
PAIRS_EMBEDDING_MODEL = os.getenv('PAIRS_EMBEDDING_MODEL', 'bge-large-en-v1.5')
PAIRS_EMBEDDING_DIMENSION = int(os.getenv('PAIRS_EMBEDDING_DIMENSION', '1024'))
PAIRS_GENERATION_MODEL = os.getenv('PAIRS_GENERATION_MODEL', 'qwen2.5-7b-instruct')
PAIRS_RERANK_MODEL = os.getenv('PAIRS_RERANK_MODEL', 'bge-reranker-base')
PAIRS_HTTP_TIMEOUT = float(os.getenv('PAIRS_HTTP_TIMEOUT', '60'))
PAIRS_HTTP_MAX_IN_FLIGHT = int(os.getenv('PAIRS_HTTP_MAX_IN_FLIGHT', '8'))
PAIRS_HTTP_RETRIES = int(os.getenv('PAIRS_HTTP_RETRIES', '3'))
PAIRS_HTTP_BACKOFF = float(os.getenv('PAIRS_HTTP_BACKOFF', '0.5'))
PAIRS_EMBED_BATCH_SIZE = int(os.getenv('PAIRS_EMBED_BATCH_SIZE', '32'))

GEMINI_API_KEY = os.getenv('GEMINI_API_KEY', '')

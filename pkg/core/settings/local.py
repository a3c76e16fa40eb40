"""
Local development settings for gpreach project.
"""

from .base import *

# Debug
DEBUG = True

# Celery Configuration
CELERY_TASK_ALWAYS_EAGER = True  # Execute tasks synchronously in development
CELERY_TASK_EAGER_PROPAGATES = True

LOGGING['loggers']['apps']['level'] = 'DEBUG'

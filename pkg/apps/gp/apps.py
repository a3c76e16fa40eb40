from django.apps import AppConfig


class GpConfig(AppConfig):
    name = 'apps.gp'
    verbose_name = 'Gaussian-process regression'

from django.apps import AppConfig


class SimAppConfig(AppConfig):
    name = 'apps.sim'
    verbose_name = 'Closed-loop simulation'

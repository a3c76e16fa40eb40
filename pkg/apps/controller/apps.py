from django.apps import AppConfig


class ControllerConfig(AppConfig):
    name = 'apps.controller'
    verbose_name = 'Reachability control law'

from django.apps import AppConfig


class PipelineConfig(AppConfig):
    name = 'apps.pipeline'
    verbose_name = 'Learn, calibrate, synthesize and simulate pipeline'

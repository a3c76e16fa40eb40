"""
Shared flags and error mapping for the pipeline commands.
"""

import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from apps.common.exceptions import GPReachError
from apps.pipeline.config import RunConfig
from apps.pipeline.services import PipelineService


class PipelineCommand(BaseCommand):
    """Base for commands that load a RunConfig and drive a PipelineService."""

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            default=None,
            help='Run configuration INI file (case-study defaults when omitted)'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Seed for dataset collection and Monte-Carlo sampling'
        )
        parser.add_argument(
            '--out',
            type=str,
            default=None,
            help='Run directory for artifacts'
        )
        parser.add_argument(
            '--trials',
            type=int,
            default=None,
            help='Monte-Carlo trials'
        )
        parser.add_argument(
            '--grid',
            type=int,
            default=None,
            help='Start states per dimension over the start box (0 uses [sim] x0)'
        )
        parser.add_argument(
            '--no-fit',
            action='store_true',
            help='Use the configured kernel hyperparameters verbatim'
        )
        parser.add_argument(
            '--quiet',
            action='store_true',
            help='Only report errors'
        )

    def load_config(self, options) -> RunConfig:
        if options['config']:
            config = RunConfig.load(options['config'])
        else:
            config = RunConfig()
        if options['seed'] is not None and options['seed'] < 0:
            raise CommandError(f"--seed must be >= 0, got {options['seed']}", returncode=2)
        return config.with_overrides(seed=options['seed'], trials=options['trials'],
                                     grid=options['grid'], no_fit=options['no_fit'],
                                     out=options['out'])

    def say(self, message: str, style=None):
        if self.quiet:
            return
        self.stdout.write(style(message) if style else message)

    def handle(self, *args, **options):
        self.quiet = options['quiet']
        app_logger = logging.getLogger('apps')
        level = app_logger.level
        if self.quiet:
            app_logger.setLevel(logging.WARNING)
        try:
            config = self.load_config(options)
            service = PipelineService(config, distribute=settings.GPREACH_DISTRIBUTE)
            self.run(service, options)
        except GPReachError as e:
            raise CommandError(str(e), returncode=e.exit_code) from e
        finally:
            app_logger.setLevel(level)

    def run(self, service: PipelineService, options):
        raise NotImplementedError

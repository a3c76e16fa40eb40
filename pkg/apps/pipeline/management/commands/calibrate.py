"""
Django management command to calibrate error bounds on the learned model.
"""

from apps.pipeline.artifacts import BOUNDS_FILE
from apps.pipeline.config import BOUND_METHODS
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Compute probabilistic, deterministic or Monte-Carlo error bounds'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--method',
            type=str,
            default=None,
            choices=BOUND_METHODS,
            help='Bound method (defaults to [bounds] method)'
        )

    def run(self, service, options):
        method = options['method'] or service.config.bounds.method
        self.say(f'Calibrating {method} bounds...')
        result = service.calibrate(method)
        bound = result.bound
        self.say(f'  scales: {", ".join(f"{v:.6g}" for v in bound.scale)}')
        self.say(f'  joint confidence: {bound.confidence:.10g}')
        if result.coverage is not None:
            self.say(f'  {result.coverage}')
            self.say('  coverage holds for the sampled states only, not for every state', self.style.WARNING)
        self.say(f'Bounds written to {service.path(BOUNDS_FILE)}', self.style.SUCCESS)

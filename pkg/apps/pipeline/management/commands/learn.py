"""
Django management command to learn the GP dynamics model.
"""

from apps.pipeline.artifacts import MODEL_FILE
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Collect or load the dataset and fit the GP model of the unknown drift'

    def run(self, service, options):
        self.say(f'Learning {service.plant.name} into {service.run_dir}...')
        result = service.learn()
        for i in range(result.model.n):
            lengthscales = ', '.join(f'{v:.4g}' for v in result.params.lengthscales[i])
            self.say(
                f'  dim {i + 1}: sigma_k={result.params.signal_std[i]:.4g} '
                f'lengthscales=[{lengthscales}] sigma_bar={result.sigma_bar[i]:.4g}'
            )
        self.say(f'Model written to {service.path(MODEL_FILE)}', self.style.SUCCESS)

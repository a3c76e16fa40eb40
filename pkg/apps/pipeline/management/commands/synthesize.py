"""
Django management command to synthesize the reachability funnel.
"""

from apps.pipeline.artifacts import FUNNEL_FILE
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Construct funnel parameters steering the start box into the goal box'

    def run(self, service, options):
        spec = service.synthesize()
        self.say(f'{"dim":>4} {"eta":>10} {"rho_0":>10} {"rho_inf":>10} {"c":>8} {"d":>8} {"eps":>8}')
        for i in range(spec.n):
            self.say(
                f'{i + 1:>4} {spec.eta[i]:>10.5g} {spec.rho0[i]:>10.5g} {spec.rho_inf[i]:>10.5g} '
                f'{spec.c[i]:>8.4g} {spec.d[i]:>8.4g} {spec.eps[i]:>8.4g}'
            )
        self.say(f'Funnel written to {service.path(FUNNEL_FILE)}', self.style.SUCCESS)

"""
Django management command to simulate the closed loop.
"""

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Run the funnel controller on the plant and audit the trajectories'

    def run(self, service, options):
        result = service.simulate()
        for summary in result.summaries:
            reach = summary['reach_time']
            reach = 'not reached' if reach is None else f'reached at t={reach:.4g}'
            self.say(
                f'  start {summary["index"]} {summary["x0"]}: {summary["status"]}, {reach}, '
                f'min margin {summary["min_margin"]:.4g}'
            )
        self.say(
            f'{len(result.summaries)} runs, reach fraction {result.reach_fraction:.3g}, '
            f'{result.violations} funnel violations',
            self.style.SUCCESS
        )

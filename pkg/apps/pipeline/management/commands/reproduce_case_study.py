"""
Django management command to rerun the two-state case study end to end.
"""

import pandas as pd

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Learn, calibrate, synthesize and simulate the case study, then summarize'

    def run(self, service, options):
        self.say(f'Reproducing the case study in {service.run_dir}...')
        summary = service.reproduce()
        for row in summary.itertuples(index=False):
            reference = '' if pd.isna(row.paper) else f' (reported {row.paper:g})'
            self.say(f'  {row.metric}: {row.produced:.6g}{reference}')
        self.say(f'Summary written to {service.path("summary.csv")}', self.style.SUCCESS)

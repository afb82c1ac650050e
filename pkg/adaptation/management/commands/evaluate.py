from pathlib import Path

from django.core.management.base import CommandError

from adaptation.config import effective_config, write_effective_config
from adaptation.metrics import evaluate

from ._base import RUNTIME_EXIT_CODE, PipelineCommand


class Command(PipelineCommand):
    help = 'Dice and ASSD per structure for matching prediction and ground-truth masks.'

    def add_arguments(self, parser):
        parser.add_argument('--pred', required=True, help='Directory of predicted masks.')
        parser.add_argument('--gt', required=True, help='Directory of ground-truth masks.')
        parser.add_argument('--report', required=True, help='Report path; .json and .txt are written next to it.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        merged = effective_config(options['config'], options['seed'])
        for key in ('pred', 'gt'):
            if not Path(options[key]).is_dir():
                raise FileNotFoundError(f'no such directory: {options[key]}')
        return {'config': merged, 'pred': options['pred'], 'gt': options['gt'], 'report': Path(options['report'])}

    def run(self, plan):
        report = evaluate(plan['pred'], plan['gt'])
        report.write(plan['report'])
        write_effective_config(plan['config'], plan['report'].parent)
        self.stdout.write(report.format_table())
        if not report.complete:
            missing = report.missing_predictions + report.missing_ground_truth
            raise CommandError(f'unmatched cases: {", ".join(missing)}', returncode=RUNTIME_EXIT_CODE)

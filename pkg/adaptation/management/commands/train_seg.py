from pathlib import Path

from adaptation.config import build, effective_config, write_effective_config
from adaptation.manifests import load_augmented_manifest
from adaptation.segmentation import train_seg

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train the 3D segmenter on an augmented manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True, help='Augmented manifest.')
        parser.add_argument('--out', required=True, help='Output directory for the checkpoint and metrics log.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        merged = effective_config(options['config'], options['seed'])
        return {
            'config': merged,
            'segmentation': build('segmentation', merged),
            'entries': load_augmented_manifest(options['manifest']),
            'out': Path(options['out']),
        }

    def run(self, plan):
        write_effective_config(plan['config'], plan['out'])
        run = train_seg(plan['entries'], plan['segmentation'], plan['out'])
        self.stdout.write(str(run.checkpoint_path))

from pathlib import Path

from adaptation.config import build, effective_config, write_effective_config
from adaptation.gan_training import train_gan
from adaptation.manifests import load_source_manifest

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train the conditional generator and discriminator on a preprocessed source manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True, help='Preprocessed source manifest (labels are not used).')
        parser.add_argument('--out', required=True, help='Output directory for checkpoints and the loss log.')
        parser.add_argument('--resume', action='store_true', help='Continue from the training state in --out.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        merged = effective_config(options['config'], options['seed'])
        return {
            'config': merged,
            'train': build('train_gan', merged),
            'generator': build('generator', merged),
            'discriminator': build('discriminator', merged),
            'entries': load_source_manifest(options['manifest']),
            'out': Path(options['out']),
            'resume': options['resume'],
        }

    def run(self, plan):
        write_effective_config(plan['config'], plan['out'])
        run = train_gan(
            plan['entries'],
            plan['train'],
            plan['generator'],
            plan['discriminator'],
            out_dir=plan['out'],
            resume=plan['resume'],
        )
        self.stdout.write(str(run.generator_path))

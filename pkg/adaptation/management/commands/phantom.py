from pathlib import Path

from adaptation.config import effective_config, write_effective_config
from adaptation.phantoms import MIN_EXTENT, generate_dataset

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Generate labelled T1-analog and unlabelled T2-analog phantoms with a source manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--n-t1', type=int, required=True, help='Number of labelled T1-analog sources.')
        parser.add_argument('--n-t2', type=int, required=True, help='Number of unlabelled T2-analog targets.')
        parser.add_argument('--out', required=True, help='Output directory.')
        parser.add_argument('--size', type=int, default=64, help='Cubic phantom extent in voxels.')
        parser.add_argument('--format', choices=['fgv', 'nii.gz'], default='fgv', help='Volume file format.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        if options['n_t1'] < 1 or options['n_t2'] < 1:
            raise ValueError('--n-t1 and --n-t2 must be >= 1')
        if options['size'] < MIN_EXTENT:
            raise ValueError(f'--size must be >= {MIN_EXTENT}')
        merged = effective_config(options['config'], options['seed'])
        return {
            'config': merged,
            'seed': merged['seed'],
            'n_t1': options['n_t1'],
            'n_t2': options['n_t2'],
            'out': Path(options['out']),
            'size': (options['size'],) * 3,
            'suffix': '.' + options['format'],
        }

    def run(self, plan):
        generate_dataset(plan['seed'], plan['n_t1'], plan['n_t2'], plan['out'], plan['size'], plan['suffix'])
        write_effective_config(plan['config'], plan['out'])
        self.stdout.write(str(plan['out'] / 'manifest.json'))

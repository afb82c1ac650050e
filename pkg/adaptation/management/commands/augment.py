from pathlib import Path

from adaptation.augmentation import MANIFEST_FILE, build_training_manifest
from adaptation.conditioning import CENTER_ORDER, PLANE_ORDER, enumerate_augmentation_codes
from adaptation.config import effective_config, write_effective_config
from adaptation.generator import load_generator
from adaptation.manifests import load_source_manifest

from ._base import PipelineCommand


class Command(PipelineCommand):
    help = 'Translate every labelled source into the fake-T2 styles and write an augmented manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--manifest', required=True, help='Preprocessed source manifest.')
        parser.add_argument('--gen-ckpt', required=True, help='Generator checkpoint.')
        parser.add_argument('--out', required=True, help='Output directory.')
        parser.add_argument('--centers', nargs='+', default=[c.value for c in CENTER_ORDER], help='Center styles to render.')
        parser.add_argument('--planes', nargs='+', default=[p.value for p in PLANE_ORDER], help='Slicing planes to render.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        merged = effective_config(options['config'], options['seed'])
        codes = enumerate_augmentation_codes(centers=options['centers'], planes=options['planes'])
        if not codes:
            raise ValueError('no augmentation codes selected')
        entries = load_source_manifest(options['manifest'])
        if not any(entry.labeled for entry in entries):
            raise ValueError(f"{options['manifest']} lists no labelled sources")
        return {
            'config': merged,
            'entries': entries,
            'generator': load_generator(options['gen_ckpt']),
            'centers': sorted({code.center for code in codes}, key=CENTER_ORDER.index),
            'planes': sorted({code.plane for code in codes}, key=PLANE_ORDER.index),
            'out': Path(options['out']),
        }

    def run(self, plan):
        build_training_manifest(
            plan['entries'], plan['generator'], plan['out'], centers=plan['centers'], planes=plan['planes'],
        )
        write_effective_config(plan['config'], plan['out'])
        self.stdout.write(str(plan['out'] / MANIFEST_FILE))

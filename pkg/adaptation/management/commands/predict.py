from pathlib import Path

from adaptation.config import effective_config, write_effective_config
from adaptation.manifests import load_source_manifest
from adaptation.segmentation import load_segmenter
from adaptation.volume_io import case_id, list_volumes, load_volume, save_mask

from ._base import PipelineCommand, logger


def _inputs(path):
    '''
    Volumes named by a source manifest, a directory or a single file.
    '''
    path = Path(path)
    if path.is_dir():
        return list(list_volumes(path).values())
    if path.suffix == '.json':
        return [entry.volume_path for entry in load_source_manifest(path)]
    if not path.exists():
        raise FileNotFoundError(f'no such file: {path}')
    return [path]


class Command(PipelineCommand):
    help = 'Segment preprocessed volumes with a trained segmenter.'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='inputs', required=True, help='Volume file, directory of volumes or source manifest.')
        parser.add_argument('--ckpt', required=True, help='Segmenter checkpoint.')
        parser.add_argument('--out', required=True, help='Output directory for predicted masks.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        merged = effective_config(options['config'], options['seed'])
        inputs = _inputs(options['inputs'])
        if not inputs:
            raise ValueError(f"no volumes found in {options['inputs']}")
        segmenter = load_segmenter(options['ckpt'])
        volumes = []
        for path in inputs:
            volume = load_volume(path)
            segmenter.check_compatible(volume)
            volumes.append((case_id(path), volume))
        return {'config': merged, 'volumes': volumes, 'segmenter': segmenter, 'out': Path(options['out'])}

    def run(self, plan):
        segmenter = plan['segmenter']
        for number, (name, volume) in enumerate(plan['volumes'], start=1):
            save_mask(segmenter.predict(volume), plan['out'] / f'{name}.fgv')
            logger.info('predicted %s (%d/%d)', name, number, len(plan['volumes']))
        write_effective_config(plan['config'], plan['out'])
        self.stdout.write(str(plan['out']))

from pathlib import Path

from adaptation.config import build, effective_config, write_effective_config
from adaptation.manifests import SourceEntry, load_source_manifest, write_source_manifest
from adaptation.pipeline import preprocess_case
from adaptation.preprocessing import resample
from adaptation.registration import save_transform
from adaptation.volume_io import load_mask, load_volume, save_mask, save_volume

from ._base import PipelineCommand, logger


def _triple(values):
    '''
    One value stands for all three axes.
    '''
    if values is None:
        return None
    return values[0] if len(values) == 1 else values


class Command(PipelineCommand):
    help = 'Resample, optionally register to an atlas, normalise and crop every case of a source manifest.'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='manifest', required=True, help='Source manifest.')
        parser.add_argument('--atlas', help='Atlas volume; registration is skipped without it.')
        parser.add_argument('--spacing', type=float, nargs='+', help='Target spacing in mm (1 or 3 values).')
        parser.add_argument('--crop', type=int, nargs='+', help='Crop extent in voxels (1 or 3 values).')
        parser.add_argument('--crop-origin', type=int, nargs=3, help='Crop origin in voxels; default centres the crop.')
        parser.add_argument('--out', required=True, help='Output directory.')
        self.add_config_arguments(parser)

    def validate(self, **options):
        flags = {
            'spacing': _triple(options['spacing']),
            'crop': _triple(options['crop']),
            'crop_origin': options['crop_origin'],
        }
        overrides = {'preprocess': {key: value for key, value in flags.items() if value is not None}}
        merged = effective_config(options['config'], options['seed'], overrides)
        preprocess = build('preprocess', merged)
        registration = build('registration', merged)
        entries = load_source_manifest(options['manifest'])
        for entry in entries:
            for path in (entry.volume_path, entry.mask_path):
                if path is not None and not Path(path).exists():
                    raise FileNotFoundError(f'no such file: {path}')
        atlas = None
        if options['atlas']:
            atlas = resample(load_volume(options['atlas']), preprocess.spacing)
        return {
            'config': merged,
            'preprocess': preprocess,
            'registration': registration,
            'entries': entries,
            'atlas': atlas,
            'out': Path(options['out']),
        }

    def run(self, plan):
        out = plan['out']
        rows = []
        for number, entry in enumerate(plan['entries'], start=1):
            volume = load_volume(entry.volume_path)
            mask = load_mask(entry.mask_path) if entry.labeled else None
            case = preprocess_case(volume, entry.modality, plan['preprocess'], mask, plan['atlas'], plan['registration'])
            name = entry.case_id
            image_path = save_volume(case.volume, out / 'images' / f'{name}.fgv')
            mask_path = None
            if case.mask is not None:
                mask_path = save_mask(case.mask, out / 'masks' / f'{name}.fgv')
            if case.transform is not None:
                save_transform(case.transform, out / 'transforms' / f'{name}.txt')
            rows.append(SourceEntry(image_path, entry.modality, entry.center, mask_path))
            logger.info('preprocessed %s (%d/%d)', name, number, len(plan['entries']))
        write_source_manifest(rows, out / 'manifest.json')
        write_effective_config(plan['config'], out)
        self.stdout.write(str(out / 'manifest.json'))

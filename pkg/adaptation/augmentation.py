'''
Fine-grained style augmentation: every labelled source volume is translated
once per (center, plane) code, and each fake keeps the source annotation,
since translation only changes style, never geometry.
'''
import logging
from dataclasses import dataclass
from pathlib import Path

from .conditioning import CENTER_ORDER, PLANE_ORDER, ConditionalCode, Modality, enumerate_augmentation_codes
from .generator import translate_volume
from .manifests import AugmentedEntry, write_augmented_manifest
from .volume_io import load_mask, load_volume, save_mask, save_volume

logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'


@dataclass(frozen=True, eq=False)
class AugmentedCase:
    volume: object
    mask: object
    code: ConditionalCode


def augment_nine(volume, mask, gen, target_modality=Modality.T2W, centers=CENTER_ORDER, planes=PLANE_ORDER):
    '''Translate ``volume`` for every augmentation code; masks pass through untouched.'''
    mask.check_pairs_with(volume)
    cases = []
    for code in enumerate_augmentation_codes(target_modality, centers, planes):
        fake = translate_volume(gen, volume, code)
        cases.append(AugmentedCase(fake, mask, code))
    return cases


def _style_suffix(code):
    return f'{code.modality.value}_{code.center.value}_{code.plane.token}'


def build_training_manifest(source_entries, gen, out_dir, suffix='.fgv', centers=CENTER_ORDER, planes=PLANE_ORDER):
    '''
    Write the fakes of every labelled source under ``out_dir`` and a manifest
    of (image, mask, code) rows. Unlabelled sources are skipped. Output names
    depend only on the source case and the code, so reruns overwrite in place.
    '''
    out_dir = Path(out_dir)
    labeled = [entry for entry in source_entries if entry.labeled]
    if not labeled:
        raise ValueError('no labelled source volumes to augment')
    skipped = len(source_entries) - len(labeled)
    if skipped:
        logger.info('skipping %d unlabelled source volumes', skipped)

    rows = []
    for number, entry in enumerate(labeled, start=1):
        volume = load_volume(entry.volume_path)
        mask = load_mask(entry.mask_path)
        mask_path = out_dir / 'masks' / f'{entry.case_id}{suffix}'
        try:
            save_mask(mask, mask_path)
        except OSError as exc:
            raise OSError(f'could not write {mask_path}: {exc}') from exc
        for case in augment_nine(volume, mask, gen, centers=centers, planes=planes):
            image_path = out_dir / 'images' / f'{entry.case_id}_{_style_suffix(case.code)}{suffix}'
            try:
                save_volume(case.volume, image_path)
            except OSError as exc:
                raise OSError(f'could not write {image_path}: {exc}') from exc
            rows.append(AugmentedEntry(image_path, mask_path, case.code))
        logger.info('augmented %s (%d/%d)', entry.case_id, number, len(labeled))

    write_augmented_manifest(rows, out_dir / MANIFEST_FILE)
    return rows

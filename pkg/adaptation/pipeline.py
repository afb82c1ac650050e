'''
The per-case preprocessing chain: resample -> register -> normalize -> crop.

Masks follow their volume through every geometric step with nearest-neighbour
sampling; normalisation only touches intensities.
'''
import logging
from dataclasses import dataclass
from typing import Optional

from .conditioning import Modality
from .preprocessing import crop_fixed, crop_mask, default_crop_origin, percentile_normalize, resample, resample_mask
from .registration import RegistrationConfig, Similarity, apply_affine, apply_affine_to_mask, register_affine

logger = logging.getLogger(__name__)

SIMILARITY_FOR_MODALITY = {
    Modality.T1W: Similarity.NCC,
    Modality.T2W: Similarity.MI,
}


@dataclass(frozen=True)
class PreprocessConfig:
    spacing: tuple = (0.4102, 0.4102, 0.4102)
    crop: tuple = (256, 256, 256)
    crop_origin: Optional[tuple] = None
    p_low: float = 0.0
    p_high: float = 99.5


@dataclass(frozen=True, eq=False)
class PreprocessedCase:
    volume: object
    mask: object
    transform: object


def preprocess_case(volume, modality, config, mask=None, atlas=None, registration=None):
    '''
    Run the chain on one case. ``atlas`` must already be resampled to
    ``config.spacing``; without it registration is skipped and ``transform``
    is None.
    '''
    modality = Modality(modality)
    if mask is not None:
        mask.check_pairs_with(volume)
    volume = resample(volume, config.spacing)
    if mask is not None:
        mask = resample_mask(mask, config.spacing)
        if mask.shape != volume.shape:
            raise ValueError(f'mask resampled to {mask.shape} but volume to {volume.shape}')

    transform = None
    if atlas is not None:
        similarity = SIMILARITY_FOR_MODALITY[modality]
        logger.info('registering %s volume to atlas with %s', modality.label, similarity.value)
        transform = register_affine(volume, atlas, similarity, registration or RegistrationConfig())
        volume = apply_affine(volume, transform, atlas.shape, atlas.spacing)
        if mask is not None:
            mask = apply_affine_to_mask(mask, transform, atlas.shape, atlas.spacing)

    volume = percentile_normalize(volume, config.p_low, config.p_high)

    origin = config.crop_origin or default_crop_origin(volume.shape, config.crop)
    volume = crop_fixed(volume, origin, config.crop)
    if mask is not None:
        mask = crop_mask(mask, origin, config.crop)
    return PreprocessedCase(volume, mask, transform)

'''
Synthetic multi-style phantoms with ground-truth masks.

Anatomy depends on the seed alone, so one seed rendered in every
(modality, center) style shares its mask. Style is a contrast table per
modality followed by a per-center gamma and noise level.
'''
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import CENTER_ORDER, MODALITY_ORDER, Center, Modality
from .manifests import SourceEntry, write_source_manifest
from .volume_io import Label, SegmentationMask, Volume3D, save_mask, save_volume

logger = logging.getLogger(__name__)

MIN_EXTENT = 16
MANIFEST_FILE = 'manifest.json'
HIDDEN_EVAL_DIR = 'hidden_eval'


@dataclass(frozen=True)
class CenterStyle:
    gamma: float
    noise_sigma: float


@dataclass(frozen=True)
class ModalityContrast:
    vs: float
    cochlea: float


# every style constant lives here
CENTER_STYLES = {
    Center.LDN: CenterStyle(gamma=0.7, noise_sigma=0.01),
    Center.ETZ: CenterStyle(gamma=1.0, noise_sigma=0.02),
    Center.UKM: CenterStyle(gamma=1.4, noise_sigma=0.03),
}
MODALITY_CONTRAST = {
    # T1-analog: bright tumour, dark fluid-filled cochlea
    Modality.T1W: ModalityContrast(vs=0.85, cochlea=0.08),
    # T2-analog: dark tumour, bright fluid
    Modality.T2W: ModalityContrast(vs=0.2, cochlea=0.92),
}
BACKGROUND_RANGE = (0.3, 0.5)


@dataclass(frozen=True, eq=False)
class Anatomy:
    background: np.ndarray
    labels: np.ndarray


def _fractional_grid(size):
    axes = [(np.arange(n) + 0.5) / n for n in size]
    return np.meshgrid(*axes, indexing='ij')


def _background(rng, grid):
    field = np.zeros(grid[0].shape)
    for _ in range(4):
        frequency = rng.uniform(0.5, 2.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * sum(f * g for f, g in zip(frequency, grid)) + phase)
    low, high = BACKGROUND_RANGE
    span = field.max() - field.min()
    field = (field - field.min()) / span if span > 0 else np.zeros_like(field)
    return low + (high - low) * field


def _ensure_voxel(region, centre, size):
    '''A structure too small for the grid keeps at least the voxel holding its centre.'''
    if not region.any():
        index = tuple(min(int(c * n), n - 1) for c, n in zip(centre, size))
        region[index] = True
    return region


def generate_anatomy(seed, size=(64, 64, 64)):
    '''Background field and label grid for ``seed``; coordinates are fractions of the extent.'''
    size = tuple(int(n) for n in size)
    if len(size) != 3 or min(size) < MIN_EXTENT:
        raise ValueError(f'phantom size too small: {size}; every extent must be >= {MIN_EXTENT}')
    rng = np.random.default_rng([int(seed)])
    grid = _fractional_grid(size)
    background = _background(rng, grid)
    labels = np.zeros(size, dtype=np.uint8)

    # VS-analog ellipsoid in the middle band, clear of both cochleae
    centre = np.array([rng.uniform(0.4, 0.6) for _ in range(3)])
    semi_axes = rng.uniform(0.1, 0.16, size=3)
    offsets = [g - c for g, c in zip(grid, centre)]
    tumour = sum((o / a) ** 2 for o, a in zip(offsets, semi_axes)) <= 1.0
    tumour = _ensure_voxel(tumour, centre, size)
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    side = sum(n * o for n, o in zip(normal, offsets))
    threshold = np.quantile(side[tumour], rng.uniform(0.35, 0.65))
    labels[tumour & (side <= threshold)] = Label.VS_INTRA
    labels[tumour & (side > threshold)] = Label.VS_EXTRA

    # cochlea-analogs near the two x-borders; max reach 0.22 / 0.78 against the tumour's 0.24 / 0.76
    for x_range in ((0.12, 0.15), (0.85, 0.88)):
        sphere_centre = np.array([rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(*x_range)])
        radius = rng.uniform(0.05, 0.07)
        sphere = sum((g - c) ** 2 for g, c in zip(grid, sphere_centre)) <= radius ** 2
        sphere = _ensure_voxel(sphere & (labels == Label.BACKGROUND), sphere_centre, size)
        labels[sphere] = Label.COCHLEA

    return Anatomy(background, labels)


def render(anatomy, seed, modality, center):
    '''Intensities of ``anatomy`` in the (modality, center) style, in [0, 1].'''
    modality, center = Modality(modality), Center(center)
    contrast = MODALITY_CONTRAST[modality]
    style = CENTER_STYLES[center]
    image = anatomy.background.copy()
    # structures carry a faint copy of the background texture
    texture = anatomy.background - anatomy.background.mean()
    tumour = np.isin(anatomy.labels, (Label.VS_INTRA, Label.VS_EXTRA))
    image[tumour] = contrast.vs + 0.2 * texture[tumour]
    cochlea = anatomy.labels == Label.COCHLEA
    image[cochlea] = contrast.cochlea + 0.2 * texture[cochlea]
    image = np.clip(image, 0.0, 1.0) ** style.gamma
    noise_rng = np.random.default_rng([int(seed), MODALITY_ORDER.index(modality), CENTER_ORDER.index(center)])
    image = image + noise_rng.normal(0.0, style.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_phantom(seed, modality, center, size=(64, 64, 64), spacing=(1.0, 1.0, 1.0)):
    anatomy = generate_anatomy(seed, size)
    volume = Volume3D(render(anatomy, seed, modality, center), spacing)
    mask = SegmentationMask(anatomy.labels, spacing)
    return volume, mask


def case_seed(seed, index):
    '''Independent per-case anatomy seed derived from the dataset seed.'''
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _save(writer, obj, path):
    try:
        writer(obj, path)
    except OSError as exc:
        raise OSError(f'could not write {path}: {exc}') from exc


def generate_dataset(seed, n_t1, n_t2, out_dir, size=(64, 64, 64), suffix='.fgv'):
    '''
    Labelled T1-analog sources plus unlabelled T2-analog targets.

    T2 masks go to ``hidden_eval/`` under the same file names, together with a
    manifest that lists the T2 volumes with those masks, so the evaluation set
    can be preprocessed exactly like the training data.
    '''
    if n_t1 < 1 or n_t2 < 1:
        raise ValueError(f'phantom counts must be >= 1, got n_t1={n_t1}, n_t2={n_t2}')
    out_dir = Path(out_dir)
    entries, hidden = [], []
    plan = [(Modality.T1W, index) for index in range(n_t1)] + [(Modality.T2W, index) for index in range(n_t2)]
    for number, (modality, index) in enumerate(plan):
        center = CENTER_ORDER[index % len(CENTER_ORDER)]
        volume, mask = generate_phantom(case_seed(seed, number), modality, center, size)
        name = f'{modality.value}_{index:03d}{suffix}'
        image_path = out_dir / 'images' / name
        _save(save_volume, volume, image_path)
        if modality == Modality.T1W:
            mask_path = out_dir / 'masks' / name
            _save(save_mask, mask, mask_path)
            entries.append(SourceEntry(image_path, modality, center, mask_path))
        else:
            mask_path = out_dir / HIDDEN_EVAL_DIR / name
            _save(save_mask, mask, mask_path)
            entries.append(SourceEntry(image_path, modality, center))
            hidden.append(SourceEntry(image_path, modality, center, mask_path))
    write_source_manifest(entries, out_dir / MANIFEST_FILE)
    write_source_manifest(hidden, out_dir / HIDDEN_EVAL_DIR / MANIFEST_FILE)
    logger.info('generated %d T1 and %d T2 phantoms in %s', n_t1, n_t2, out_dir)
    return entries

'''
Volumes and label masks with physical spacing, and their on-disk formats.

Arrays are indexed (Z, Y, X) and spacing is (sz, sy, sx) in mm. Two formats
are supported, chosen by file suffix:

``.nii`` / ``.nii.gz``
    NIfTI-1 through nibabel. NIfTI stores (i, j, k) = (x, y, z), so arrays
    are transposed on the way in and out. Direction cosines and origin are
    read but not interpreted.

``.fgv``
    Portable raw format: a fixed little-endian header followed by the voxels
    in C order. Header fields are magic ``FGVOL001``, a dtype tag, the shape
    as three uint32 and the spacing as three float64.
'''
import logging
from dataclasses import dataclass
from pathlib import Path

import nibabel as nib
import numpy as np
from django.db import models

logger = logging.getLogger(__name__)


class Label(models.IntegerChoices):
    BACKGROUND = 0, 'Background'
    VS_INTRA = 1, 'VS intra-meatal'
    VS_EXTRA = 2, 'VS extra-meatal'
    COCHLEA = 3, 'Cochlea'


LABEL_VALUES = tuple(int(label) for label in Label)

RAW_SUFFIX = '.fgv'
NIFTI_SUFFIXES = ('.nii.gz', '.nii')
RAW_MAGIC = b'FGVOL001'
RAW_HEADER = np.dtype([
    ('magic', 'S8'),
    ('dtype', '<u1'),
    ('shape', '<u4', (3,)),
    ('spacing', '<f8', (3,)),
])
RAW_DTYPES = {
    1: np.dtype('<f4'),
    2: np.dtype('<f8'),
    3: np.dtype('u1'),
    4: np.dtype('<i2'),
    5: np.dtype('<i4'),
    6: np.dtype('<i8'),
}
RAW_TAGS = {dtype: tag for tag, dtype in RAW_DTYPES.items()}


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f'expected 3 spacing components, got {len(spacing)}')
    if not all(np.isfinite(spacing)):
        raise ValueError(f'non-finite spacing {spacing}')
    if any(s <= 0 for s in spacing):
        raise ValueError(f'nonpositive spacing {spacing}')
    return spacing


def _check_grid(array):
    array = np.asarray(array)
    if array.ndim != 3:
        raise ValueError(f'expected 3 dimensions, got {array.ndim}')
    if min(array.shape) < 1:
        raise ValueError(f'empty grid of shape {array.shape}')
    return array


@dataclass(frozen=True, eq=False)
class Volume3D:
    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        data = _check_grid(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError('volume contains NaN or Inf')
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'spacing', _check_spacing(self.spacing))

    @property
    def shape(self):
        return self.data.shape

    @property
    def extent_mm(self):
        return tuple(n * s for n, s in zip(self.shape, self.spacing))

    def with_data(self, data):
        return Volume3D(data, self.spacing)


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    labels: np.ndarray
    spacing: tuple

    def __post_init__(self):
        labels = _check_grid(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.array_equal(labels, np.round(labels)):
                raise ValueError('mask labels must be integers')
            labels = labels.astype(np.uint8)
        unexpected = sorted(set(np.unique(labels).tolist()) - set(LABEL_VALUES))
        if unexpected:
            raise ValueError(f'mask labels {unexpected} outside {list(LABEL_VALUES)}')
        object.__setattr__(self, 'labels', labels.astype(np.uint8, copy=False))
        object.__setattr__(self, 'spacing', _check_spacing(self.spacing))

    @property
    def shape(self):
        return self.labels.shape

    def check_pairs_with(self, volume):
        if self.shape != volume.shape:
            raise ValueError(f'mask shape {self.shape} does not match volume shape {volume.shape}')
        return self

    def select(self, label_set):
        '''Boolean grid of voxels whose label is in ``label_set``.'''
        return np.isin(self.labels, list(label_set))


def _format_of(path):
    name = Path(path).name.lower()
    if name.endswith(RAW_SUFFIX):
        return 'raw'
    if name.endswith(NIFTI_SUFFIXES):
        return 'nifti'
    raise ValueError(f"unsupported volume format for '{path}'; use .nii, .nii.gz or {RAW_SUFFIX}")


def case_id(path):
    '''File name with the format suffix removed.'''
    name = Path(path).name
    for suffix in (RAW_SUFFIX,) + NIFTI_SUFFIXES:
        if name.lower().endswith(suffix):
            return name[:-len(suffix)]
    return Path(path).stem


def _read_raw(path):
    blob = Path(path).read_bytes()
    if len(blob) < RAW_HEADER.itemsize:
        raise ValueError(f'malformed header in {path}: file too short')
    header = np.frombuffer(blob, dtype=RAW_HEADER, count=1)[0]
    if header['magic'] != RAW_MAGIC:
        raise ValueError(f'malformed header in {path}: bad magic {header["magic"]!r}')
    tag = int(header['dtype'])
    if tag not in RAW_DTYPES:
        raise ValueError(f'malformed header in {path}: unknown dtype tag {tag}')
    dtype = RAW_DTYPES[tag]
    shape = tuple(int(n) for n in header['shape'])
    count = int(np.prod(shape))
    payload = blob[RAW_HEADER.itemsize:]
    if len(payload) != count * dtype.itemsize:
        raise ValueError(f'malformed header in {path}: expected {count} voxels of {dtype}')
    data = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))
    return data, tuple(float(s) for s in header['spacing'])


def _write_raw(path, array, spacing):
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder('<') if array.dtype.itemsize > 1 else array.dtype
    if dtype not in RAW_TAGS:
        raise ValueError(f'dtype {array.dtype} cannot be stored in {RAW_SUFFIX} files')
    header = np.zeros(1, dtype=RAW_HEADER)
    header['magic'] = RAW_MAGIC
    header['dtype'] = RAW_TAGS[dtype]
    header['shape'] = array.shape
    header['spacing'] = spacing
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(array.astype(dtype, copy=False).tobytes(order='C'))


def _read_nifti(path):
    try:
        image = nib.load(str(path))
    except Exception as exc:
        raise ValueError(f'malformed header in {path}: {exc}') from exc
    if len(image.shape) != 3:
        raise ValueError(f'expected 3 dimensions, got {len(image.shape)} in {path}')
    data = np.asanyarray(image.dataobj)
    zooms = image.header.get_zooms()[:3]
    return data.transpose(2, 1, 0).copy(), tuple(float(z) for z in reversed(zooms))


def _write_nifti(path, array, spacing):
    data = np.ascontiguousarray(array).transpose(2, 1, 0)
    affine = np.diag([spacing[2], spacing[1], spacing[0], 1.0])
    image = nib.Nifti1Image(data, affine)
    image.header.set_zooms((spacing[2], spacing[1], spacing[0]))
    nib.save(image, str(path))


def _read(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'no such volume: {path}')
    if _format_of(path) == 'raw':
        return _read_raw(path)
    return _read_nifti(path)


def _write(path, array, spacing):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _format_of(path) == 'raw':
        _write_raw(path, array, spacing)
    else:
        _write_nifti(path, array, spacing)
    logger.debug('wrote %s %s', path, array.shape)
    return path


def load_volume(path):
    data, spacing = _read(path)
    return Volume3D(data, spacing)


def save_volume(volume, path):
    return _write(path, volume.data, volume.spacing)


def load_mask(path):
    data, spacing = _read(path)
    return SegmentationMask(data, spacing)


def save_mask(mask, path):
    return _write(path, mask.labels, mask.spacing)


def list_volumes(directory):
    '''Case id -> path for every volume or mask file directly inside ``directory``.'''
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f'no such directory: {directory}')
    return {
        case_id(path): path
        for path in sorted(directory.iterdir())
        if path.is_file() and path.name.lower().endswith((RAW_SUFFIX,) + NIFTI_SUFFIXES)
    }

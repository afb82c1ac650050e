'''
Isotropic resampling, percentile normalisation, fixed-region cropping and
plane-wise slicing.

Voxel index ``i`` along an axis with spacing ``s`` has its centre at the
physical coordinate ``(i + 0.5) * s``; resampling and warping both sample at
voxel centres under that convention.
'''
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .conditioning import Plane, parse_plane
from .volume_io import SegmentationMask, Volume3D

logger = logging.getLogger(__name__)


def _check_target_spacing(target_spacing):
    target = np.broadcast_to(np.asarray(target_spacing, dtype=np.float64), (3,))
    if not np.all(np.isfinite(target)) or np.any(target <= 0):
        raise ValueError(f'target spacing must be strictly positive, got {tuple(target)}')
    return tuple(float(t) for t in target)


def resampled_shape(shape, spacing, target_spacing):
    return tuple(
        max(1, int(round(n * s / t)))
        for n, s, t in zip(shape, spacing, target_spacing)
    )


def _resample_grid(array, spacing, target_spacing, order):
    out_shape = resampled_shape(array.shape, spacing, target_spacing)
    scale = np.asarray(target_spacing) / np.asarray(spacing)
    # input index = (o + 0.5) * t / s - 0.5
    offset = 0.5 * scale - 0.5
    resampled = ndimage.affine_transform(
        array,
        scale,
        offset=offset,
        output_shape=out_shape,
        order=order,
        mode='nearest',
        prefilter=False,
    )
    return resampled


def resample(volume, target_spacing):
    '''Trilinear resampling onto a grid with ``target_spacing``, edges clamped.'''
    target_spacing = _check_target_spacing(target_spacing)
    data = volume.data.astype(np.float64, copy=False)
    resampled = _resample_grid(data, volume.spacing, target_spacing, order=1)
    return Volume3D(resampled.astype(volume.data.dtype, copy=False), target_spacing)


def resample_mask(mask, target_spacing):
    '''Nearest-neighbour counterpart of ``resample`` for label grids.'''
    target_spacing = _check_target_spacing(target_spacing)
    labels = _resample_grid(mask.labels, mask.spacing, target_spacing, order=0)
    return SegmentationMask(labels, target_spacing)


def percentile_normalize(volume, p_low=0.0, p_high=99.5):
    '''
    Map the ``p_low`` percentile to 0 and the ``p_high`` percentile to 1, then clip.

    Percentiles interpolate linearly between sorted voxel values. A volume
    whose two percentiles coincide maps to all zeros.
    '''
    if not 0 <= p_low < p_high <= 100:
        raise ValueError(f'percentiles must satisfy 0 <= p_low < p_high <= 100, got {p_low}, {p_high}')
    data = volume.data.astype(np.float64, copy=False)
    low, high = np.percentile(data, [p_low, p_high], method='linear')
    if high <= low:
        logger.warning('constant intensities between percentiles %s and %s; normalising to zeros', p_low, p_high)
        return volume.with_data(np.zeros_like(volume.data))
    normalised = np.clip((data - low) / (high - low), 0.0, 1.0)
    return volume.with_data(normalised.astype(volume.data.dtype, copy=False))


def default_crop_origin(shape, size):
    '''Origin that centres a crop of ``size`` on a grid of ``shape``.'''
    return tuple(n // 2 - c // 2 for n, c in zip(shape, size))


def crop_array(array, origin, size):
    '''Sub-grid of ``size`` starting at ``origin``; overhang is zero-padded.'''
    size = tuple(int(c) for c in size)
    if len(size) != 3 or any(c <= 0 for c in size):
        raise ValueError(f'crop size must be three positive extents, got {size}')
    out = np.zeros(size, dtype=array.dtype)
    source, target = [], []
    for start, extent, n in zip(origin, size, array.shape):
        start = int(start)
        lo, hi = max(start, 0), min(start + extent, n)
        if hi <= lo:
            return out
        source.append(slice(lo, hi))
        target.append(slice(lo - start, hi - start))
    out[tuple(target)] = array[tuple(source)]
    return out


def crop_fixed(volume, origin_voxel, size=(256, 256, 256)):
    return volume.with_data(crop_array(volume.data, origin_voxel, size))


def crop_mask(mask, origin_voxel, size=(256, 256, 256)):
    return SegmentationMask(crop_array(mask.labels, origin_voxel, size), mask.spacing)


@dataclass(frozen=True, eq=False)
class SliceStack:
    slices: tuple
    plane: Plane
    source_shape: tuple
    source_spacing: tuple

    def __post_init__(self):
        object.__setattr__(self, 'slices', tuple(self.slices))
        object.__setattr__(self, 'plane', parse_plane(self.plane))

    @property
    def slice_shape(self):
        axis = self.plane.axis
        return tuple(n for i, n in enumerate(self.source_shape) if i != axis)

    @property
    def pixel_spacing(self):
        axis = self.plane.axis
        return tuple(s for i, s in enumerate(self.source_spacing) if i != axis)

    def __len__(self):
        return len(self.slices)

    def with_slices(self, slices):
        return SliceStack(tuple(slices), self.plane, self.source_shape, self.source_spacing)


def slice_volume(volume, plane):
    '''2D slices in ascending index order along the plane's axis (axial Z, coronal Y, sagittal X).'''
    plane = parse_plane(plane)
    axis = plane.axis
    slices = tuple(
        np.take(volume.data, index, axis=axis)
        for index in range(volume.shape[axis])
    )
    return SliceStack(slices, plane, volume.shape, volume.spacing)


def restack(stack):
    axis = stack.plane.axis
    expected = stack.source_shape[axis]
    if len(stack.slices) != expected:
        raise ValueError(f'incomplete stack: {len(stack.slices)} slices, expected {expected}')
    for index, plane_slice in enumerate(stack.slices):
        if np.shape(plane_slice) != stack.slice_shape:
            raise ValueError(f'slice {index} has shape {np.shape(plane_slice)}, expected {stack.slice_shape}')
    return Volume3D(np.stack(stack.slices, axis=axis), stack.source_spacing)


def flip_array(array, axes):
    '''Reverse ``array`` along the given volume axes (0=Z, 1=Y, 2=X).'''
    axes = tuple(sorted(axes))
    return np.flip(array, axis=axes).copy() if axes else array

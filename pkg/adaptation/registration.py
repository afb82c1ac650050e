'''
Atlas-based affine registration.

Transforms pull back: ``T(x) = A x + t`` maps a physical point of the atlas
(output) grid to the point of the moving image that lands there, so warping
samples the moving image at ``T(x)``. Parameterised transforms compose
scale -> rotate -> translate about a centre ``c``:

    T(x) = R S (x - c) + c + t

with ``R = Rz Ry Rx`` (rotations about the volume axes, radians), ``S`` the
diagonal of ``exp(log_scales)`` and ``t`` in mm. All vectors are ordered
(z, y, x).
'''
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.db import models
from scipy import ndimage, optimize

from .preprocessing import resample
from .volume_io import SegmentationMask, Volume3D

logger = logging.getLogger(__name__)

N_PARAMETERS = 9


class Similarity(models.TextChoices):
    NCC = 'ncc', 'Normalized cross-correlation'
    MI = 'mi', 'Mutual information'


class RegistrationDivergedError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(f'{message} after {len(trace)} evaluations; last costs {trace[-5:]}')
        self.trace = trace


def _rotation(angles):
    '''Rz @ Ry @ Rx for angles (about z, about y, about x), acting on (z, y, x) vectors.'''
    az, ay, ax = angles
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    # about z: mixes (y, x)
    rz = np.array([[1, 0, 0], [0, cz, -sz], [0, sz, cz]])
    # about y: mixes (z, x)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    # about x: mixes (z, y)
    rx = np.array([[cx, -sx, 0], [sx, cx, 0], [0, 0, 1]])
    return rz @ ry @ rx


@dataclass(frozen=True, eq=False)
class AffineTransform:
    matrix: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(matrix)) or not np.all(np.isfinite(translation)):
            raise ValueError('transform contains non-finite entries')
        if abs(np.linalg.det(matrix)) <= 1e-9:
            raise ValueError('singular transform: |det| <= 1e-9')
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_parameters(cls, parameters, center=(0.0, 0.0, 0.0)):
        '''Build from (3 rotations rad, 3 log-scales, 3 translations mm).'''
        parameters = np.asarray(parameters, dtype=np.float64)
        if parameters.shape != (N_PARAMETERS,):
            raise ValueError(f'expected {N_PARAMETERS} parameters, got shape {parameters.shape}')
        center = np.asarray(center, dtype=np.float64)
        linear = _rotation(parameters[:3]) @ np.diag(np.exp(parameters[3:6]))
        translation = center - linear @ center + parameters[6:]
        return cls(linear, translation)

    @classmethod
    def from_matrix(cls, values):
        '''Raw 12-number form: row-major 3x4 [A | t].'''
        values = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(values[:, :3], values[:, 3])

    def as_matrix(self):
        return np.hstack([self.matrix, self.translation[:, None]])

    def __call__(self, points):
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.translation

    def compose(self, other):
        '''``self`` after ``other``: x -> self(other(x)).'''
        return AffineTransform(self.matrix @ other.matrix, self.matrix @ other.translation + self.translation)

    def inverse(self):
        inverse = np.linalg.inv(self.matrix)
        return AffineTransform(inverse, -inverse @ self.translation)


def save_transform(transform, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        path,
        transform.as_matrix().reshape(1, 12),
        fmt='%.17g',
        header='row-major 3x4 [A|t]; T(x) = A x + t maps atlas mm (z,y,x) to moving mm; scale->rotate->translate',
    )


def load_transform(path):
    values = np.loadtxt(path, dtype=np.float64).reshape(-1)
    if values.size != 12:
        raise ValueError(f'transform file {path} must hold 12 numbers, found {values.size}')
    return AffineTransform.from_matrix(values)


def _as_grid(image):
    if isinstance(image, SegmentationMask):
        return image.labels
    if isinstance(image, Volume3D):
        return image.data
    return np.asarray(image)


def _check_pair(a, b):
    a, b = _as_grid(a), _as_grid(b)
    if a.shape != b.shape:
        raise ValueError(f'shape mismatch: {a.shape} vs {b.shape}')
    return a.astype(np.float64).ravel(), b.astype(np.float64).ravel()


def ncc(a, b):
    '''Pearson correlation of the flattened voxel values.'''
    x, y = _check_pair(a, b)
    if x.size < 2:
        raise ValueError('ncc needs at least 2 voxels')
    x = x - x.mean()
    y = y - y.mean()
    sx = np.sqrt(np.dot(x, x))
    sy = np.sqrt(np.dot(y, y))
    if sx == 0 or sy == 0:
        raise ValueError('zero variance: ncc is undefined for constant input')
    return float(np.clip(np.dot(x, y) / (sx * sy), -1.0, 1.0))


def _parzen_coordinates(values, bins):
    low, high = values.min(), values.max()
    if high > low:
        scaled = (values - low) / (high - low) * (bins - 1)
    else:
        scaled = np.zeros_like(values)
    lower = np.minimum(np.floor(scaled).astype(np.int64), bins - 2)
    return lower, scaled - lower


def _joint_histogram(ia, wa, ib, wb, bins):
    joint = np.zeros(bins * bins)
    for da, weight_a in ((0, 1.0 - wa), (1, wa)):
        for db, weight_b in ((0, 1.0 - wb), (1, wb)):
            joint += np.bincount((ia + da) * bins + (ib + db), weights=weight_a * weight_b, minlength=bins * bins)
    return joint.reshape(bins, bins)


def _marginal_histogram(index, weight, bins):
    return (
        np.bincount(index, weights=1.0 - weight, minlength=bins)
        + np.bincount(index + 1, weights=weight, minlength=bins)
    )


def _mi_from_histograms(joint, marginal_a, marginal_b):
    total = joint.sum()
    p = joint / total
    pa = marginal_a / total
    pb = marginal_b / total
    nonzero = p > 0
    outer = np.outer(pa, pb)
    return float(np.sum(p[nonzero] * (np.log(p[nonzero]) - np.log(outer[nonzero]))))


def mutual_information(a, b, bins=32):
    '''
    Mutual information in nats from a linearly (Parzen) weighted joint histogram.

    Both inputs are min-max scaled onto ``bins`` bin centres; every voxel
    splits its weight between the two neighbouring bins, which makes the
    estimate continuous in the intensities. MI(v, v) equals the marginal
    entropy only when every intensity of ``v`` sits on a bin centre; voxels
    between centres spread over two bins and MI(v, v) falls below H(v).
    '''
    if bins < 2:
        raise ValueError(f'bins must be >= 2, got {bins}')
    x, y = _check_pair(a, b)
    if x.size == 0:
        raise ValueError('mutual information of an empty volume is undefined')
    ia, wa = _parzen_coordinates(x, bins)
    ib, wb = _parzen_coordinates(y, bins)
    joint = _joint_histogram(ia, wa, ib, wb, bins)
    marginal_a = _marginal_histogram(ia, wa, bins)
    marginal_b = _marginal_histogram(ib, wb, bins)
    # exact symmetry: MI(a, b) == MI(b, a)
    forward = _mi_from_histograms(joint, marginal_a, marginal_b)
    backward = _mi_from_histograms(joint.T, marginal_b, marginal_a)
    return max(0.0, 0.5 * (forward + backward))


def marginal_entropy(a, bins=32):
    '''Entropy in nats of the Parzen-binned marginal used by ``mutual_information``.'''
    x = _as_grid(a).astype(np.float64).ravel()
    index, weight = _parzen_coordinates(x, bins)
    p = _marginal_histogram(index, weight, bins) / x.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _warp_grid(grid, spacing, transform, out_shape, out_spacing, order):
    in_spacing = np.asarray(spacing, dtype=np.float64)
    out_spacing = np.asarray(out_spacing, dtype=np.float64)
    # input index = diag(1/s_in) (A diag(s_out) (o + 0.5) + t) - 0.5
    matrix = (transform.matrix * out_spacing[None, :]) / in_spacing[:, None]
    offset = (transform.matrix @ (0.5 * out_spacing) + transform.translation) / in_spacing - 0.5
    return ndimage.affine_transform(
        grid,
        matrix,
        offset=offset,
        output_shape=tuple(int(n) for n in out_shape),
        order=order,
        mode='constant',
        cval=0,
        prefilter=False,
    )


def apply_affine(volume, transform, out_shape=None, out_spacing=None):
    '''Trilinear pull-back warp; samples outside the moving image read as zero.'''
    out_shape = volume.shape if out_shape is None else out_shape
    out_spacing = volume.spacing if out_spacing is None else out_spacing
    warped = _warp_grid(volume.data.astype(np.float64), volume.spacing, transform, out_shape, out_spacing, order=1)
    return Volume3D(warped.astype(volume.data.dtype, copy=False), out_spacing)


def apply_affine_to_mask(mask, transform, out_shape=None, out_spacing=None):
    out_shape = mask.shape if out_shape is None else out_shape
    out_spacing = mask.spacing if out_spacing is None else out_spacing
    warped = _warp_grid(mask.labels, mask.spacing, transform, out_shape, out_spacing, order=0)
    return SegmentationMask(warped, out_spacing)


@dataclass(frozen=True)
class RegistrationConfig:
    levels: tuple = (4, 2, 1)
    bins: int = 32
    max_rotation_deg: float = 15.0
    max_log_scale: float = 0.2
    max_translation_mm: float = 20.0
    max_iter: int = 20
    xtol: float = 1e-3
    ftol: float = 1e-6

    def bounds(self):
        rotation = np.deg2rad(self.max_rotation_deg)
        return (
            [(-rotation, rotation)] * 3
            + [(-self.max_log_scale, self.max_log_scale)] * 3
            + [(-self.max_translation_mm, self.max_translation_mm)] * 3
        )


@dataclass
class _Objective:
    moving: Volume3D
    atlas: Volume3D
    similarity: Similarity
    bins: int
    center: np.ndarray
    scales: np.ndarray
    trace: list = field(default_factory=list)

    def similarity_at(self, parameters):
        transform = AffineTransform.from_parameters(parameters, self.center)
        warped = _warp_grid(
            self.moving.data.astype(np.float64), self.moving.spacing, transform,
            self.atlas.shape, self.atlas.spacing, order=1,
        )
        if self.similarity == Similarity.MI:
            return mutual_information(warped, self.atlas.data, self.bins)
        if np.ptp(warped) == 0:
            # moved entirely outside the field of view
            return -1.0
        return ncc(warped, self.atlas.data)

    def __call__(self, scaled_parameters):
        cost = -self.similarity_at(np.asarray(scaled_parameters) * self.scales)
        self.trace.append(cost)
        if not np.isfinite(cost):
            raise RegistrationDivergedError('non-finite registration cost', self.trace)
        return cost


def _downsample(volume, factor):
    if factor == 1:
        return volume
    return resample(volume, tuple(s * factor for s in volume.spacing))


def register_affine(moving, atlas, loss=Similarity.NCC, config=None):
    '''
    Transform maximising ``loss`` similarity between the warped moving image and the atlas.

    Each pyramid level (coarse to fine) runs a bounded Powell search over the
    9 parameters, started from the previous level's solution. Parameters are
    rescaled to comparable magnitudes (rotations by 0.05 rad, log-scales by
    0.05, translations by one atlas voxel) before the search.
    '''
    config = config or RegistrationConfig()
    loss = Similarity(loss)
    center = np.asarray(atlas.extent_mm, dtype=np.float64) / 2
    scales = np.concatenate([np.full(3, 0.05), np.full(3, 0.05), np.asarray(atlas.spacing)])
    bounds = [(lo / s, hi / s) for (lo, hi), s in zip(config.bounds(), scales)]

    parameters = np.zeros(N_PARAMETERS)
    trace = []
    for factor in config.levels:
        objective = _Objective(
            _downsample(moving, factor), _downsample(atlas, factor),
            loss, config.bins, center, scales, trace,
        )
        result = optimize.minimize(
            objective,
            parameters / scales,
            method='Powell',
            bounds=bounds,
            options={'maxiter': config.max_iter, 'xtol': config.xtol, 'ftol': config.ftol},
        )
        parameters = np.asarray(result.x) * scales
        logger.info('registration level x%d: %s %.6f after %d evaluations', factor, loss.value, -result.fun, result.nfev)

    final = _Objective(moving, atlas, loss, config.bins, center, scales)
    identity_score = final.similarity_at(np.zeros(N_PARAMETERS))
    solution_score = final.similarity_at(parameters)
    if not np.isfinite(solution_score):
        raise RegistrationDivergedError('non-finite similarity at the solution', trace + [solution_score])
    if solution_score < identity_score:
        logger.warning('registration did not improve on identity (%.6f < %.6f); keeping identity', solution_score, identity_score)
        return AffineTransform.identity()
    return AffineTransform.from_parameters(parameters, center)

'''
Conditional zero-one codes that steer the generator and discriminator.

A code is the concatenation [modality | center | plane | flip]:

    modality  one-hot, 2 entries  (t1, t2)
    center    one-hot, 3 entries  (ldn, etz, ukm)
    plane     one-hot, 3 entries  (axial, coronal, sagittal)
    flip      multi-hot, 3 entries (z, y, x)

for a flattened length of 11. ``plane`` names the orientation the 2D input
slice was cut along. The textual form ``modality:center:plane:flips`` (for
example ``t2:ldn:axial:-`` or ``t1:ukm:sag:zx``) is used by CLI flags and
manifest files.
'''
from dataclasses import dataclass
from itertools import product

import numpy as np
import torch
from django.db import models


class Modality(models.TextChoices):
    T1W = 't1', 'T1w'
    T2W = 't2', 'T2w'


class Center(models.TextChoices):
    LDN = 'ldn', 'London'
    ETZ = 'etz', 'Tilburg'
    UKM = 'ukm', 'UK MC-RC'


class Plane(models.TextChoices):
    AXIAL = 'axial', 'Axial'
    CORONAL = 'coronal', 'Coronal'
    SAGITTAL = 'sagittal', 'Sagittal'

    @property
    def axis(self):
        '''Volume axis the plane slices along: axial Z, coronal Y, sagittal X.'''
        return PLANE_AXES[self]

    @property
    def token(self):
        return PLANE_TOKENS[self]


class Axis(models.TextChoices):
    Z = 'z', 'z-axis'
    Y = 'y', 'y-axis'
    X = 'x', 'x-axis'

    @property
    def position(self):
        return AXIS_ORDER.index(self)


MODALITY_ORDER = (Modality.T1W, Modality.T2W)
CENTER_ORDER = (Center.LDN, Center.ETZ, Center.UKM)
PLANE_ORDER = (Plane.AXIAL, Plane.CORONAL, Plane.SAGITTAL)
AXIS_ORDER = (Axis.Z, Axis.Y, Axis.X)

PLANE_AXES = {Plane.AXIAL: 0, Plane.CORONAL: 1, Plane.SAGITTAL: 2}
PLANE_TOKENS = {Plane.AXIAL: 'axial', Plane.CORONAL: 'cor', Plane.SAGITTAL: 'sag'}
PLANE_ALIASES = {
    'axial': Plane.AXIAL, 'ax': Plane.AXIAL,
    'coronal': Plane.CORONAL, 'cor': Plane.CORONAL,
    'sagittal': Plane.SAGITTAL, 'sag': Plane.SAGITTAL,
}

SEGMENTS = (
    ('modality', MODALITY_ORDER),
    ('center', CENTER_ORDER),
    ('plane', PLANE_ORDER),
    ('flip', AXIS_ORDER),
)
CODE_DIM = sum(len(values) for _, values in SEGMENTS)


def _coerce(field, value, choices, vocabulary):
    if isinstance(value, choices):
        return value
    token = str(value).lower()
    for member in vocabulary:
        if token in (member.value, member.label.lower()):
            return member
    allowed = ', '.join(str(v) for v in vocabulary)
    raise ValueError(f"unknown {field} '{value}'; expected one of: {allowed}")


def parse_plane(value):
    if isinstance(value, Plane):
        return value
    try:
        return PLANE_ALIASES[str(value).lower()]
    except KeyError:
        allowed = ', '.join(sorted(PLANE_ALIASES))
        raise ValueError(f"unknown plane '{value}'; expected one of: {allowed}") from None


def parse_flips(value):
    if value in (None, '', '-'):
        return frozenset()
    items = list(value) if isinstance(value, str) else value
    return frozenset(_coerce('flip', item, Axis, AXIS_ORDER) for item in items)


@dataclass(frozen=True)
class ConditionalCode:
    modality: Modality
    center: Center
    plane: Plane
    flips: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'modality', _coerce('modality', self.modality, Modality, MODALITY_ORDER))
        object.__setattr__(self, 'center', _coerce('center', self.center, Center, CENTER_ORDER))
        object.__setattr__(self, 'plane', parse_plane(self.plane))
        object.__setattr__(self, 'flips', parse_flips(self.flips))

    def vector(self):
        '''Flattened zero-one vector in [modality | center | plane | flip] order.'''
        parts = []
        for field, vocabulary in SEGMENTS:
            if field == 'flip':
                parts.extend(1.0 if axis in self.flips else 0.0 for axis in vocabulary)
            else:
                chosen = getattr(self, field)
                parts.extend(1.0 if value == chosen else 0.0 for value in vocabulary)
        return np.asarray(parts, dtype=np.float32)

    def as_tensor(self, dtype=torch.float32, device=None):
        '''Batch-of-one tensor of shape (1, CODE_DIM) for the hypernetworks.'''
        return torch.as_tensor(self.vector(), dtype=dtype, device=device).unsqueeze(0)

    def to_string(self):
        flips = ''.join(axis.value for axis in AXIS_ORDER if axis in self.flips) or '-'
        return f'{self.modality.value}:{self.center.value}:{self.plane.token}:{flips}'

    def replace(self, **changes):
        fields = {
            'modality': self.modality,
            'center': self.center,
            'plane': self.plane,
            'flips': self.flips,
        }
        fields.update(changes)
        return ConditionalCode(**fields)

    def __str__(self):
        return self.to_string()


def build_code(modality, center, plane, flips=()):
    return ConditionalCode(modality=modality, center=center, plane=plane, flips=flips)


def parse_code(text):
    '''Inverse of ``ConditionalCode.to_string``.'''
    parts = str(text).strip().split(':')
    if len(parts) != 4:
        raise ValueError(f"code '{text}' must have the form modality:center:plane:flips")
    modality, center, plane, flips = parts
    return build_code(modality, center, plane, flips)


def decode_vector(vector):
    '''Rebuild a ConditionalCode from its flattened vector, validating every segment.'''
    values = np.asarray(vector, dtype=np.float64).reshape(-1)
    if values.size != CODE_DIM:
        raise ValueError(f'code vector must have length {CODE_DIM}, got {values.size}')
    if not np.all((values == 0) | (values == 1)):
        raise ValueError('code vector may only contain 0 and 1')

    decoded = {}
    start = 0
    for field, vocabulary in SEGMENTS:
        segment = values[start:start + len(vocabulary)]
        start += len(vocabulary)
        if field == 'flip':
            decoded['flips'] = frozenset(axis for axis, bit in zip(vocabulary, segment) if bit)
            continue
        if segment.sum() != 1:
            raise ValueError(f'{field} segment must be one-hot, got {segment.astype(int).tolist()}')
        decoded[field] = vocabulary[int(np.argmax(segment))]
    return ConditionalCode(**decoded)


def enumerate_augmentation_codes(target_modality=Modality.T2W, centers=CENTER_ORDER, planes=PLANE_ORDER):
    '''
    Center x plane codes for style augmentation, flips all zero.

    Centers vary slowest: (ldn, axial), (ldn, coronal), (ldn, sagittal),
    (etz, axial), ... The full default set has nine codes; passing subsets
    gives the restricted augmentations used for ablations.
    '''
    centers = [_coerce('center', c, Center, CENTER_ORDER) for c in centers]
    planes = [parse_plane(p) for p in planes]
    centers = [c for c in CENTER_ORDER if c in centers]
    planes = [p for p in PLANE_ORDER if p in planes]
    return [build_code(target_modality, center, plane) for center, plane in product(centers, planes)]

'''
Dice and average symmetric surface distance (ASSD) per structure.

Surface voxels are foreground voxels with at least one face-adjacent background
neighbour, the grid border counting as background. Distances run between voxel
centres, in millimetres.
'''
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume_io import list_volumes, load_mask

logger = logging.getLogger(__name__)

STRUCTURES = (
    ('VS', frozenset({1, 2})),
    ('Cochlea', frozenset({3})),
    ('Intra-Meatal', frozenset({1})),
    ('Extra-Meatal', frozenset({2})),
)
TABLES = (('VS', 'Cochlea'), ('Intra-Meatal', 'Extra-Meatal'))
EMPTY_MASK_POLICY = (
    'Dice(empty, empty) = 1; Dice(empty, non-empty) = 0; '
    'ASSD is undefined when either mask is empty and is reported as missing'
)
FACE_NEIGHBOURS = ndimage.generate_binary_structure(3, 1)


class UndefinedASSDError(ValueError):
    pass


def _grid(mask):
    return getattr(mask, 'labels', mask)


def _foreground(mask, label_set):
    return np.isin(_grid(mask), list(label_set))


def _check_shapes(pred, gt):
    if _grid(pred).shape != _grid(gt).shape:
        raise ValueError(f'shape mismatch: prediction {_grid(pred).shape}, ground truth {_grid(gt).shape}')


def dice(pred, gt, label_set):
    _check_shapes(pred, gt)
    p = _foreground(pred, label_set)
    g = _foreground(gt, label_set)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def surface(foreground):
    '''Foreground voxels with a face-adjacent background neighbour.'''
    eroded = ndimage.binary_erosion(foreground, structure=FACE_NEIGHBOURS, border_value=0)
    return foreground & ~eroded


def assd(pred, gt, label_set, spacing=None):
    _check_shapes(pred, gt)
    if spacing is None:
        spacing = gt.spacing
    p = _foreground(pred, label_set)
    g = _foreground(gt, label_set)
    if not p.any() or not g.any():
        raise UndefinedASSDError(f'undefined ASSD: empty mask for labels {sorted(label_set)}')
    surface_p = surface(p)
    surface_g = surface(g)
    to_g = ndimage.distance_transform_edt(~surface_g, sampling=spacing)
    to_p = ndimage.distance_transform_edt(~surface_p, sampling=spacing)
    total = to_g[surface_p].sum() + to_p[surface_g].sum()
    return float(total / (surface_p.sum() + surface_g.sum()))


@dataclass
class CaseMetrics:
    case: str
    dice: dict
    assd: dict

    def as_dict(self):
        return {'case': self.case, 'dice': self.dice, 'assd': self.assd}


def evaluate_case(name, pred, gt):
    if not np.allclose(pred.spacing, gt.spacing, rtol=1e-6):
        logger.warning('%s: prediction spacing %s differs from ground truth %s; using the latter', name, pred.spacing, gt.spacing)
    dice_scores, assd_scores = {}, {}
    for structure, label_set in STRUCTURES:
        dice_scores[structure] = dice(pred, gt, label_set)
        try:
            assd_scores[structure] = assd(pred, gt, label_set, gt.spacing)
        except UndefinedASSDError:
            assd_scores[structure] = None
    return CaseMetrics(name, dice_scores, assd_scores)


def _aggregate(values):
    defined = [v for v in values if v is not None]
    if not defined:
        return {'mean': None, 'std': None, 'n': 0}
    return {'mean': float(np.mean(defined)), 'std': float(np.std(defined)), 'n': len(defined)}


@dataclass
class MetricsReport:
    cases: list
    missing_predictions: list = field(default_factory=list)
    missing_ground_truth: list = field(default_factory=list)

    @property
    def complete(self):
        return not (self.missing_predictions or self.missing_ground_truth)

    def summary(self):
        return {
            structure: {
                'dice': _aggregate([case.dice[structure] for case in self.cases]),
                'assd': _aggregate([case.assd[structure] for case in self.cases]),
            }
            for structure, _ in STRUCTURES
        }

    def to_json(self):
        return {
            'empty_mask_policy': EMPTY_MASK_POLICY,
            'aggregate': 'mean and population standard deviation over cases with a defined value',
            'structures': {name: sorted(labels) for name, labels in STRUCTURES},
            'cases': [case.as_dict() for case in self.cases],
            'summary': self.summary(),
            'missing_predictions': self.missing_predictions,
            'missing_ground_truth': self.missing_ground_truth,
        }

    def format_table(self):
        summary = self.summary()
        width = max([len('mean ± std')] + [len(case.case) for case in self.cases])
        lines = [f'# {EMPTY_MASK_POLICY}']

        def cell(value):
            return f'{"-":>14}' if value is None else f'{value:>14.3f}'

        def spread(stats):
            if stats['mean'] is None:
                return f'{"-":>14}'
            return f'{stats["mean"]:.3f}±{stats["std"]:.3f}'.rjust(14)

        for group in TABLES:
            lines.append('')
            lines.append(' ' * width + ''.join(f'  {name:^28}' for name in group))
            lines.append(' ' * width + ''.join(f'  {"Dice":>14}{"ASSD (mm)":>14}' for _ in group))
            for case in self.cases:
                row = ''.join(f'  {cell(case.dice[name])}{cell(case.assd[name])}' for name in group)
                lines.append(case.case.ljust(width) + row)
            row = ''.join(f'  {spread(summary[name]["dice"])}{spread(summary[name]["assd"])}' for name in group)
            lines.append('mean ± std'.ljust(width) + row)
        if not self.complete:
            lines.append('')
            if self.missing_predictions:
                lines.append(f'missing predictions: {", ".join(self.missing_predictions)}')
            if self.missing_ground_truth:
                lines.append(f'missing ground truth: {", ".join(self.missing_ground_truth)}')
        return '\n'.join(lines) + '\n'

    def write(self, report_path):
        '''Write ``<report>.json`` and ``<report>.txt``; returns both paths.'''
        base = Path(report_path)
        if base.suffix in ('.json', '.txt'):
            base = base.with_suffix('')
        base.parent.mkdir(parents=True, exist_ok=True)
        json_path = base.with_name(base.name + '.json')
        text_path = base.with_name(base.name + '.txt')
        json_path.write_text(json.dumps(self.to_json(), indent=2) + '\n', encoding='utf-8')
        text_path.write_text(self.format_table(), encoding='utf-8')
        return json_path, text_path


def evaluate(pred_dir, gt_dir):
    '''Metrics for every case present in both directories; unmatched case ids are listed.'''
    predictions = list_volumes(pred_dir)
    truths = list_volumes(gt_dir)
    missing_predictions = sorted(set(truths) - set(predictions))
    missing_ground_truth = sorted(set(predictions) - set(truths))
    for name in missing_predictions:
        logger.error('no prediction for case %s', name)
    for name in missing_ground_truth:
        logger.error('no ground truth for case %s', name)
    cases = []
    for name in sorted(set(predictions) & set(truths)):
        cases.append(evaluate_case(name, load_mask(predictions[name]), load_mask(truths[name])))
        logger.debug('evaluated %s', name)
    return MetricsReport(cases, missing_predictions, missing_ground_truth)

'''
Run configuration: ``settings.FINEGRAIN`` defaults, overridden section by
section by a JSON file, then by command-line flags, validated by the
serializers in ``adaptation.serializers``.
'''
import copy
import json
import logging
from pathlib import Path

from django.conf import settings
from rest_framework import serializers as drf_serializers

from .serializers import (
    DiscriminatorConfigSerializer,
    GeneratorConfigSerializer,
    PreprocessConfigSerializer,
    RegistrationConfigSerializer,
    SegConfigSerializer,
    TrainConfigSerializer,
)

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG_FILE = 'effective_config.json'
SECTIONS = {
    'preprocess': PreprocessConfigSerializer,
    'registration': RegistrationConfigSerializer,
    'generator': GeneratorConfigSerializer,
    'discriminator': DiscriminatorConfigSerializer,
    'train_gan': TrainConfigSerializer,
    'segmentation': SegConfigSerializer,
}
# sections whose dataclass carries the run seed
SEEDED_SECTIONS = ('train_gan', 'segmentation')


def read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'no such config file: {path}')
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise drf_serializers.ValidationError(f'{path} is not valid JSON: {exc}') from exc
    if not isinstance(data, dict):
        raise drf_serializers.ValidationError(f'{path} must hold a JSON object')
    return data


def effective_config(path=None, seed=None, overrides=None):
    '''
    Merged configuration for one run.

    ``seed`` (the ``--seed`` flag) wins over a ``seed`` key in the file, which
    wins over the default. ``overrides`` maps section -> {field: value}.
    '''
    merged = copy.deepcopy(settings.FINEGRAIN)
    user = read_config_file(path) if path else {}
    unknown = sorted(set(user) - set(SECTIONS) - {'seed'})
    if unknown:
        raise drf_serializers.ValidationError(f'unknown config sections: {", ".join(unknown)}')

    for source in (user, overrides or {}):
        for section, values in source.items():
            if section == 'seed':
                merged['seed'] = values
                continue
            if not isinstance(values, dict):
                raise drf_serializers.ValidationError(f'config section {section} must be a JSON object')
            fields = set(SECTIONS[section]().fields) - {'seed'}
            stray = sorted(set(values) - fields)
            if stray:
                raise drf_serializers.ValidationError(f'unknown keys in {section}: {", ".join(stray)}')
            merged[section].update(values)

    if seed is not None:
        merged['seed'] = seed
    if isinstance(merged['seed'], bool) or not isinstance(merged['seed'], int) or merged['seed'] < 0:
        raise drf_serializers.ValidationError(f'seed must be a non-negative integer, got {merged["seed"]!r}')
    for section in SEEDED_SECTIONS:
        merged[section]['seed'] = merged['seed']
    return merged


def build(section, merged):
    '''Validated config dataclass for ``section``.'''
    serializer = SECTIONS[section](data=merged[section])
    if not serializer.is_valid():
        raise drf_serializers.ValidationError({section: serializer.errors})
    return serializer.save()


def write_effective_config(merged, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / EFFECTIVE_CONFIG_FILE
    path.write_text(json.dumps(merged, indent=2, sort_keys=True) + '\n')
    logger.debug('effective config written to %s', path)
    return path

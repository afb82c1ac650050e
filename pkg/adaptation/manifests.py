'''
JSON manifests that connect the pipeline stages.

Source manifests list ``{volume_path, mask_path?, modality, center}`` rows;
augmented manifests list ``{image_path, mask_path, code_string}`` rows. Paths
are stored relative to the manifest's directory and resolved against it on load.
'''
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from rest_framework import serializers as drf_serializers

from .conditioning import Center, ConditionalCode, Modality
from .serializers import AugmentedEntrySerializer, SourceEntrySerializer
from .volume_io import case_id

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceEntry:
    volume_path: Path
    modality: Modality
    center: Center
    mask_path: Optional[Path] = None

    @property
    def case_id(self):
        return case_id(self.volume_path)

    @property
    def labeled(self):
        return self.mask_path is not None


@dataclass(frozen=True)
class AugmentedEntry:
    image_path: Path
    mask_path: Path
    code: ConditionalCode


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'no such manifest: {path}')
    try:
        rows = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise drf_serializers.ValidationError(f'{path} is not valid JSON: {exc}') from exc
    if not isinstance(rows, list) or not rows:
        raise drf_serializers.ValidationError(f'{path} must hold a non-empty JSON list')
    return rows


def _resolve(base, value):
    if value is None:
        return None
    candidate = Path(value)
    return candidate if candidate.is_absolute() else (base / candidate)


def _relative(base, path):
    return Path(os.path.relpath(Path(path).resolve(), Path(base).resolve())).as_posix()


def load_source_manifest(path):
    path = Path(path)
    serializer = SourceEntrySerializer(data=_read_rows(path), many=True)
    serializer.is_valid(raise_exception=True)
    base = path.parent
    return [
        SourceEntry(
            volume_path=_resolve(base, row['volume_path']),
            modality=Modality(row['modality']),
            center=Center(row['center']),
            mask_path=_resolve(base, row.get('mask_path')),
        )
        for row in serializer.validated_data
    ]


def load_augmented_manifest(path):
    path = Path(path)
    serializer = AugmentedEntrySerializer(data=_read_rows(path), many=True)
    serializer.is_valid(raise_exception=True)
    base = path.parent
    return [
        AugmentedEntry(
            image_path=_resolve(base, row['image_path']),
            mask_path=_resolve(base, row['mask_path']),
            code=row['code_string'],
        )
        for row in serializer.validated_data
    ]


def write_source_manifest(entries, path):
    path = Path(path)
    base = path.parent
    rows = []
    for entry in entries:
        row = {
            'volume_path': _relative(base, entry.volume_path),
            'modality': entry.modality.value,
            'center': entry.center.value,
        }
        if entry.mask_path is not None:
            row['mask_path'] = _relative(base, entry.mask_path)
        rows.append(row)
    return _write_rows(rows, path)


def write_augmented_manifest(entries, path):
    path = Path(path)
    base = path.parent
    rows = [
        {
            'image_path': _relative(base, entry.image_path),
            'mask_path': _relative(base, entry.mask_path),
            'code_string': entry.code.to_string(),
        }
        for entry in entries
    ]
    return _write_rows(rows, path)


def _write_rows(rows, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2) + '\n')
    logger.info('wrote manifest %s with %d rows', path, len(rows))
    return path

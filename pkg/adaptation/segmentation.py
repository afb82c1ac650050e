'''
Compact 3D U-shaped segmenter trained on the augmented manifest.

Training draws fixed-size patches, biased towards foreground, and optimises
soft-Dice over the foreground classes plus cross-entropy. Whole source cases
are held out for the per-epoch validation Dice, so the nine styled variants
of a source never straddle the split.
'''
import csv
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .metrics import dice
from .nn_core import ConvBlock3d, NonFiniteLossError, load_checkpoint, restore_parameters, save_checkpoint, seed_everything
from .preprocessing import crop_array
from .volume_io import LABEL_VALUES, SegmentationMask, load_mask, load_volume

logger = logging.getLogger(__name__)

N_CLASSES = len(LABEL_VALUES)
FOREGROUND_CLASSES = tuple(LABEL_VALUES[1:])
POOLING_FACTOR = 4
LOG_COLUMNS = ('epoch', 'dice_class1', 'dice_class2', 'dice_class3', 'loss')
CHECKPOINT_FILE = 'segmenter.pt'
METRICS_LOG_FILE = 'metrics_log.csv'


@dataclass(frozen=True)
class SegConfig:
    base_channels: int = 8
    patch_size: tuple = (32, 32, 32)
    foreground_ratio: float = 2 / 3
    patches_per_volume: int = 2
    batch_size: int = 2
    epochs: int = 50
    learning_rate: float = 1e-3
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'patch_size', tuple(int(n) for n in self.patch_size))
        if len(self.patch_size) != 3 or any(n % POOLING_FACTOR for n in self.patch_size):
            raise ValueError(f'patch extents must be three multiples of {POOLING_FACTOR}, got {self.patch_size}')
        if not 0.0 <= self.foreground_ratio <= 1.0:
            raise ValueError(f'foreground_ratio must lie in [0, 1], got {self.foreground_ratio}')

    def to_dict(self):
        return {**asdict(self), 'patch_size': list(self.patch_size)}


class UNet3d(nn.Module):
    '''Three resolution levels, skip connections by concatenation, per-voxel class logits.'''

    def __init__(self, base_channels=8, n_classes=N_CLASSES, in_channels=1):
        super().__init__()
        c = base_channels
        self.enc1 = ConvBlock3d(in_channels, c)
        self.enc2 = ConvBlock3d(c, 2 * c)
        self.bottom = ConvBlock3d(2 * c, 4 * c)
        self.pool = nn.MaxPool3d(2)
        self.up2 = nn.ConvTranspose3d(4 * c, 2 * c, 2, stride=2)
        self.dec2 = ConvBlock3d(4 * c, 2 * c)
        self.up1 = nn.ConvTranspose3d(2 * c, c, 2, stride=2)
        self.dec1 = ConvBlock3d(2 * c, c)
        self.head = nn.Conv3d(c, n_classes, 1)

    def forward(self, x):
        if x.dim() != 5:
            raise ValueError(f'expected a (batch, channel, D, H, W) tensor, got shape {tuple(x.shape)}')
        if any(n % POOLING_FACTOR for n in x.shape[-3:]):
            raise ValueError(f'extent not divisible by {POOLING_FACTOR}: {tuple(x.shape[-3:])}')
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bottom(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(b), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


def soft_dice_ce_loss(logits, target, eps=1e-5):
    '''
    Cross-entropy plus (1 - mean soft Dice over the foreground classes present in ``target``).

    Classes absent from the batch are left out of the Dice mean; a batch of
    pure background is scored by cross-entropy alone.
    '''
    target = target.long()
    ce = F.cross_entropy(logits, target)
    probs = logits.softmax(dim=1)
    onehot = F.one_hot(target, logits.shape[1]).permute(0, 4, 1, 2, 3).to(probs)
    dims = (0, 2, 3, 4)
    intersection = (probs * onehot).sum(dims)[1:]
    denominator = probs.sum(dims)[1:] + onehot.sum(dims)[1:]
    soft_dice = (2 * intersection + eps) / (denominator + eps)
    present = onehot.sum(dims)[1:] > 0
    if not present.any():
        return ce
    return ce + 1 - soft_dice[present].mean()


@dataclass(frozen=True, eq=False)
class Segmenter:
    model: UNet3d
    spacing: tuple
    volume_shape: tuple
    patch_size: tuple

    def check_compatible(self, volume):
        if tuple(volume.shape) != tuple(self.volume_shape):
            raise ValueError(f'volume shape {volume.shape} differs from the training shape {tuple(self.volume_shape)}')
        if not np.allclose(volume.spacing, self.spacing, rtol=1e-6, atol=1e-9):
            raise ValueError(f'volume spacing {volume.spacing} differs from the training spacing {tuple(self.spacing)}')

    @torch.no_grad()
    def predict(self, volume):
        self.check_compatible(volume)
        model = self.model.eval()
        weight = next(model.parameters())
        padded_shape = tuple(-(-n // p) * p for n, p in zip(volume.shape, self.patch_size))
        padded = crop_array(volume.data.astype(np.float32, copy=False), (0, 0, 0), padded_shape)
        labels = np.zeros(padded_shape, dtype=np.uint8)
        pz, py, px = self.patch_size
        for z in range(0, padded_shape[0], pz):
            for y in range(0, padded_shape[1], py):
                for x in range(0, padded_shape[2], px):
                    tile = torch.as_tensor(padded[z:z + pz, y:y + py, x:x + px], dtype=weight.dtype)[None, None]
                    logits = model(tile.to(weight.device))
                    labels[z:z + pz, y:y + py, x:x + px] = logits.argmax(dim=1)[0].cpu().numpy()
        nz, ny, nx = volume.shape
        return SegmentationMask(labels[:nz, :ny, :nx], volume.spacing)


def save_segmenter(segmenter, path, config):
    archive_config = {
        **config.to_dict(),
        'n_classes': N_CLASSES,
        'spacing': list(segmenter.spacing),
        'volume_shape': list(segmenter.volume_shape),
    }
    return save_checkpoint(segmenter.model, path, 'segmenter', archive_config)


def load_segmenter(path):
    archive = load_checkpoint(path, kind='segmenter')
    config = archive['config']
    model = UNet3d(config['base_channels'], config['n_classes'])
    restore_parameters(model, archive)
    return Segmenter(model.eval(), tuple(config['spacing']), tuple(config['volume_shape']), tuple(config['patch_size']))


def predict(volume, checkpoint):
    '''Label every voxel of ``volume`` with the argmax class of a trained segmenter.'''
    segmenter = checkpoint if isinstance(checkpoint, Segmenter) else load_segmenter(checkpoint)
    return segmenter.predict(volume)


class PatchSampler:
    '''
    Images and (shared) masks of an augmented manifest, with foreground-biased patch draws.

    A foreground draw first picks one of the classes present in the mask
    uniformly, then a voxel of that class, so small structures are centred as
    often as large ones.
    '''

    def __init__(self, entries, config):
        if not entries:
            raise ValueError('empty manifest: nothing to train on')
        self.entries = list(entries)
        self.config = config
        self.images = []
        self.masks = {}
        self.foreground = {}
        for entry in self.entries:
            volume = load_volume(entry.image_path)
            key = str(entry.mask_path)
            if key not in self.masks:
                mask = load_mask(entry.mask_path)
                self.masks[key] = mask
                flat = mask.labels.ravel()
                self.foreground[key] = {
                    int(label): np.flatnonzero(flat == label) for label in np.unique(flat) if label != 0
                }
            self.masks[key].check_pairs_with(volume)
            self.images.append(volume)
        first = self.images[0]
        for entry, volume in zip(self.entries, self.images):
            if volume.shape != first.shape or not np.allclose(volume.spacing, first.spacing):
                raise ValueError(
                    f'{entry.image_path}: shape {volume.shape} at spacing {volume.spacing} differs from '
                    f'{first.shape} at {first.spacing}; preprocess every case identically'
                )
        self.spacing = first.spacing
        self.volume_shape = first.shape

    def source_of(self, index):
        return str(self.entries[index].mask_path)

    def mask_of(self, index):
        return self.masks[self.source_of(index)]

    def draw(self, index, rng):
        '''One (image, labels) patch pair from row ``index``.'''
        shape = self.volume_shape
        classes = self.foreground[self.source_of(index)]
        if classes and rng.random() < self.config.foreground_ratio:
            voxels = classes[sorted(classes)[int(rng.integers(len(classes)))]]
            centre = np.unravel_index(voxels[int(rng.integers(voxels.size))], shape)
        else:
            centre = tuple(int(rng.integers(n)) for n in shape)
        origin = tuple(int(c) - p // 2 for c, p in zip(centre, self.config.patch_size))
        image = crop_array(self.images[index].data.astype(np.float32, copy=False), origin, self.config.patch_size)
        labels = crop_array(self.mask_of(index).labels, origin, self.config.patch_size)
        return image, labels


def split_by_source(sampler, fraction, seed):
    '''Row indices for (training, validation); every row of a source lands on the same side.'''
    sources = sorted({sampler.source_of(i) for i in range(len(sampler.entries))})
    n_val = int(round(fraction * len(sources)))
    n_val = min(n_val, len(sources) - 1)
    if n_val <= 0:
        logger.warning('too few sources for a held-out split; validating on the training sources')
        every = list(range(len(sampler.entries)))
        return every, every
    rng = np.random.default_rng([seed])
    held_out = {sources[i] for i in rng.permutation(len(sources))[:n_val]}
    train = [i for i in range(len(sampler.entries)) if sampler.source_of(i) not in held_out]
    val = [i for i in range(len(sampler.entries)) if sampler.source_of(i) in held_out]
    return train, val


@dataclass
class SegRun:
    checkpoint_path: Path
    log_path: Path
    consumed: Counter = field(default_factory=Counter)
    train_rows: list = field(default_factory=list)
    validation_rows: list = field(default_factory=list)


def validation_dice(segmenter, sampler, rows):
    '''Mean Dice per foreground class over whole validation volumes.'''
    scores = {label: [] for label in FOREGROUND_CLASSES}
    for index in rows:
        prediction = segmenter.predict(sampler.images[index])
        truth = sampler.mask_of(index)
        for label in FOREGROUND_CLASSES:
            scores[label].append(dice(prediction, truth, {label}))
    return [float(np.mean(scores[label])) for label in FOREGROUND_CLASSES]


def train_seg(entries, config=None, out_dir='.'):
    '''
    Train the segmenter on augmented manifest ``entries``; writes
    ``segmenter.pt`` and ``metrics_log.csv`` into ``out_dir``.
    '''
    config = config or SegConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)

    sampler = PatchSampler(entries, config)
    train_rows, val_rows = split_by_source(sampler, config.validation_fraction, config.seed)
    logger.info('segmentation: %d training rows, %d validation rows', len(train_rows), len(val_rows))

    model = UNet3d(config.base_channels)
    segmenter = Segmenter(model, sampler.spacing, sampler.volume_shape, config.patch_size)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    run = SegRun(out_dir / CHECKPOINT_FILE, out_dir / METRICS_LOG_FILE, train_rows=train_rows, validation_rows=val_rows)

    step = 0
    with open(run.log_path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(LOG_COLUMNS)
        for epoch in range(config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            patches = []
            for position in rng.permutation(len(train_rows)):
                index = train_rows[position]
                entry = sampler.entries[index]
                run.consumed[(Path(entry.mask_path).name, entry.code.to_string())] += 1
                patches.extend(sampler.draw(index, rng) for _ in range(config.patches_per_volume))

            model.train()
            losses = []
            for start in range(0, len(patches), config.batch_size):
                batch = patches[start:start + config.batch_size]
                x = torch.from_numpy(np.stack([image for image, _ in batch]))[:, None]
                y = torch.from_numpy(np.stack([labels for _, labels in batch]).astype(np.int64))
                loss = soft_dice_ce_loss(model(x), y)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(step, 'segmentation loss', float(loss))
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                losses.append(float(loss))
                step += 1

            scores = validation_dice(segmenter, sampler, val_rows)
            mean_loss = float(np.mean(losses)) if losses else float('nan')
            writer.writerow([epoch] + [repr(s) for s in scores] + [repr(mean_loss)])
            handle.flush()
            logger.info(
                'epoch %d/%d: loss %.4f dice %s',
                epoch + 1, config.epochs, mean_loss, ' '.join(f'{s:.3f}' for s in scores),
            )

    save_segmenter(segmenter, run.checkpoint_path, config)
    logger.info('segmenter written to %s', run.checkpoint_path)
    return run

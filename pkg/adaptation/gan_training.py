'''
Adversarial training of the conditional generator.

Each step alternates a discriminator update (real slices with their true
codes against translated slices with their target codes, least-squares loss)
and a generator update (least-squares adversarial loss plus ``lambda_rec``
times the L1 self-reconstruction ``|G(x, true_code) - x|``). A nonzero
``lambda_cyc`` adds the cycle term ``|G(G(x, target_code), true_code) - x|``
that ties each translation to the anatomy of its input.

One epoch visits every slice of every manifest volume along all three planes
once, in an order shuffled from ``(seed, epoch)``. Target codes keep the
slice's plane and flips and draw modality x center uniformly.
'''
import csv
import logging
from dataclasses import dataclass
from itertools import islice
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .conditioning import AXIS_ORDER, CENTER_ORDER, MODALITY_ORDER, PLANE_ORDER, build_code
from .discriminator import REDUCTION, Discriminator, DiscriminatorConfig, save_discriminator
from .generator import Generator, GeneratorConfig, save_generator
from .nn_core import NonFiniteLossError, load_checkpoint, seed_everything
from .volume_io import load_volume

logger = logging.getLogger(__name__)

LOG_COLUMNS = ('step', 'epoch', 'd_loss', 'g_adv', 'g_rec', 'lr')
STATE_FILE = 'training_state.pt'
GENERATOR_FILE = 'generator.pt'
DISCRIMINATOR_FILE = 'discriminator.pt'
LOSS_LOG_FILE = 'loss_log.csv'


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    betas: tuple = (0.5, 0.999)
    epochs: int = 1000
    batch_size: int = 1
    lambda_adv: float = 1.0
    lambda_rec: float = 10.0
    lambda_cyc: float = 0.0
    max_steps: Optional[int] = None
    checkpoint_every: int = 10
    flip_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f'learning_rate must be positive, got {self.learning_rate}')
        if min(self.lambda_adv, self.lambda_rec, self.lambda_cyc) < 0:
            raise ValueError('loss weights must be >= 0')
        object.__setattr__(self, 'betas', tuple(self.betas))


@dataclass(frozen=True, eq=False)
class StyleSample:
    slice2d: np.ndarray
    true_code: object

    def __post_init__(self):
        data = np.ascontiguousarray(self.slice2d, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f'style samples are 2D slices, got shape {data.shape}')
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError('style sample intensities must lie in [0, 1]')
        object.__setattr__(self, 'slice2d', data)


@dataclass(frozen=True)
class LossReport:
    step: int
    epoch: int
    d_loss: float
    g_adv: float
    g_rec: float
    lr: float
    g_cyc: float = 0.0

    def as_row(self):
        return [self.step, self.epoch, repr(self.d_loss), repr(self.g_adv), repr(self.g_rec), repr(self.lr)]


def least_squares_loss(scores, target):
    return torch.mean((scores - target) ** 2)


def _batch(samples, codes, like):
    x = torch.stack([torch.from_numpy(sample.slice2d) for sample in samples])[:, None].to(like)
    code = torch.stack([torch.from_numpy(c.vector()) for c in codes]).to(like)
    return x, code


def _checked(step, component, value):
    if not torch.isfinite(value):
        raise NonFiniteLossError(step, component, float(value))
    return value


class GanTrainer:
    def __init__(self, generator, discriminator, config):
        self.generator = generator
        self.discriminator = discriminator
        self.config = config
        self.opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate, betas=config.betas)
        self.opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.learning_rate, betas=config.betas)
        self.step_index = 0

    def gan_step(self, batch, target_codes, epoch=0, update_generator=True):
        '''One discriminator update followed by one generator update.'''
        if not isinstance(batch, (list, tuple)):
            batch, target_codes = [batch], [target_codes]
        if len(batch) != len(target_codes):
            raise ValueError(f'{len(batch)} samples but {len(target_codes)} target codes')
        like = next(self.generator.parameters())
        x, true_code = _batch(batch, [sample.true_code for sample in batch], like)
        _, target_code = _batch(batch, target_codes, like)
        step = self.step_index

        self.generator.train()
        self.discriminator.train()

        with torch.no_grad():
            fake = self.generator(x, target_code)
        d_real = self.discriminator(x, true_code)
        d_fake = self.discriminator(fake, target_code)
        d_loss = _checked(step, 'd_loss', 0.5 * (least_squares_loss(d_real, 1.0) + least_squares_loss(d_fake, 0.0)))
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        self.discriminator.requires_grad_(False)
        try:
            with torch.set_grad_enabled(update_generator):
                fake = self.generator(x, target_code)
                g_adv = _checked(step, 'g_adv', least_squares_loss(self.discriminator(fake, target_code), 1.0))
                g_rec = _checked(step, 'g_rec', F.l1_loss(self.generator(x, true_code), x))
                g_cyc = torch.zeros((), device=x.device)
                if self.config.lambda_cyc > 0:
                    # back to the source style must give the input again
                    g_cyc = _checked(step, 'g_cyc', F.l1_loss(self.generator(fake, true_code), x))
            if update_generator:
                total = (
                    self.config.lambda_adv * g_adv
                    + self.config.lambda_rec * g_rec
                    + self.config.lambda_cyc * g_cyc
                )
                self.opt_g.zero_grad(set_to_none=True)
                total.backward()
                self.opt_g.step()
        finally:
            self.discriminator.requires_grad_(True)

        self.step_index += 1
        return LossReport(
            step=step,
            epoch=epoch,
            d_loss=float(d_loss),
            g_adv=float(g_adv),
            g_rec=float(g_rec),
            lr=self.config.learning_rate,
            g_cyc=float(g_cyc),
        )

    def state_dict(self):
        return {
            'generator': self.generator.state_dict(),
            'discriminator': self.discriminator.state_dict(),
            'opt_g': self.opt_g.state_dict(),
            'opt_d': self.opt_d.state_dict(),
            'step': self.step_index,
        }

    def load_state_dict(self, state):
        self.generator.load_state_dict(state['generator'])
        self.discriminator.load_state_dict(state['discriminator'])
        self.opt_g.load_state_dict(state['opt_g'])
        self.opt_d.load_state_dict(state['opt_d'])
        self.step_index = int(state['step'])


@torch.no_grad()
def discriminator_accuracy(generator, discriminator, samples, target_codes):
    '''Fraction of decisions the discriminator gets right, thresholding mean patch scores at 0.5.'''
    like = next(generator.parameters())
    x, true_code = _batch(samples, [sample.true_code for sample in samples], like)
    _, target_code = _batch(samples, target_codes, like)
    fake = generator(x, target_code)
    real_scores = discriminator(x, true_code).mean(dim=(1, 2, 3))
    fake_scores = discriminator(fake, target_code).mean(dim=(1, 2, 3))
    correct = (real_scores > 0.5).sum() + (fake_scores < 0.5).sum()
    return float(correct) / (2 * len(samples))


class StyleSliceDataset:
    '''All slices of the manifest volumes along the three planes, with their true codes.'''

    def __init__(self, entries, flip_probability=0.0):
        if not entries:
            raise ValueError('empty manifest: nothing to train on')
        self.entries = list(entries)
        self.flip_probability = flip_probability
        self.volumes = []
        for entry in self.entries:
            volume = load_volume(entry.volume_path)
            if volume.data.min() < 0 or volume.data.max() > 1:
                raise ValueError(f'{entry.volume_path} is not normalised to [0, 1]; run preprocess first')
            for plane in PLANE_ORDER:
                extents = [n for axis, n in enumerate(volume.shape) if axis != plane.axis]
                if any(n % REDUCTION for n in extents):
                    raise ValueError(f'{entry.volume_path}: {plane.value} slices of {extents} are not divisible by {REDUCTION}')
            self.volumes.append(volume.data.astype(np.float32, copy=False))
        self.index = [
            (volume_index, plane, slice_index)
            for volume_index, data in enumerate(self.volumes)
            for plane in PLANE_ORDER
            for slice_index in range(data.shape[plane.axis])
        ]
        logger.info('style dataset: %d volumes, %d slices', len(self.volumes), len(self.index))

    def __len__(self):
        return len(self.index)

    def plane_slice(self, volume_index, plane, slice_index, flips=frozenset()):
        '''Slice of the volume after flipping it along ``flips``.'''
        data = self.volumes[volume_index]
        axis = plane.axis
        flipped = {a.position for a in flips}
        if axis in flipped:
            slice_index = data.shape[axis] - 1 - slice_index
        plane_slice = np.take(data, slice_index, axis=axis)
        in_plane = tuple(a if a < axis else a - 1 for a in sorted(flipped) if a != axis)
        return np.flip(plane_slice, axis=in_plane).copy() if in_plane else plane_slice

    def epoch(self, seed, epoch):
        '''Yield (StyleSample, target_code) pairs in the deterministic order for ``epoch``.'''
        rng = np.random.default_rng([seed, epoch])
        styles = [(m, c) for m in MODALITY_ORDER for c in CENTER_ORDER]
        for position in rng.permutation(len(self.index)):
            volume_index, plane, slice_index = self.index[position]
            draws = rng.random(len(AXIS_ORDER))
            flips = frozenset(axis for axis, draw in zip(AXIS_ORDER, draws) if draw < self.flip_probability)
            target_modality, target_center = styles[int(rng.integers(len(styles)))]
            entry = self.entries[volume_index]
            true_code = build_code(entry.modality, entry.center, plane, flips)
            target_code = build_code(target_modality, target_center, plane, flips)
            yield StyleSample(self.plane_slice(volume_index, plane, slice_index, flips), true_code), target_code


@dataclass(frozen=True)
class GanRun:
    generator_path: Path
    discriminator_path: Path
    log_path: Path
    steps: int


def _save_all(trainer, out_dir, epochs_done, epoch_position=0):
    save_generator(trainer.generator, out_dir / GENERATOR_FILE)
    save_discriminator(trainer.discriminator, out_dir / DISCRIMINATOR_FILE)
    state = trainer.state_dict()
    state.update({
        'format_version': 1,
        'kind': 'training_state',
        'epochs_done': epochs_done,
        'epoch_position': epoch_position,
    })
    torch.save(state, out_dir / STATE_FILE)


def train_gan(entries, config=None, generator_config=None, discriminator_config=None, out_dir='.', resume=False):
    '''
    Train generator and discriminator on the manifest ``entries``.

    Writes ``generator.pt``, ``discriminator.pt``, ``training_state.pt`` and
    ``loss_log.csv`` into ``out_dir``. The training state records the finished
    epochs and how many samples of the current epoch were consumed, so
    ``resume`` continues with exactly the samples an uninterrupted run would
    have seen next.
    '''
    config = config or TrainConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)

    dataset = StyleSliceDataset(entries, config.flip_probability)
    generator = Generator(generator_config or GeneratorConfig())
    discriminator = Discriminator(discriminator_config or DiscriminatorConfig())
    trainer = GanTrainer(generator, discriminator, config)

    log_path = out_dir / LOSS_LOG_FILE
    state_path = out_dir / STATE_FILE
    epoch, position = 0, 0
    if resume and state_path.exists():
        state = load_checkpoint(state_path, kind='training_state')
        trainer.load_state_dict(state)
        epoch = int(state['epochs_done'])
        position = int(state.get('epoch_position', 0))
        logger.info('resuming at epoch %d, sample %d, step %d', epoch, position, trainer.step_index)
        if epoch >= config.epochs or (config.max_steps is not None and trainer.step_index >= config.max_steps):
            logger.info('training already completed in %s', out_dir)
            return GanRun(out_dir / GENERATOR_FILE, out_dir / DISCRIMINATOR_FILE, log_path, trainer.step_index)
        _truncate_log(log_path, trainer.step_index)
    else:
        with open(log_path, 'w', newline='') as handle:
            csv.writer(handle).writerow(LOG_COLUMNS)

    done = config.max_steps is not None and trainer.step_index >= config.max_steps
    with open(log_path, 'a', newline='') as handle:
        writer = csv.writer(handle)
        while epoch < config.epochs and not done:
            totals = np.zeros(4)
            steps_in_epoch = 0
            pending = []
            for sample, target in islice(dataset.epoch(config.seed, epoch), position, None):
                position += 1
                pending.append((sample, target))
                if len(pending) < config.batch_size:
                    continue
                report = trainer.gan_step([s for s, _ in pending], [t for _, t in pending], epoch=epoch)
                pending = []
                writer.writerow(report.as_row())
                totals += (report.d_loss, report.g_adv, report.g_rec, report.g_cyc)
                steps_in_epoch += 1
                if config.max_steps is not None and trainer.step_index >= config.max_steps:
                    done = True
                    break
            handle.flush()
            if steps_in_epoch:
                d_mean, adv_mean, rec_mean, cyc_mean = totals / steps_in_epoch
                logger.info(
                    'epoch %d/%d: d_loss %.4f g_adv %.4f g_rec %.4f g_cyc %.4f',
                    epoch + 1, config.epochs, d_mean, adv_mean, rec_mean, cyc_mean,
                )
            if position < len(dataset):
                # stopped inside the epoch
                break
            epoch, position = epoch + 1, 0
            if epoch % config.checkpoint_every == 0:
                _save_all(trainer, out_dir, epoch)

    _save_all(trainer, out_dir, epoch, position)
    logger.info('GAN training finished after %d steps', trainer.step_index)
    return GanRun(out_dir / GENERATOR_FILE, out_dir / DISCRIMINATOR_FILE, log_path, trainer.step_index)


def _truncate_log(log_path, steps):
    '''Drop log rows written after the last checkpoint.'''
    if not log_path.exists():
        with open(log_path, 'w', newline='') as handle:
            csv.writer(handle).writerow(LOG_COLUMNS)
        return
    with open(log_path, newline='') as handle:
        rows = list(csv.reader(handle))
    with open(log_path, 'w', newline='') as handle:
        csv.writer(handle).writerows([list(LOG_COLUMNS)] + rows[1:steps + 1])

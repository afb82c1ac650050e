'''
Seq2Seq conditional generator: a plain convolutional encoder and a HyperDecoder
whose every convolution is a HyperConv2d driven by the conditional code.

Encoder, for channel ladder (c0, c1, c2, c3) with c2 == c3::

    conv7x7(in -> c0) -> conv3x3/2(c0 -> c1) -> conv3x3/2(c1 -> c2) -> n x residual(c3)

The decoder mirrors it with nearest-neighbour upsampling in place of the
strided convolutions and a sigmoid on the output, so slices come back in [0, 1].
'''
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import CODE_DIM
from .nn_core import (
    HyperConv2d,
    HyperResidualBlock,
    ResidualBlock,
    code_tensor,
    load_checkpoint,
    restore_parameters,
    save_checkpoint,
)
from .preprocessing import restack, slice_volume

logger = logging.getLogger(__name__)

DOWNSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class GeneratorConfig:
    channels: tuple = (64, 128, 256, 256)
    n_residual_blocks: int = 6
    in_channels: int = 1
    out_channels: int = 1
    code_dim: int = CODE_DIM

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))
        if len(self.channels) != 4:
            raise ValueError(f'channel ladder must have 4 entries, got {len(self.channels)}')
        if self.channels[2] != self.channels[3]:
            raise ValueError('residual blocks run at the last downsampling width: channels[2] must equal channels[3]')
        if min(self.channels) < 1 or self.n_residual_blocks < 0:
            raise ValueError('channels must be >= 1 and n_residual_blocks >= 0')

    @classmethod
    def desk_scale(cls, **overrides):
        return cls(**{'channels': (8, 16, 32, 32), **overrides})

    def to_dict(self):
        return {**asdict(self), 'channels': list(self.channels)}


def parameter_count(config):
    '''Closed-form parameter count of ``Generator(config)``.'''
    c0, c1, c2, c3 = config.channels
    hyper = config.code_dim + 1

    def conv(cin, cout, k):
        return cout * cin * k * k + cout

    encoder = (
        conv(config.in_channels, c0, 7)
        + conv(c0, c1, 3)
        + conv(c1, c2, 3)
        + config.n_residual_blocks * 2 * conv(c3, c3, 3)
    )
    decoder = hyper * (
        config.n_residual_blocks * 2 * conv(c3, c3, 3)
        + conv(c2, c1, 3)
        + conv(c1, c0, 3)
        + conv(c0, config.out_channels, 7)
    )
    return encoder + decoder


class Encoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        c0, c1, c2, c3 = config.channels
        self.stem = nn.Sequential(nn.Conv2d(config.in_channels, c0, 7, padding=3), nn.InstanceNorm2d(c0), nn.ReLU())
        self.down1 = nn.Sequential(nn.Conv2d(c0, c1, 3, stride=2, padding=1), nn.InstanceNorm2d(c1), nn.ReLU())
        self.down2 = nn.Sequential(nn.Conv2d(c1, c2, 3, stride=2, padding=1), nn.InstanceNorm2d(c2), nn.ReLU())
        self.blocks = nn.Sequential(*[ResidualBlock(c3) for _ in range(config.n_residual_blocks)])

    def forward(self, x):
        return self.blocks(self.down2(self.down1(self.stem(x))))


class HyperDecoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        c0, c1, c2, c3 = config.channels
        self.blocks = nn.ModuleList([HyperResidualBlock(c3, config.code_dim) for _ in range(config.n_residual_blocks)])
        self.up1 = HyperConv2d(c2, c1, 3, code_dim=config.code_dim)
        self.up2 = HyperConv2d(c1, c0, 3, code_dim=config.code_dim)
        self.head = HyperConv2d(c0, config.out_channels, 7, code_dim=config.code_dim)
        self.norm1 = nn.InstanceNorm2d(c1)
        self.norm2 = nn.InstanceNorm2d(c0)

    def forward(self, latent, code):
        h = latent
        for block in self.blocks:
            h = block(h, code)
        h = F.relu(self.norm1(self.up1(F.interpolate(h, scale_factor=2, mode='nearest'), code)))
        h = F.relu(self.norm2(self.up2(F.interpolate(h, scale_factor=2, mode='nearest'), code)))
        return torch.sigmoid(self.head(h, code))


class Generator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or GeneratorConfig()
        self.encoder = Encoder(self.config)
        self.decoder = HyperDecoder(self.config)

    def encode(self, x):
        if x.dim() != 4:
            raise ValueError(f'expected a (batch, channel, H, W) tensor, got shape {tuple(x.shape)}')
        height, width = x.shape[-2:]
        if height % DOWNSAMPLE_FACTOR or width % DOWNSAMPLE_FACTOR:
            raise ValueError(f'extent not divisible by {DOWNSAMPLE_FACTOR}: {height}x{width}; pad the slice first')
        return self.encoder(x)

    def decode(self, latent, code):
        return self.decoder(latent, code_tensor(code, like=latent))

    def forward(self, x, code):
        return self.decode(self.encode(x), code)

    @torch.no_grad()
    def translate(self, slice2d, code):
        '''Translate one 2D numpy slice into the style named by ``code``.'''
        weight = next(self.parameters())
        x = torch.as_tensor(np.ascontiguousarray(slice2d), dtype=weight.dtype, device=weight.device)[None, None]
        was_training = self.training
        self.eval()
        try:
            out = self(x, code)
        finally:
            self.train(was_training)
        return out[0, 0].cpu().numpy().astype(np.asarray(slice2d).dtype, copy=False)


def translate_stack(gen, stack, code):
    return stack.with_slices(gen.translate(plane_slice, code) for plane_slice in stack.slices)


def translate_volume(gen, volume, code):
    '''Slice along ``code.plane``, translate every slice, restack.'''
    stack = slice_volume(volume, code.plane)
    logger.debug('translating %d %s slices to %s', len(stack), code.plane.value, code)
    return restack(translate_stack(gen, stack, code))


def save_generator(gen, path):
    return save_checkpoint(gen, path, 'generator', gen.config.to_dict())


def load_generator(path):
    archive = load_checkpoint(path, kind='generator')
    gen = Generator(GeneratorConfig(**archive['config']))
    restore_parameters(gen, archive)
    return gen.eval()

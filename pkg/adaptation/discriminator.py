'''
HyperDiscriminator: four code-conditioned stride-2 stages and a 1x1 head
producing an unbounded patch score map at 1/16 of the input extent.
'''
from dataclasses import asdict, dataclass

import torch.nn.functional as F
from torch import nn

from .conditioning import CODE_DIM
from .nn_core import HyperConv2d, code_tensor, load_checkpoint, restore_parameters, save_checkpoint

REDUCTION = 16


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (64, 128, 256, 512)
    kernel_size: int = 4
    stride: int = 2
    padding: int = 1
    in_channels: int = 1
    code_dim: int = CODE_DIM
    negative_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))
        if len(self.channels) != 4:
            raise ValueError(f'discriminator needs 4 HyperConv stages, got {len(self.channels)}')
        if min(self.channels) < 1:
            raise ValueError('channels must be >= 1')

    @classmethod
    def desk_scale(cls, **overrides):
        return cls(**{'channels': (8, 16, 32, 64), **overrides})

    def to_dict(self):
        return {**asdict(self), 'channels': list(self.channels)}


class Discriminator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        widths = (self.config.in_channels,) + self.config.channels
        self.stages = nn.ModuleList(
            HyperConv2d(
                cin, cout, self.config.kernel_size,
                stride=self.config.stride, padding=self.config.padding, code_dim=self.config.code_dim,
            )
            for cin, cout in zip(widths[:-1], widths[1:])
        )
        self.head = nn.Conv2d(self.config.channels[-1], 1, 1)

    def forward(self, x, code):
        return self.discriminate(x, code)

    def discriminate(self, x, code):
        if x.dim() != 4:
            raise ValueError(f'expected a (batch, channel, H, W) tensor, got shape {tuple(x.shape)}')
        height, width = x.shape[-2:]
        if height % REDUCTION or width % REDUCTION:
            raise ValueError(f'extent not divisible by {REDUCTION}: {height}x{width}')
        code = code_tensor(code, like=x)
        h = x
        for stage in self.stages:
            h = F.leaky_relu(stage(h, code), self.config.negative_slope)
        return self.head(h)


def save_discriminator(disc, path):
    return save_checkpoint(disc, path, 'discriminator', disc.config.to_dict())


def load_discriminator(path):
    archive = load_checkpoint(path, kind='discriminator')
    disc = Discriminator(DiscriminatorConfig(**archive['config']))
    restore_parameters(disc, archive)
    return disc.eval()

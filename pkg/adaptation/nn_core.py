'''
Building blocks shared by the generator, discriminator and segmenter.

The centrepiece is ``HyperConv2d``: a convolution whose kernel and bias are
produced from the conditional code by a per-layer affine map, so one set of
weights renders every modality/center/plane style.
'''
import hashlib
import logging
import random
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import CODE_DIM, ConditionalCode

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    def __init__(self, step, component, value):
        super().__init__(f'non-finite {component} ({value}) at step {step}')
        self.step = step
        self.component = component


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    '''Zero-padded cross-correlation; output extent floor((n + 2p - k) / s) + 1.'''
    if x.dim() != 4 or weight.dim() != 4:
        raise ValueError(f'expected 4D input and kernel, got {tuple(x.shape)} and {tuple(weight.shape)}')
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f'input has {x.shape[1]} channels but the kernel expects {weight.shape[1]}')
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f'bias shape {tuple(bias.shape)} does not match {weight.shape[0]} output channels')
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def code_tensor(code, like=None):
    '''(B, CODE_DIM) tensor from a ConditionalCode, a vector or a batch of vectors.'''
    if isinstance(code, ConditionalCode):
        code = code.as_tensor()
    code = torch.as_tensor(code)
    if code.dim() == 1:
        code = code.unsqueeze(0)
    if code.dim() != 2 or code.shape[1] != CODE_DIM:
        raise ValueError(f'code must have length {CODE_DIM}, got shape {tuple(code.shape)}')
    if like is not None:
        code = code.to(dtype=like.dtype, device=like.device)
    return code


class HyperConv2d(nn.Module):
    '''
    Convolution with kernel and bias generated from the conditional code.

    The hypernetwork is one ``nn.Linear(code_dim, out*in*k*k + out)``; its
    bias is the code-independent part of the kernel and its weight the
    code-dependent part.
    '''

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=None, code_dim=CODE_DIM):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        self.code_dim = code_dim
        self.kernel_numel = out_channels * in_channels * kernel_size * kernel_size
        self.hyper = nn.Linear(code_dim, self.kernel_numel + out_channels)
        self.reset_parameters()

    def reset_parameters(self):
        fan_in = self.in_channels * self.kernel_size * self.kernel_size
        std = (2.0 / fan_in) ** 0.5
        with torch.no_grad():
            self.hyper.bias[:self.kernel_numel].normal_(0.0, std)
            self.hyper.bias[self.kernel_numel:].zero_()
            # a code has four active bits at most; keep their summed contribution near std
            self.hyper.weight[:self.kernel_numel].normal_(0.0, std / 2)
            self.hyper.weight[self.kernel_numel:].normal_(0.0, 0.01)

    def generate(self, code):
        '''Kernels (B, out, in, k, k) and biases (B, out) for a batch of codes.'''
        code = code_tensor(code, like=self.hyper.weight)
        if code.shape[1] != self.code_dim:
            raise ValueError(f'code must have length {self.code_dim}, got {code.shape[1]}')
        flat = self.hyper(code)
        kernel = flat[:, :self.kernel_numel].view(-1, self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        bias = flat[:, self.kernel_numel:]
        return kernel, bias

    def forward(self, x, code):
        kernel, bias = self.generate(code)
        if kernel.shape[0] == 1:
            return conv2d_forward(x, kernel[0], bias[0], self.stride, self.padding)
        if kernel.shape[0] != x.shape[0]:
            raise ValueError(f'{kernel.shape[0]} codes for a batch of {x.shape[0]} inputs')
        # per-sample kernels via a grouped convolution
        batch, channels, height, width = x.shape
        out = F.conv2d(
            x.reshape(1, batch * channels, height, width),
            kernel.reshape(batch * self.out_channels, self.in_channels, self.kernel_size, self.kernel_size),
            bias.reshape(-1),
            stride=self.stride,
            padding=self.padding,
            groups=batch,
        )
        return out.view(batch, self.out_channels, out.shape[-2], out.shape[-1])

    def extra_repr(self):
        return f'{self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, stride={self.stride}, code_dim={self.code_dim}'


def hyper_conv_forward(x, code, params):
    return params(x, code)


class ResidualBlock(nn.Module):
    '''x + F(x), F = conv3x3 -> instance norm -> ReLU -> conv3x3 -> instance norm.'''

    def __init__(self, channels):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f'residual block expects {self.channels} channels, got {x.shape[1]}')
        h = F.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class HyperResidualBlock(nn.Module):
    '''Code-conditioned ResidualBlock: both convolutions are HyperConv2d.'''

    def __init__(self, channels, code_dim=CODE_DIM):
        super().__init__()
        self.channels = channels
        self.conv1 = HyperConv2d(channels, channels, 3, code_dim=code_dim)
        self.conv2 = HyperConv2d(channels, channels, 3, code_dim=code_dim)
        self.norm1 = nn.InstanceNorm2d(channels)
        self.norm2 = nn.InstanceNorm2d(channels)

    def forward(self, x, code):
        if x.shape[1] != self.channels:
            raise ValueError(f'residual block expects {self.channels} channels, got {x.shape[1]}')
        h = F.relu(self.norm1(self.conv1(x, code)))
        return x + self.norm2(self.conv2(h, code))


def residual_block_forward(x, params):
    return params(x)


class ConvBlock3d(nn.Module):
    '''Two (conv3x3x3 -> instance norm -> leaky ReLU) stages; the segmenter's unit.'''

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, 3, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01),
            nn.Conv3d(out_channels, out_channels, 3, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.LeakyReLU(0.01),
        )

    def forward(self, x):
        return self.layers(x)


def parameter_digest(module):
    '''SHA-256 over every parameter's bytes, in registration order.'''
    digest = hashlib.sha256()
    for name, parameter in module.named_parameters():
        digest.update(name.encode())
        digest.update(parameter.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(module, path, kind, config, extra=None):
    '''
    Write a named-parameter archive.

    The archive holds ``format_version``, ``kind``, the model ``config`` (plain
    JSON-compatible values), ``shapes`` and ``parameters`` (name -> tensor),
    plus anything in ``extra``.
    '''
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {name: tensor.detach().cpu().clone() for name, tensor in module.state_dict().items()}
    archive = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'kind': kind,
        'config': config,
        'shapes': {name: list(tensor.shape) for name, tensor in state.items()},
        'parameters': state,
    }
    archive.update(extra or {})
    torch.save(archive, path)
    logger.debug('saved %s checkpoint to %s', kind, path)
    return path


def load_checkpoint(path, kind=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'no such checkpoint: {path}')
    archive = torch.load(path, map_location='cpu', weights_only=True)
    version = archive.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f'{path}: unsupported checkpoint format version {version}')
    if kind is not None and archive.get('kind') != kind:
        raise ValueError(f"{path}: expected a {kind} checkpoint, found {archive.get('kind')}")
    return archive


def restore_parameters(module, archive):
    expected = {name: list(tensor.shape) for name, tensor in module.state_dict().items()}
    stored = archive['shapes']
    if expected != stored:
        mismatched = sorted(name for name in set(expected) | set(stored) if expected.get(name) != stored.get(name))
        raise ValueError(f"checkpoint does not match the {archive.get('kind')} architecture: {mismatched[:5]}")
    module.load_state_dict(archive['parameters'])
    return module

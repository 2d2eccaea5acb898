"""Inpainting network and patch discriminator

The inpainting network is a small encoder / dilated bottleneck / decoder
convolutional network. Its input is the masked image with the mask stacked
as an extra channel and its output goes through a sigmoid so that every
predicted intensity lies in [0, 1]. Convolutions may be gated (feature
branch multiplied by a sigmoid gate branch).

The patch discriminator maps an image to a map of real-valued scores (logits)
at 1/2^depth of the input resolution.

Outside of this module images are numpy arrays in H x W x C layout; inside,
torch tensors in N x C x H x W layout. `to_tensor` and `to_image` convert
between the two.
"""
import math
from collections import namedtuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from restoretune.core import NumericError, ParameterError, ShapeError, check_count

ACTIVATIONS = ('relu', 'lrelu', 'elu')

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

_ArchConfig = namedtuple('ArchConfig', ['channels', 'depth', 'width_multiplier', 'dilations',
                                        'gated', 'activation'])
_ArchConfig.__new__.__defaults__ = (16, 3, 2, (1, 2, 4), False, 'elu')


class ArchConfig(_ArchConfig):
    """Architecture of the inpainting network

    channels: number of channels of the first encoder level and of the last
    decoder level
    depth: number of stride 2 encoder levels (and of decoder levels)
    width_multiplier: channels of the deeper levels = channels * width_multiplier
    dilations: dilation rates of the bottleneck convolutions
    gated: use gated convolutions
    activation: one of 'relu', 'lrelu', 'elu'
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        counts = {
            'depth': check_count('Network depth', self.depth, 1),
            'channels': check_count('Network channels', self.channels, 4),
            'width_multiplier': check_count('width_multiplier', self.width_multiplier, 1),
            'dilations': tuple(check_count('Dilation rate', rate, 1) for rate in self.dilations),
        }
        if self.activation not in ACTIVATIONS:
            raise ParameterError('Unsupported activation "{}" (expected one of {})'
                                 .format(self.activation, ', '.join(ACTIVATIONS)))
        return self._replace(gated=bool(self.gated), **counts)

    def level_widths(self):
        """Number of channels at each level, from full resolution (level 0)
        to the bottleneck (level depth)"""
        return [self.channels] + [self.channels * (self.width_multiplier if level > 1 else 1)
                                  for level in range(1, self.depth + 1)]


_DiscConfig = namedtuple('DiscConfig', ['channels', 'depth'])
_DiscConfig.__new__.__defaults__ = (16, 3)


class DiscConfig(_DiscConfig):
    """Patch discriminator made of `depth` stride 2 convolutions"""
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        return self._replace(channels=check_count('Discriminator channels', self.channels, 1),
                             depth=check_count('Discriminator depth', self.depth, 1))


def _activation(name):
    if name == 'relu':
        return nn.ReLU()
    if name == 'lrelu':
        return nn.LeakyReLU(0.2)
    if name == 'elu':
        return nn.ELU()
    raise ParameterError('Unsupported activation: {}'.format(name))


class ConvLayer(nn.Module):
    """3x3 convolution followed by an activation, optionally gated

    A gated layer computes activation(feature(x)) * sigmoid(gate(x)) where
    feature and gate are two convolutions with identical shapes.
    """
    def __init__(self, in_channels, out_channels, stride=1, dilation=1, gated=False,
                 activation='elu'):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=stride,
                              padding=dilation, dilation=dilation)
        self.gate = None
        if gated:
            self.gate = nn.Conv2d(in_channels, out_channels, 3, stride=stride,
                                  padding=dilation, dilation=dilation)
        self.activation = _activation(activation) if activation else None

    def forward(self, x):
        out = self.conv(x)
        if self.activation is not None:
            out = self.activation(out)
        if self.gate is not None:
            out = out * torch.sigmoid(self.gate(x))
        return out


class InpaintingNet(nn.Module):
    def __init__(self, arch, image_channels=3):
        super().__init__()
        self.arch = arch
        self.image_channels = image_channels
        widths = arch.level_widths()

        self.encoder = nn.ModuleList()
        in_channels = image_channels + 1
        for level in range(1, arch.depth + 1):
            self.encoder.append(ConvLayer(in_channels, widths[level], stride=2,
                                          gated=arch.gated, activation=arch.activation))
            in_channels = widths[level]

        self.bottleneck = nn.ModuleList([
            ConvLayer(widths[-1], widths[-1], dilation=rate, gated=arch.gated,
                      activation=arch.activation)
            for rate in arch.dilations
        ])

        self.decoder = nn.ModuleList([
            ConvLayer(widths[level], widths[level - 1], gated=arch.gated,
                      activation=arch.activation)
            for level in range(arch.depth, 0, -1)
        ])
        self.output = nn.Conv2d(widths[0], image_channels, 3, padding=1)

    def forward(self, x):
        factor = 2 ** self.arch.depth
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise ShapeError('Input dimensions {}x{} must be divisible by {}'
                             .format(x.shape[-2], x.shape[-1], factor))
        if x.shape[1] != self.image_channels + 1:
            raise ShapeError('Expected {} input channels, got {}'
                             .format(self.image_channels + 1, x.shape[1]))
        for layer in self.encoder:
            x = layer(x)
        for layer in self.bottleneck:
            x = layer(x)
        for layer in self.decoder:
            x = layer(F.interpolate(x, scale_factor=2, mode='nearest'))
        return torch.sigmoid(self.output(x))


class PatchDiscriminator(nn.Module):
    def __init__(self, config, image_channels=3):
        super().__init__()
        self.config = config
        layers = []
        in_channels = image_channels
        for level in range(config.depth):
            out_channels = config.channels * 2 ** level
            layers.append(nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2))
            in_channels = out_channels
        layers.append(nn.Conv2d(in_channels, 1, 3, padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        factor = 2 ** self.config.depth
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise ShapeError('Discriminator input dimensions {}x{} must be divisible by {}'
                             .format(x.shape[-2], x.shape[-1], factor))
        return self.layers(x)


def _initialize(rs, module, dtype):
    """Fan-in scaled normal weights drawn from `rs`, zero biases"""
    module.to(dtype)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith('bias'):
                param.zero_()
            else:
                fan_in = int(np.prod(param.shape[1:]))
                values = rs.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(param.shape))
                param.copy_(torch.from_numpy(values))
    return module


def init_network(rs, arch, image_channels=3, dtype=torch.float32):
    """Return a new InpaintingNet with parameters drawn from `rs`"""
    return _initialize(rs, InpaintingNet(arch, image_channels), dtype)


def init_discriminator(rs, config, image_channels=3, dtype=torch.float32):
    return _initialize(rs, PatchDiscriminator(config, image_channels), dtype)


def _conv_parameters(in_channels, out_channels, gated):
    count = in_channels * out_channels * 9 + out_channels
    return 2 * count if gated else count


def parameter_count(arch, image_channels=3):
    """Number of trainable parameters of an InpaintingNet, from its architecture"""
    widths = arch.level_widths()
    total = 0
    in_channels = image_channels + 1
    for level in range(1, arch.depth + 1):
        total += _conv_parameters(in_channels, widths[level], arch.gated)
        in_channels = widths[level]
    total += len(arch.dilations) * _conv_parameters(widths[-1], widths[-1], arch.gated)
    for level in range(arch.depth, 0, -1):
        total += _conv_parameters(widths[level], widths[level - 1], arch.gated)
    total += _conv_parameters(widths[0], image_channels, False)
    return total


def module_dtype(module):
    return next(module.parameters()).dtype


def to_tensor(arrays, dtype=torch.float32):
    """Stack H x W x C arrays (or a single one) into an N x C x H x W tensor"""
    batch = np.stack(arrays) if isinstance(arrays, (list, tuple)) else arrays[np.newaxis]
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).to(dtype)


def to_image(tensor):
    """Convert a 1 x C x H x W tensor to an H x W x C float64 array"""
    return tensor.detach()[0].permute(1, 2, 0).to(torch.float64).numpy()


def forward(net, stack):
    """Restore one H x W x (C+1) input stack, returning an H x W x C image"""
    with torch.no_grad():
        out = net(to_tensor(stack, module_dtype(net)))
    return to_image(out)


def disc_forward(disc, image):
    """Score map of one H x W x C image as an H' x W' array"""
    with torch.no_grad():
        scores = disc(to_tensor(image, module_dtype(disc)))
    return scores[0, 0].to(torch.float64).numpy()


def check_finite(value, term):
    if not torch.isfinite(value).all():
        raise NumericError('Non-finite value in {}'.format(term), term=term)


def gradients(loss, module, term='loss'):
    """Gradient of a scalar loss with respect to every parameter of `module`

    Parameters that the loss does not depend on get a zero gradient.
    """
    check_finite(loss, term)
    params = list(module.parameters())
    grads = torch.autograd.grad(loss, params, retain_graph=True, allow_unused=True)
    return [torch.zeros_like(param) if grad is None else grad
            for param, grad in zip(params, grads)]


def make_optimizer(module, learning_rate):
    """Adam optimizer holding the running moments of `module`'s parameters"""
    if learning_rate < 0:
        raise ParameterError('Learning rate must be non-negative')
    return torch.optim.Adam(module.parameters(), lr=learning_rate, betas=ADAM_BETAS,
                            eps=ADAM_EPSILON)


def optimizer_step(optimizer, grads):
    """Apply one Adam update with the given gradients

    `grads` must be ordered like the parameters the optimizer was built with.
    """
    params = [param for group in optimizer.param_groups for param in group['params']]
    if len(params) != len(grads):
        raise ShapeError('Expected {} gradients, got {}'.format(len(params), len(grads)))
    for index, (param, grad) in enumerate(zip(params, grads)):
        if param.shape != grad.shape:
            raise ShapeError('Gradient #{} has shape {} instead of {}'
                             .format(index, tuple(grad.shape), tuple(param.shape)))
        check_finite(grad, 'gradient #{}'.format(index))
        param.grad = grad.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def save_checkpoint(path, net, seed):
    """Save the parameters of an InpaintingNet together with its architecture
    and the seed it was trained with"""
    arch = net.arch._asdict()
    arch['dilations'] = list(arch['dilations'])
    torch.save({
        'arch': arch,
        'image_channels': net.image_channels,
        'dtype': str(module_dtype(net)).replace('torch.', ''),
        'seed': seed,
        'state_dict': net.state_dict(),
    }, path)


def load_checkpoint(path):
    """Return (network, seed) from a checkpoint written by `save_checkpoint`"""
    checkpoint = torch.load(path, map_location='cpu')
    arch = ArchConfig(**checkpoint['arch'])
    net = InpaintingNet(arch, checkpoint['image_channels'])
    net.to(getattr(torch, checkpoint['dtype']))
    net.load_state_dict(checkpoint['state_dict'])
    return net, checkpoint['seed']

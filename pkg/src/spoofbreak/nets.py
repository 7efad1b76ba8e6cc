"""Generator and discriminator networks.

Both operate on raw waveform frames shaped (batch, 1, L). Widths are
configurable so the same code serves the full channel plan (base width 64)
and reduced variants used for gradient checks and desk-scale runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dsp import design_highpass
from .errors import ShapeError

DEFAULT_FRAME_LEN = 5980


def swish(x):
    return x * torch.sigmoid(x)


class Swish(nn.Module):
    def forward(self, x):
        return swish(x)


@dataclass
class GeneratorConfig:
    width: int = 64
    alpha0: float = 0.01
    cutoff_hz: float = 30.0
    num_taps: int = 101
    sample_rate: int = 16000
    frame_len: int = DEFAULT_FRAME_LEN


@dataclass
class DiscriminatorConfig:
    width: int = 64
    fc_dims: tuple = (256, 128)
    input_len: int = DEFAULT_FRAME_LEN
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.fc_dims = tuple(int(d) for d in self.fc_dims)


def generator_channel_plan(width):
    """Output channels of every conv layer, in order: 64-64-64-128-128-128-256-256-256-128-128-1 at width 64."""
    w = int(width)
    plan = []
    for c in (w, 2 * w, 4 * w):
        plan += [c, c, c]
    plan += [2 * w, 2 * w, 1]
    return plan


def generator_kernel_plan():
    return [3, 3, 1, 3, 3, 1, 3, 3, 1, 3, 3, 3]


class Generator(nn.Module):
    """Residual waveform generator: ``y = highpass(x + alpha * branch(x))``.

    ``branch`` is the stacked 1-D conv network ending in tanh, so every
    sample of the perturbation before filtering is bounded by ``|alpha|``.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or GeneratorConfig()
        layers = []
        c_in = 1
        plan = generator_channel_plan(config.width)
        kernels = generator_kernel_plan()
        for i, (c_out, k) in enumerate(zip(plan, kernels)):
            layers.append(nn.Conv1d(c_in, c_out, k, stride=1, padding=k // 2))
            layers.append(nn.Tanh() if i == len(plan) - 1 else Swish())
            c_in = c_out
        self.branch = nn.Sequential(*layers)
        self.alpha = nn.Parameter(torch.tensor(float(config.alpha0)))
        filt = design_highpass(config.cutoff_hz, config.sample_rate, config.num_taps)
        self.register_buffer("highpass", torch.tensor(filt.taps, dtype=torch.float32))

    @property
    def frame_len(self):
        return self.config.frame_len

    def filter(self, x):
        taps = self.highpass.to(x.dtype).flip(0).view(1, 1, -1)
        return F.conv1d(x, taps, padding=(taps.shape[-1] - 1) // 2)

    def forward(self, x):
        if x.dim() != 3 or x.shape[1] != 1 or x.shape[2] != self.frame_len:
            raise ShapeError(f"generator expects (B, 1, {self.frame_len}), got {tuple(x.shape)}")
        return self.filter(x + self.alpha * self.branch(x))


def constrain_kernel(taps):
    """Project 5 taps onto the prediction-error constraint.

    Centre tap becomes -1 and the remaining taps are rescaled to sum to 1;
    if they sum to (almost) zero they are reset to 0.25 each.
    """
    is_tensor = torch.is_tensor(taps)
    t = taps.detach().clone() if is_tensor else np.array(taps, dtype=np.float64)
    others = [0, 1, 3, 4]
    s = float(t[others].sum())
    if abs(s) < 1e-12:
        t[others] = 0.25
    else:
        t[others] = t[others] / s
    t[2] = -1.0
    return t


def pooled_length(input_len):
    n = input_len - 4
    for _ in range(3):
        n //= 2
    return n


class Discriminator(nn.Module):
    """Forensic discriminator returning P(input is unaltered)."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or DiscriminatorConfig()
        if pooled_length(config.input_len) < 1:
            raise ShapeError(f"input_len {config.input_len} too short for three halvings")
        self.constrained = nn.Parameter(constrain_kernel(torch.rand(5)))
        c = config.width

        def block(c_in, k):
            return [
                nn.Conv1d(c_in, c, k, padding=k // 2),
                nn.BatchNorm1d(c, eps=config.bn_eps, momentum=config.bn_momentum),
                nn.Tanh(),
            ]

        self.features = nn.Sequential(
            *block(1, 7), *block(c, 7), nn.MaxPool1d(2, 2),
            *block(c, 5), *block(c, 5), nn.MaxPool1d(2, 2),
            *block(c, 3), nn.MaxPool1d(2, 2),
        )
        dims = [self.flatten_width, *config.fc_dims]
        fc = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            fc += [nn.Linear(d_in, d_out), nn.Tanh()]
        fc.append(nn.Linear(dims[-1], 1))
        self.fc = nn.Sequential(*fc)

    @property
    def flatten_width(self):
        return self.config.width * pooled_length(self.config.input_len)

    def logits(self, x):
        if x.dim() != 3 or x.shape[1] != 1 or x.shape[2] != self.config.input_len:
            raise ShapeError(f"discriminator expects (B, 1, {self.config.input_len}), got {tuple(x.shape)}")
        h = F.conv1d(x, self.constrained.to(x.dtype).flip(0).view(1, 1, 5))
        h = self.features(h)
        return self.fc(h.flatten(1)).squeeze(1)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))

    @torch.no_grad()
    def project_(self):
        self.constrained.copy_(constrain_kernel(self.constrained))

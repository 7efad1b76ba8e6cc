"""Generator and discriminator objectives.

Probabilities are clamped to [EPS, 1 - EPS] before every log so all terms
stay finite. Functions accept tensors or array-likes and return 0-d tensors
(differentiable when the inputs are).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import ConfigError, ShapeError

EPS = 1e-7
ADVERSARIAL_FORMS = ("non_saturating", "paper")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1e-4
    lambda3: float = 1.0
    lambda4: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"weight must be finite and >= 0, got {value}", f"losses.{name}")

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)


@dataclass(frozen=True)
class LossBreakdown:
    perceptual: float
    forensics: float
    transcription: float
    adversarial: float
    total: float
    disc_loss: float = float("nan")

    def is_finite(self):
        return all(math.isfinite(v) for v in asdict(self).values())

    def to_dict(self):
        return asdict(self)


def _t(x):
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def _clamp(p):
    return torch.clamp(_t(p), EPS, 1.0 - EPS)


def perceptual_loss(x, y):
    """Mean absolute difference over every sample of every batch item."""
    x, y = _t(x), _t(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return (x - y).abs().mean()


def forensics_loss(probs_real):
    """-mean log P(real) over all (surrogate, item) pairs."""
    return -torch.log(_clamp(probs_real)).mean()


def adversarial_loss_g(d_on_attacked, form="non_saturating"):
    d = _clamp(d_on_attacked)
    if form == "non_saturating":
        return -torch.log(d).mean()
    if form == "paper":
        return torch.log(1.0 - d).mean()
    raise ConfigError(f"unknown adversarial form {form!r}; expected one of {ADVERSARIAL_FORMS}",
                      "losses.adversarial_form")


def discriminator_loss(d_real, d_attacked):
    """Binary cross-entropy: real frames labelled 1, attacked frames labelled 0."""
    return -torch.log(_clamp(d_real)).mean() - torch.log(1.0 - _clamp(d_attacked)).mean()


def total_generator_loss(terms, weights):
    """Weighted sum of the four generator terms (mapping or sequence in order)."""
    if isinstance(terms, dict):
        terms = (terms["perceptual"], terms["forensics"], terms["transcription"], terms["adversarial"])
    l1, l2, l3, l4 = weights.as_tuple()
    p, f, t, a = terms
    return l1 * p + l2 * f + l3 * t + l4 * a

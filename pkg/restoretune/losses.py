"""Fine-tuning losses

The reconstruction loss compares the restoration of a re-masked replica with
the initial restoration outside of the original mask. Adversarial losses use
binary cross-entropy on the score map of a patch discriminator, the initial
restoration playing the role of the real sample.

Tensors are N x C x H x W; masks are N x 1 x H x W (or H x W) with 1 marking
pixels of the original hole.
"""
from collections import namedtuple

import torch
import torch.nn.functional as F

from restoretune.core import ParameterError, ShapeError
from restoretune.network import check_finite

NORMS = ('l2', 'l1')


class DegenerateMaskError(ParameterError):
    pass


_LossWeights = namedtuple('LossWeights', ['rec', 'adv'])
_LossWeights.__new__.__defaults__ = (1.0, 0.01)


class LossWeights(_LossWeights):
    """Weights of the reconstruction and adversarial terms"""
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        if not self.rec > 0:
            raise ParameterError('Reconstruction weight must be positive')
        if not self.adv >= 0:
            raise ParameterError('Adversarial weight must be non-negative')
        return self


LossTerms = namedtuple('LossTerms', ['rec', 'adv', 'total'])


def _broadcast_mask(mask, like):
    if mask.dim() == 2:
        mask = mask[None, None]
    if mask.shape[-2:] != like.shape[-2:]:
        raise ShapeError('Mask dimensions {} differ from image dimensions {}'
                         .format(tuple(mask.shape[-2:]), tuple(like.shape[-2:])))
    return mask.expand(like.shape[0], like.shape[1], -1, -1)


def rec_loss(target, pred, original_mask, norm='l2'):
    """Mean reconstruction error over the pixels outside of the original mask

    Pixels inside the original mask are removed before the reduction, so they
    contribute neither to the sum nor to the normalization.

    :param target: Initial restoration (fixed)
    :param pred: Restoration of the re-masked replica
    :param original_mask: Original hole, 1 where pixels are excluded
    :param norm: 'l2' (squared error) or 'l1' (absolute error)
    """
    if target.shape != pred.shape:
        raise ShapeError('Target and prediction dimensions differ: {} and {}'
                         .format(tuple(target.shape), tuple(pred.shape)))
    if norm not in NORMS:
        raise ParameterError('Unsupported norm "{}"'.format(norm))
    valid = _broadcast_mask(original_mask, pred) == 0
    if not valid.any():
        raise DegenerateMaskError('The original mask covers the whole image')
    diff = torch.masked_select(pred - target, valid)
    if norm == 'l2':
        return (diff * diff).mean()
    return diff.abs().mean()


def bce_real_fake(real_scores, fake_scores):
    """-mean log sigmoid(real) - mean log(1 - sigmoid(fake))"""
    return (F.binary_cross_entropy_with_logits(real_scores, torch.ones_like(real_scores))
            + F.binary_cross_entropy_with_logits(fake_scores, torch.zeros_like(fake_scores)))


def bce_fooled(fake_scores):
    """-mean log sigmoid(fake)"""
    return F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))


def adv_loss_d(disc, real, fake):
    """Discriminator loss; `real` is the initial restoration and `fake` the
    restoration of a re-masked replica (detached from the generator)"""
    real_scores = disc(real)
    fake_scores = disc(fake.detach())
    check_finite(real_scores, 'discriminator scores on real samples')
    check_finite(fake_scores, 'discriminator scores on fake samples')
    return bce_real_fake(real_scores, fake_scores)


def adv_loss_g(disc, fake):
    """Non-saturating generator loss"""
    fake_scores = disc(fake)
    check_finite(fake_scores, 'discriminator scores on fake samples')
    return bce_fooled(fake_scores)


def total_loss(rec, adv, weights):
    return weights.rec * rec + weights.adv * adv

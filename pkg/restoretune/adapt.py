"""Test-time fine-tuning from the network's own restoration

`fine_tune` adapts a pre-trained inpainting network to one masked image
without ground truth:
    1. restore the masked image once with the pre-trained parameters; this
    initial restoration is the fixed training target
    2. at every iteration, re-mask copies of the target with fresh random
    masks, restore them with the current parameters and take one optimizer
    step on the reconstruction loss computed outside of the original mask
    3. restore the original masked image with the adapted parameters

`self_similar_mask` provides the targeted variant where the re-masked region
is the window of the initial restoration that best matches the content of
the original hole.
"""
import copy
import csv
import logging
import math
from collections import namedtuple

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from restoretune import core, maskgen, network
from restoretune.core import NumericError, ParameterError, RandomState
from restoretune.losses import (DegenerateMaskError, LossWeights, NORMS, adv_loss_d,
                                adv_loss_g, rec_loss, total_loss)

logger = logging.getLogger(__name__)

TRANSFORMS = ('identity', 'hflip', 'vflip', 'rot90', 'rot180', 'rot270')
# Transforms that keep the dimensions of non-square images
SHAPE_PRESERVING_TRANSFORMS = ('identity', 'hflip', 'vflip', 'rot180')
MASKING_STRATEGIES = ('random', 'self_similar')
TRACE_COLUMNS = ['iteration', 'rec_loss', 'adv_loss', 'total', 'psnr', 'ssim']


class SearchError(ParameterError):
    pass


_AdaptConfig = namedtuple('AdaptConfig', ['iterations', 'learning_rate', 'batch_size',
                                          'coverage', 'free_form', 'transforms', 'adversarial',
                                          'loss_weights', 'checkpoint_every', 'seed',
                                          'rec_norm', 'exclude_original_mask', 'masking',
                                          'patch_size', 'disc_learning_rate', 'max_mask_tries'])
_AdaptConfig.__new__.__defaults__ = (200, 1e-4, 4, (0.2, 0.4), maskgen.FreeFormParams(), True,
                                     False, LossWeights(), 50, 0, 'l2', True, 'random', 32,
                                     1e-4, 100)


class AdaptConfig(_AdaptConfig):
    """Parameters of the fine-tuning loop

    iterations: number of parameter updates (T)
    learning_rate: Adam learning rate of the inpainting network
    batch_size: number of re-masked replicas of the target per iteration
    coverage: accepted coverage range of the random fine-tuning masks
    free_form: FreeFormParams of the random fine-tuning masks
    transforms: apply a random flip or right-angle rotation to every replica
    adversarial: add the adversarial term (the discriminator is initialized
    afresh from the seed)
    loss_weights: LossWeights of the reconstruction and adversarial terms
    checkpoint_every: trace record period in iterations
    seed: seed of the masks, transforms and discriminator
    rec_norm: 'l2' or 'l1' reconstruction error
    exclude_original_mask: leave the original hole out of the reconstruction loss
    masking: 'random' fine-tuning masks or the 'self_similar' targeted window
    patch_size: side of the targeted window
    disc_learning_rate: Adam learning rate of the discriminator
    max_mask_tries: rejection sampling budget of each fine-tuning mask
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        counts = {
            'iterations': core.check_count('iterations', self.iterations),
            'batch_size': core.check_count('batch_size', self.batch_size, 1),
            'checkpoint_every': core.check_count('checkpoint_every', self.checkpoint_every, 1),
            'patch_size': core.check_count('patch_size', self.patch_size, 1),
            'max_mask_tries': core.check_count('max_mask_tries', self.max_mask_tries, 1),
        }
        if self.learning_rate < 0 or self.disc_learning_rate < 0:
            raise ParameterError('Learning rates must be non-negative')
        if self.rec_norm not in NORMS:
            raise ParameterError('Unsupported reconstruction norm "{}"'.format(self.rec_norm))
        if self.masking not in MASKING_STRATEGIES:
            raise ParameterError('Unknown masking strategy "{}"'.format(self.masking))
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError('Seed must be an unsigned 64-bit integer')
        maskgen.CoverageRange(*self.coverage)
        free_form = self.free_form
        if not isinstance(free_form, maskgen.FreeFormParams):
            free_form = maskgen.FreeFormParams(**free_form)
        loss_weights = self.loss_weights
        if not isinstance(loss_weights, LossWeights):
            loss_weights = LossWeights(**loss_weights)
        return self._replace(coverage=tuple(self.coverage), free_form=free_form,
                             loss_weights=loss_weights, **counts)


TraceRecord = namedtuple('TraceRecord', ['iteration', 'rec_loss', 'adv_loss', 'total_loss',
                                         'psnr', 'ssim'])


class AdaptTrace:
    """Losses (and optional snapshot metrics) recorded during fine-tuning

    target_digest is the SHA-256 digest of the fixed training target.
    """
    def __init__(self, target_digest):
        self.target_digest = target_digest
        self.records = []

    def add(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ParameterError('Trace iterations must be strictly increasing')
        self.records.append(record)

    def write_csv(self, path):
        def cell(value):
            if value is None:
                return ''
            if isinstance(value, float):
                return 'inf' if value == math.inf else repr(value)
            return str(value)

        with open(path, 'w', newline='') as trace_file:
            writer = csv.writer(trace_file)
            writer.writerow(TRACE_COLUMNS)
            for record in self.records:
                writer.writerow([cell(value) for value in record])


def initial_restore(net, masked, mask):
    """Restoration of `masked` by `net`, valid pixels pasted back"""
    pred = network.forward(net, core.compose_network_input(masked, mask))
    return core.composite_output(pred, masked, mask)


def apply_transform(array, name):
    """Flip or rotate an H x W (x C) array in the image plane"""
    if name == 'identity':
        result = array
    elif name == 'hflip':
        result = array[:, ::-1]
    elif name == 'vflip':
        result = array[::-1]
    elif name == 'rot90':
        result = np.rot90(array, 1, axes=(0, 1))
    elif name == 'rot180':
        result = np.rot90(array, 2, axes=(0, 1))
    elif name == 'rot270':
        result = np.rot90(array, 3, axes=(0, 1))
    else:
        raise ParameterError('Unknown transform "{}"'.format(name))
    return np.ascontiguousarray(result)


def random_transform(arrays, rs):
    """Apply one uniformly drawn transform identically to every array

    :param arrays: Arrays sharing their first two dimensions, for example
    (re-masked replica, target, original mask)
    :param rs: RandomState
    :return: Tuple of transformed arrays
    """
    height, width = arrays[0].shape[:2]
    names = TRANSFORMS if height == width else SHAPE_PRESERVING_TRANSFORMS
    name = names[rs.integers(0, len(names))]
    return tuple(apply_transform(array, name) for array in arrays)


def _template_window(mask, patch):
    height, width = mask.shape
    ys, xs = np.nonzero(mask)
    center_y = (ys.min() + ys.max() + 1) / 2
    center_x = (xs.min() + xs.max() + 1) / 2
    top = min(max(int(round(center_y - patch / 2)), 0), height - patch)
    left = min(max(int(round(center_x - patch / 2)), 0), width - patch)
    return top, left


def self_similar_mask(restored, mask, patch):
    """Mask of the patch-sized window most similar to the original hole

    The template is the patch-sized window of `restored` centered on the
    bounding box of `mask`. Every window lying entirely outside of `mask` is
    scored by normalized cross-correlation with the template (0 when either
    window is constant); the first best window in row-major order wins.
    """
    height, width = mask.shape
    if patch < 1 or patch > min(height, width) // 2:
        raise ParameterError('Patch size must lie in [1, {}]: {}'
                             .format(min(height, width) // 2, patch))
    if not mask.any():
        raise SearchError('Empty original mask')
    top, left = _template_window(mask, patch)
    template = restored[top:top + patch, left:left + patch].transpose(2, 0, 1)
    template = template - template.mean()
    template_energy = float(np.sum(template * template))

    windows = sliding_window_view(restored, (patch, patch), axis=(0, 1))
    outside = sliding_window_view(mask, (patch, patch)).max(axis=(-2, -1)) == 0
    scores = np.full(outside.shape, -np.inf)
    for row in range(outside.shape[0]):
        if not outside[row].any():
            continue
        centered = windows[row] - windows[row].mean(axis=(1, 2, 3), keepdims=True)
        numerator = np.einsum('nchw,chw->n', centered, template)
        energy = np.einsum('nchw,nchw->n', centered, centered) * template_energy
        with np.errstate(divide='ignore', invalid='ignore'):
            row_scores = np.where(energy > 0, numerator / np.sqrt(energy), 0.0)
        scores[row] = np.where(outside[row], row_scores, -np.inf)

    if not np.isfinite(scores).any():
        raise SearchError('No {0}x{0} window lies outside of the original mask'.format(patch))
    best_top, best_left = np.unravel_index(np.argmax(scores), scores.shape)
    targeted = np.zeros_like(mask, dtype=np.float64)
    targeted[best_top:best_top + patch, best_left:best_left + patch] = 1
    return targeted


def _training_batch(rs, target, mask, config, targeted, dtype):
    height, width = mask.shape
    coverage_range = maskgen.CoverageRange(*config.coverage)
    stacks, targets, masks = [], [], []
    for _ in range(config.batch_size):
        if targeted is None:
            fine_mask = maskgen.sample_mask_in_coverage(rs, height, width, config.free_form,
                                                        coverage_range, config.max_mask_tries)
        else:
            fine_mask = targeted
        arrays = (core.apply_mask(target, fine_mask), fine_mask, target, mask)
        if config.transforms:
            arrays = random_transform(arrays, rs)
        replica, fine_mask, replica_target, original_mask = arrays
        stacks.append(core.compose_network_input(replica, fine_mask))
        targets.append(replica_target)
        masks.append(original_mask[:, :, np.newaxis])
    return (network.to_tensor(stacks, dtype), network.to_tensor(targets, dtype),
            network.to_tensor(masks, dtype))


def fine_tune(net, masked, mask, config, disc_config=None, on_checkpoint=None, checkpoints=()):
    """Adapt `net` to one masked image and restore it

    The network passed as argument is left untouched; adaptation works on a
    copy. No ground truth enters this function: snapshot metrics, if any, are
    computed by the caller in `on_checkpoint`.

    :param net: Pre-trained InpaintingNet
    :param masked: Masked input image, zero inside `mask`
    :param mask: Original mask
    :param config: AdaptConfig
    :param disc_config: DiscConfig of the discriminator when config.adversarial
    is set
    :param on_checkpoint: Optional callable(iteration, restoration) returning
    None or a mapping with 'psnr' and 'ssim' entries, called at every trace
    record and at every iteration listed in `checkpoints` (iteration 0 being
    the restoration by the pre-trained network)
    :param checkpoints: Additional iterations at which to call on_checkpoint
    :return: Tuple made of the adapted network, the final restoration and the
    AdaptTrace
    """
    core.check_image(masked)
    core.check_mask(mask)
    if mask.all():
        raise DegenerateMaskError('The original mask covers the whole image')

    rs = RandomState(config.seed)
    tuned = copy.deepcopy(net)
    dtype = network.module_dtype(tuned)
    target = initial_restore(tuned, masked, mask)
    target.setflags(write=False)
    trace = AdaptTrace(core.digest(target))

    targeted = None
    if config.masking == 'self_similar':
        targeted = self_similar_mask(target, mask, config.patch_size)

    disc = disc_optimizer = None
    if config.adversarial:
        disc = network.init_discriminator(rs.child('discriminator'),
                                          disc_config or network.DiscConfig(),
                                          tuned.image_channels, dtype)
        disc_optimizer = network.make_optimizer(disc, config.disc_learning_rate)
    optimizer = network.make_optimizer(tuned, config.learning_rate)

    checkpoints = set(checkpoints)
    if on_checkpoint is not None and 0 in checkpoints:
        on_checkpoint(0, target)

    for iteration in range(1, config.iterations + 1):
        inputs, targets, original_masks = _training_batch(rs, target, mask, config, targeted,
                                                          dtype)
        if not config.exclude_original_mask:
            original_masks = torch.zeros_like(original_masks)
        pred = tuned(inputs)
        rec = rec_loss(targets, pred, original_masks, config.rec_norm)
        adv = adv_loss_g(disc, pred) if disc is not None else torch.zeros((), dtype=dtype)
        loss = total_loss(rec, adv, config.loss_weights)
        try:
            network.check_finite(rec, 'reconstruction loss')
            network.check_finite(adv, 'adversarial loss')
            network.optimizer_step(optimizer, network.gradients(loss, tuned, 'total loss'))
            if disc is not None:
                disc_loss = adv_loss_d(disc, targets, pred)
                network.optimizer_step(disc_optimizer,
                                       network.gradients(disc_loss, disc, 'discriminator loss'))
        except NumericError as exc:
            logger.error('Fine-tuning diverged at iteration {}: {}'.format(iteration, exc))
            exc.trace = trace
            raise

        if (iteration % config.checkpoint_every == 0 or iteration == config.iterations
                or iteration in checkpoints):
            snapshot = None
            if on_checkpoint is not None:
                snapshot = on_checkpoint(iteration, initial_restore(tuned, masked, mask))
            snapshot = snapshot or {}
            record = TraceRecord(iteration, rec.item(), adv.item(), loss.item(),
                                 snapshot.get('psnr'), snapshot.get('ssim'))
            trace.add(record)
            logger.debug('Iteration {}: rec {:.6f}, adv {:.6f}, total {:.6f}'
                         .format(iteration, record.rec_loss, record.adv_loss, record.total_loss))

    if core.digest(target) != trace.target_digest:
        raise NumericError('The fine-tuning target changed during fine-tuning',
                           term='fine-tuning target', trace=trace)
    final = initial_restore(tuned, masked, mask)
    return tuned, final, trace

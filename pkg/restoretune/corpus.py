"""Synthetic corpora and pre-training

Two kinds of synthetic images are generated from seeds:
    - patch-recurrent images: a grid of copies of one procedurally generated
    tile, each copy with its own brightness offset and sub-pixel shift
    (`synth_recurrent`)
    - control images: low-pass filtered noise without imposed repetition
    (`synth_control`)

`pretrain` trains an inpainting network on such a corpus with a supervised
masked reconstruction objective to obtain the parameters adaptation starts
from.
"""
import csv
import logging
import math
import os
from collections import namedtuple

import numpy as np
import scipy.ndimage
import torch.nn.functional as F

from restoretune import core, maskgen, metrics, network
from restoretune.core import NumericError, ParameterError, RandomState
from restoretune.losses import LossWeights, adv_loss_d, adv_loss_g

logger = logging.getLogger(__name__)

FAMILIES = ('stripes', 'checker', 'blobs', 'brick')
MASK_KINDS = ('tile', 'rect', 'free_form')
SETS = ('train', 'test_recurrent', 'test_control')
MANIFEST_COLUMNS = ['id', 'set', 'seed', 'spec', 'path', 'mask_path']
PRETRAIN_LOG_COLUMNS = ['epoch', 'batch', 'loss', 'heldout_psnr']

_RecurrenceSpec = namedtuple('RecurrenceSpec', ['tile_size', 'grid', 'brightness_jitter',
                                                'shift_jitter', 'family', 'channels'])
_RecurrenceSpec.__new__.__defaults__ = (32, (4, 4), 0.05, 0.2, 'stripes', 3)


class RecurrenceSpec(_RecurrenceSpec):
    """Description of a patch-recurrent image

    tile_size: side of the base tile in pixels
    grid: (rows, columns) of tile copies; the image is tile_size * grid pixels
    brightness_jitter: per-copy brightness offset drawn in [-jitter, jitter]
    shift_jitter: per-copy sub-pixel shift drawn in [-jitter, jitter] pixels
    along each axis
    family: texture of the base tile, one of FAMILIES
    channels: 1 or 3
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        rows, columns = self.grid
        tile_size = core.check_count('tile_size', self.tile_size, 4)
        rows = core.check_count('grid rows', rows, 1)
        columns = core.check_count('grid columns', columns, 1)
        if not 0 <= self.brightness_jitter < 0.25:
            raise ParameterError('Brightness jitter must lie in [0, 0.25) to keep '
                                 'intensities in [0, 1]: {}'.format(self.brightness_jitter))
        if not 0 <= self.shift_jitter <= 1:
            raise ParameterError('Shift jitter must lie in [0, 1]: {}'.format(self.shift_jitter))
        if self.family not in FAMILIES:
            raise ParameterError('Unknown texture family "{}"'.format(self.family))
        if self.channels not in core.VALID_CHANNELS:
            raise ParameterError('Invalid channel count: {}'.format(self.channels))
        return self._replace(tile_size=tile_size, grid=(rows, columns))

    @property
    def dims(self):
        rows, columns = self.grid
        return self.tile_size * rows, self.tile_size * columns


TilingMetadata = namedtuple('TilingMetadata', ['family', 'base_tile', 'positions',
                                               'brightness_offsets', 'shifts'])
TilingMetadata.__doc__ = """How a patch-recurrent image was built

positions: (top, left) corner of every tile copy, in row-major order
brightness_offsets, shifts: per-copy jitter, in the order of positions
"""


def _two_colors(rs, channels, margin):
    low = rs.uniform(margin, 0.45, size=channels)
    high = rs.uniform(0.55, 1 - margin, size=channels)
    if rs.uniform() < 0.5:
        return high, low
    return low, high


def _stripes(rs, size):
    angle = rs.uniform(0, math.pi)
    cycles = rs.integers(1, 4)
    phase = rs.uniform(0, 2 * math.pi)
    y, x = np.mgrid[0:size, 0:size] / size
    return 0.5 + 0.5 * np.sin(2 * math.pi * cycles * (x * math.cos(angle) + y * math.sin(angle))
                              + phase)


def _checker(rs, size):
    cells = (2, 4)[rs.integers(0, 2)]
    y, x = np.mgrid[0:size, 0:size] * cells // size
    return ((y + x) % 2).astype(np.float64)


def _blobs(rs, size):
    y, x = np.mgrid[0:size, 0:size] / size
    angle = rs.uniform(0, 2 * math.pi)
    pattern = 0.3 * (x * math.cos(angle) + y * math.sin(angle))
    for _ in range(rs.integers(2, 5)):
        cy, cx = rs.uniform(0.1, 0.9), rs.uniform(0.1, 0.9)
        sigma = rs.uniform(0.08, 0.2)
        pattern = pattern + np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma ** 2))
    pattern = pattern - pattern.min()
    return pattern / pattern.max()


def _brick(rs, size):
    rows = (2, 4)[rs.integers(0, 2)]
    mortar = max(size // 16, 1)
    brick_height = size // rows
    brick_width = size // 2
    pattern = np.zeros((size, size))
    for row in range(rows):
        offset = (brick_width // 2) * (row % 2)
        top = row * brick_height
        for start in range(-offset, size, brick_width):
            left = max(start, 0)
            right = min(start + brick_width - mortar, size)
            if left < right:
                shade = rs.uniform(0.75, 1.0)
                pattern[top:top + brick_height - mortar, left:right] = shade
    return pattern


_PATTERNS = {
    'stripes': _stripes,
    'checker': _checker,
    'blobs': _blobs,
    'brick': _brick,
}


def base_tile(rs, spec):
    """Procedurally generated tile with intensities in
    [brightness_jitter, 1 - brightness_jitter]"""
    pattern = _PATTERNS[spec.family](rs, spec.tile_size)
    low, high = _two_colors(rs, spec.channels, spec.brightness_jitter)
    return low + pattern[:, :, np.newaxis] * (high - low)


def synth_recurrent(rs, spec):
    """Tile an image with jittered copies of one base tile

    :return: Tuple made of the image and its TilingMetadata
    """
    tile = base_tile(rs, spec)
    rows, columns = spec.grid
    size = spec.tile_size
    image = np.zeros(spec.dims + (spec.channels,))
    positions, offsets, shifts = [], [], []
    for row in range(rows):
        for column in range(columns):
            offset = rs.uniform(-spec.brightness_jitter, spec.brightness_jitter)
            shift = (rs.uniform(-spec.shift_jitter, spec.shift_jitter),
                     rs.uniform(-spec.shift_jitter, spec.shift_jitter))
            copy = tile
            if shift != (0.0, 0.0):
                copy = scipy.ndimage.shift(tile, shift + (0,), order=1, mode='grid-wrap')
            top, left = row * size, column * size
            image[top:top + size, left:left + size] = copy + offset
            positions.append((top, left))
            offsets.append(offset)
            shifts.append(shift)
    image = np.clip(image, 0, 1)
    return image, TilingMetadata(spec.family, tile, positions, offsets, shifts)


def synth_control(rs, dims, channels=3, sigma=4.0):
    """Low-pass filtered uniform noise stretched to [0.05, 0.95]"""
    height, width = dims
    if height < core.MIN_IMAGE_SIDE or width < core.MIN_IMAGE_SIDE or sigma <= 0:
        raise ParameterError('Invalid control image parameters: {}x{}, sigma {}'
                             .format(height, width, sigma))
    noise = rs.uniform(0, 1, size=(height, width, channels))
    field = scipy.ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode='reflect')
    low, high = field.min(), field.max()
    if high == low:
        return np.full_like(field, 0.5)
    return 0.05 + 0.9 * (field - low) / (high - low)


def tile_mask(rs, dims, tile_size):
    """Mask covering one full grid cell chosen uniformly"""
    height, width = dims
    rows, columns = height // tile_size, width // tile_size
    if rows < 1 or columns < 1:
        raise ParameterError('Tile of {} pixels does not fit in {}x{}'
                             .format(tile_size, height, width))
    cell = rs.integers(0, rows * columns)
    top, left = (cell // columns) * tile_size, (cell % columns) * tile_size
    mask = np.zeros(dims)
    mask[top:top + tile_size, left:left + tile_size] = 1
    return mask


_CorpusConfig = namedtuple('CorpusConfig', ['train_size', 'test_size', 'tile_size', 'grid',
                                            'brightness_jitter', 'shift_jitter', 'channels',
                                            'train_recurrent_fraction', 'control_sigma',
                                            'test_mask', 'rect_sides', 'coverage',
                                            'free_form'])
_CorpusConfig.__new__.__defaults__ = (500, 40, 32, (4, 4), 0.05, 0.2, 3, 0.5, 4.0, 'tile',
                                      (16, 48), (0.2, 0.4), maskgen.FreeFormParams())


class CorpusConfig(_CorpusConfig):
    """Sizes and generation parameters of the synthetic corpus

    train_size: number of pre-training images
    test_size: number of images in each of the recurrent and control test sets
    train_recurrent_fraction: share of patch-recurrent images in the
    pre-training set, the rest being control images
    test_mask: kind of original mask of test images, one of MASK_KINDS
    rect_sides: (min, max) side of 'rect' test masks
    coverage: accepted coverage of 'free_form' test masks
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        counts = {
            'train_size': core.check_count('train_size', self.train_size, 1),
            'test_size': core.check_count('test_size', self.test_size, 1),
        }
        if self.test_mask not in MASK_KINDS:
            raise ParameterError('Unknown test mask kind "{}"'.format(self.test_mask))
        if not 0 <= self.train_recurrent_fraction <= 1:
            raise ParameterError('train_recurrent_fraction must lie in [0, 1]')
        free_form = self.free_form
        if not isinstance(free_form, maskgen.FreeFormParams):
            free_form = maskgen.FreeFormParams(**free_form)
        # Validate the tiling and the coverage range
        self.recurrence_spec('stripes')
        maskgen.CoverageRange(*self.coverage)
        return self._replace(grid=tuple(self.grid), rect_sides=tuple(self.rect_sides),
                             coverage=tuple(self.coverage), free_form=free_form, **counts)

    def recurrence_spec(self, family):
        return RecurrenceSpec(self.tile_size, self.grid, self.brightness_jitter,
                              self.shift_jitter, family, self.channels)

    @property
    def dims(self):
        return self.tile_size * self.grid[0], self.tile_size * self.grid[1]


CorpusItem = namedtuple('CorpusItem', ['id', 'set', 'seed', 'spec', 'image', 'mask'])


def _generate_item(set_name, index, seed, config):
    rs = RandomState(seed)
    if set_name == 'test_control' or (set_name == 'train'
                                      and rs.uniform() >= config.train_recurrent_fraction):
        image = synth_control(rs, config.dims, config.channels, config.control_sigma)
        spec = 'control/sigma={}'.format(config.control_sigma)
    else:
        family = FAMILIES[rs.integers(0, len(FAMILIES))]
        image, _ = synth_recurrent(rs, config.recurrence_spec(family))
        spec = '{}/{}/{}x{}'.format(family, config.tile_size, *config.grid)

    mask = None
    if set_name != 'train':
        mask_rs = rs.child('mask')
        if config.test_mask == 'tile':
            mask = tile_mask(mask_rs, config.dims, config.tile_size)
        elif config.test_mask == 'rect':
            sides = config.rect_sides
            mask = maskgen.rect_mask(mask_rs, config.dims[0], config.dims[1], (sides, sides))
        else:
            mask = maskgen.sample_mask_in_coverage(mask_rs, config.dims[0], config.dims[1],
                                                   config.free_form,
                                                   maskgen.CoverageRange(*config.coverage))
    return CorpusItem('{:04d}'.format(index), set_name, seed, spec, image, mask)


def item_seeds(rs, config):
    """Seeds of every corpus item by set; each set draws from its own child
    stream so that pre-training and test images never share a seed"""
    sizes = {'train': config.train_size, 'test_recurrent': config.test_size,
             'test_control': config.test_size}
    seeds = {set_name: [rs.child(set_name, index).seed for index in range(sizes[set_name])]
             for set_name in SETS}
    test_seeds = set(seeds['test_recurrent']) | set(seeds['test_control'])
    if test_seeds & set(seeds['train']):
        raise ParameterError('Pre-training and test seeds overlap')
    return seeds


def generate_corpus(rs, config, sets=SETS):
    """Yield every CorpusItem of the requested sets"""
    seeds = item_seeds(rs, config)
    for set_name in sets:
        for index, seed in enumerate(seeds[set_name]):
            yield _generate_item(set_name, index, seed, config)


def write_corpus(rs, config, directory):
    """Write every corpus image (and test mask) as PNG and a manifest CSV

    :return: Path of the manifest
    """
    manifest_rows = []
    for set_name in SETS:
        os.makedirs(os.path.join(directory, set_name), exist_ok=True)
    for item in generate_corpus(rs, config):
        path = os.path.join(item.set, '{}.png'.format(item.id))
        core.save_image(item.image, os.path.join(directory, path))
        mask_path = ''
        if item.mask is not None:
            mask_path = os.path.join(item.set, '{}_mask.png'.format(item.id))
            core.save_mask(item.mask, os.path.join(directory, mask_path))
        manifest_rows.append([item.id, item.set, item.seed, item.spec, path, mask_path])

    manifest_path = os.path.join(directory, 'manifest.csv')
    with open(manifest_path, 'w', newline='') as manifest_file:
        writer = csv.writer(manifest_file)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(manifest_rows)
    return manifest_path


def read_corpus(directory, set_name):
    """Load the items of one set from a corpus written by `write_corpus`"""
    manifest_path = os.path.join(directory, 'manifest.csv')
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError('Missing corpus manifest: {}'.format(manifest_path))
    items = []
    with open(manifest_path, newline='') as manifest_file:
        for row in csv.DictReader(manifest_file):
            if row['set'] != set_name:
                continue
            image = core.load_image(os.path.join(directory, row['path']))
            mask = None
            if row['mask_path']:
                mask = core.load_mask(os.path.join(directory, row['mask_path']))
            items.append(CorpusItem(row['id'], row['set'], int(row['seed']), row['spec'],
                                    image, mask))
    return items


_PretrainConfig = namedtuple('PretrainConfig', ['corpus_size', 'epochs', 'batch_size',
                                                'learning_rate', 'coverage', 'rect_fraction',
                                                'rect_sides', 'free_form', 'loss_weights',
                                                'heldout_size', 'seed'])
_PretrainConfig.__new__.__defaults__ = (None, 20, 8, 1e-3, (0.2, 0.4), 0.5, (16, 48),
                                        maskgen.FreeFormParams(), LossWeights(1.0, 0.0), 4, None)


class PretrainConfig(_PretrainConfig):
    """Supervised pre-training parameters

    corpus_size: number of pre-training images used (None: all of them)
    coverage: coverage range of free-form pre-training masks
    rect_fraction: share of rectangular masks, the rest being free-form
    loss_weights: weights of the reconstruction and adversarial terms; the
    adversarial term (ground truth as real sample) is off by default
    heldout_size: number of pre-training images held out to monitor PSNR
    seed: pre-training seed (None: derived from the experiment seed)
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        counts = {
            'epochs': core.check_count('epochs', self.epochs),
            'batch_size': core.check_count('batch_size', self.batch_size, 1),
            'heldout_size': core.check_count('heldout_size', self.heldout_size),
        }
        if self.corpus_size is not None:
            counts['corpus_size'] = core.check_count('corpus_size', self.corpus_size, 1)
        if self.learning_rate < 0 or not 0 <= self.rect_fraction <= 1:
            raise ParameterError('Invalid learning rate or rect_fraction')
        maskgen.CoverageRange(*self.coverage)
        free_form = self.free_form
        if not isinstance(free_form, maskgen.FreeFormParams):
            free_form = maskgen.FreeFormParams(**free_form)
        loss_weights = self.loss_weights
        if not isinstance(loss_weights, LossWeights):
            loss_weights = LossWeights(**loss_weights)
        return self._replace(coverage=tuple(self.coverage), rect_sides=tuple(self.rect_sides),
                             free_form=free_form, loss_weights=loss_weights, **counts)


PretrainLogRow = namedtuple('PretrainLogRow', PRETRAIN_LOG_COLUMNS)


def training_mask(rs, dims, config):
    """Rectangular mask with probability rect_fraction, free-form otherwise"""
    height, width = dims
    if rs.uniform() < config.rect_fraction:
        sides = config.rect_sides
        return maskgen.rect_mask(rs, height, width, (sides, sides))
    return maskgen.sample_mask_in_coverage(rs, height, width, config.free_form,
                                           maskgen.CoverageRange(*config.coverage))


def _masked_batch(images, masks, dtype):
    stacks = [core.compose_network_input(core.apply_mask(image, mask), mask)
              for image, mask in zip(images, masks)]
    return network.to_tensor(stacks, dtype), network.to_tensor(list(images), dtype)


def heldout_psnr(net, images, masks):
    """Mean PSNR over the masked region of the baseline restorations"""
    values = []
    for image, mask in zip(images, masks):
        masked = core.apply_mask(image, mask)
        restored = network.forward(net, core.compose_network_input(masked, mask))
        values.append(metrics.region_psnr(restored, image, mask))
    finite = [value for value in values if math.isfinite(value)]
    return math.fsum(finite) / len(finite) if finite else math.inf


def pretrain(net, config, images, rs, disc_config=None):
    """Train `net` in place to restore masked images of the corpus

    The objective is the mean squared error between the raw prediction and the
    ground truth over all pixels, plus an optional adversarial term.

    :param net: InpaintingNet to train
    :param config: PretrainConfig
    :param images: Pre-training images (ground truth)
    :param rs: RandomState driving image order and masks
    :param disc_config: DiscConfig of the discriminator used when the
    adversarial weight is positive
    :return: Tuple made of the trained network and the list of PretrainLogRow
    """
    images = list(images)
    if config.corpus_size is not None:
        images = images[:config.corpus_size]
    heldout = images[len(images) - config.heldout_size:] if config.heldout_size else []
    train = images[:len(images) - config.heldout_size]
    if not train:
        raise ParameterError('Pre-training corpus is empty')

    dims = train[0].shape[:2]
    dtype = network.module_dtype(net)
    heldout_rs = rs.child('heldout')
    heldout_masks = [training_mask(heldout_rs, dims, config) for _ in heldout]
    optimizer = network.make_optimizer(net, config.learning_rate)

    disc = disc_optimizer = None
    if config.loss_weights.adv > 0:
        disc = network.init_discriminator(rs.child('discriminator'),
                                          disc_config or network.DiscConfig(),
                                          net.image_channels, dtype)
        disc_optimizer = network.make_optimizer(disc, config.learning_rate)

    log = []
    batches = math.ceil(len(train) / config.batch_size)
    for epoch in range(config.epochs):
        order = rs.permutation(len(train))
        for batch in range(batches):
            indices = order[batch * config.batch_size:(batch + 1) * config.batch_size]
            batch_images = [train[index] for index in indices]
            masks = [training_mask(rs, dims, config) for _ in batch_images]
            inputs, targets = _masked_batch(batch_images, masks, dtype)

            pred = net(inputs)
            loss = config.loss_weights.rec * F.mse_loss(pred, targets)
            if disc is not None:
                loss = loss + config.loss_weights.adv * adv_loss_g(disc, pred)
            try:
                grads = network.gradients(loss, net, 'pre-training loss')
                network.optimizer_step(optimizer, grads)
                if disc is not None:
                    disc_loss = adv_loss_d(disc, targets, pred)
                    network.optimizer_step(disc_optimizer,
                                           network.gradients(disc_loss, disc,
                                                             'discriminator loss'))
            except NumericError as exc:
                exc.log = log
                raise

            psnr = heldout_psnr(net, heldout, heldout_masks) if heldout else math.nan
            log.append(PretrainLogRow(epoch, batch, float(loss.detach()), psnr))

        epoch_rows = log[-batches:]
        logger.info('Epoch {}/{}: loss {:.5f}, held-out PSNR {:.2f} dB'
                    .format(epoch + 1, config.epochs,
                            math.fsum(row.loss for row in epoch_rows) / len(epoch_rows),
                            epoch_rows[-1].heldout_psnr))
    return net, log


def write_log(log, path):
    with open(path, 'w', newline='') as log_file:
        writer = csv.writer(log_file)
        writer.writerow(PRETRAIN_LOG_COLUMNS)
        for row in log:
            writer.writerow([row.epoch, row.batch, repr(row.loss), repr(row.heldout_psnr)])

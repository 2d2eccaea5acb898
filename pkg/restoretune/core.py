"""Images, masks and random state

This module holds the primitives shared by every other module of restoretune:
    - validation of images (H x W x C float arrays in [0, 1]) and masks
    (H x W arrays of 0 and 1, where 1 marks a missing pixel)
    - masking arithmetic (`apply_mask`, `compose_network_input`,
    `composite_output`)
    - seeded random state (`RandomState`)
    - 8-bit PNG input and output for images and masks
"""
import hashlib
import numbers

import numpy as np
from PIL import Image

MIN_IMAGE_SIDE = 8
VALID_CHANNELS = (1, 3)


class ShapeError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Raised when a loss, a gradient or a parameter is not finite

    term: name of the offending quantity
    trace: records collected before the failure (adaptation only)
    log: training log collected before the failure (pre-training only)
    """
    def __init__(self, message, term=None, trace=None, log=None):
        super().__init__(message)
        self.term = term
        self.trace = trace
        self.log = log


class RandomState:
    """Seeded source of randomness

    All randomness of restoretune flows through instances of this class so
    that identical seeds and call sequences give identical results. Child
    states derived with `child` are independent from the parent stream.
    """
    def __init__(self, seed):
        if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= 2 ** 64:
            raise ParameterError('Seed must be an unsigned 64-bit integer: {}'.format(seed))
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *keys):
        """Return a new RandomState whose seed depends only on this state's
        seed and on `keys` (non-negative integers or strings)"""
        spawn_key = tuple(_key_to_int(key) for key in keys)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        seed = int(sequence.generate_state(1, dtype=np.uint64)[0])
        return RandomState(seed)

    def integers(self, low, high):
        """Integer drawn uniformly from [low, high)"""
        return int(self.generator.integers(low, high))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def _key_to_int(key):
    if isinstance(key, str):
        hashed = hashlib.sha256(key.encode('utf-8')).digest()
        return int.from_bytes(hashed[:8], 'little')
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    raise ParameterError('Invalid random state key: {}'.format(key))


def check_count(name, value, minimum=0):
    """Raise ParameterError unless `value` is an integer (not a bool) of at
    least `minimum`"""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError('{} must be an integer: got {!r}'.format(name, value))
    if value < minimum:
        raise ParameterError('{} must be at least {}: got {}'.format(name, minimum, value))
    return int(value)


def check_image(image):

    """Raise ShapeError or ParameterError if `image` is not a valid image"""
    if not isinstance(image, np.ndarray) or image.ndim != 3:
        raise ShapeError('Image must be a 3 dimensional array (H x W x C)')
    height, width, channels = image.shape
    if height < MIN_IMAGE_SIDE or width < MIN_IMAGE_SIDE:
        raise ShapeError('Image must be at least {0}x{0} pixels: got {1}x{2}'
                         .format(MIN_IMAGE_SIDE, height, width))
    if channels not in VALID_CHANNELS:
        raise ShapeError('Image must have 1 or 3 channels: got {}'.format(channels))
    if not np.all((image >= 0) & (image <= 1)):
        raise ParameterError('Image intensities must lie in [0, 1]')
    return image


def check_mask(mask):
    """Raise ShapeError or ParameterError if `mask` is not a binary 2D array"""
    if not isinstance(mask, np.ndarray) or mask.ndim != 2:
        raise ShapeError('Mask must be a 2 dimensional array (H x W)')
    if not np.all((mask == 0) | (mask == 1)):
        raise ParameterError('Mask values must be exactly 0 or 1')
    return mask


def _check_pair(image, mask):
    if image.shape[:2] != mask.shape:
        raise ShapeError('Image and mask dimensions differ: {} and {}'
                         .format(image.shape[:2], mask.shape))


def apply_mask(image, mask):
    """Zero-fill the pixels of `image` where `mask` is 1"""
    _check_pair(image, mask)
    return image * (1 - mask)[:, :, np.newaxis]


def compose_network_input(masked_image, mask):
    """Stack the mask as an extra channel after the image channels"""
    _check_pair(masked_image, mask)
    return np.concatenate([masked_image, mask[:, :, np.newaxis].astype(masked_image.dtype)],
                          axis=2)


def composite_output(pred, image, mask):
    """Keep the valid pixels of `image` and take `pred` inside `mask`"""
    if pred.shape != image.shape:
        raise ShapeError('Prediction and input dimensions differ: {} and {}'
                         .format(pred.shape, image.shape))
    _check_pair(image, mask)
    mask = mask[:, :, np.newaxis]
    return image * (1 - mask) + pred * mask


def digest(array):
    """SHA-256 hex digest of the raw bytes of an array"""
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()


def _sample_depth(pil_image):
    """Bits per sample as declared by the PNG decoder raw mode"""
    if not pil_image.tile:
        return 8
    raw_mode = pil_image.tile[0][3]
    if isinstance(raw_mode, tuple):
        raw_mode = raw_mode[0]
    return 16 if ';16' in str(raw_mode) else 8


def load_image(path):
    """Load an 8-bit grayscale or RGB PNG as an image with values v/255"""
    with Image.open(path) as pil_image:
        if _sample_depth(pil_image) != 8:
            raise ImageFormatError('Unsupported 16-bit PNG {} (expected 8 bits per sample)'
                                   .format(path))
        if pil_image.mode == 'L':
            data = np.asarray(pil_image, dtype=np.uint8)[:, :, np.newaxis]
        elif pil_image.mode == 'RGB':
            data = np.asarray(pil_image, dtype=np.uint8)
        elif pil_image.mode == 'P':
            data = np.asarray(pil_image.convert('RGB'), dtype=np.uint8)
        else:
            raise ImageFormatError('Unsupported PNG mode "{}" in {} (expected 8-bit L or RGB)'
                                   .format(pil_image.mode, path))
    return check_image(data.astype(np.float64) / 255)


def save_image(image, path):
    """Save an image as an 8-bit PNG, mapping intensity x to round(255 x)"""
    check_image(image)
    data = np.round(image * 255).astype(np.uint8)
    if data.shape[2] == 1:
        pil_image = Image.fromarray(data[:, :, 0])
    else:
        pil_image = Image.fromarray(data)
    pil_image.save(path, format='PNG')


def load_mask(path):
    """Load a single channel PNG with values in {0, 255} as a mask"""
    with Image.open(path) as pil_image:
        if pil_image.mode not in ('L', '1'):
            raise ImageFormatError('Unsupported mask PNG mode "{}" in {}'
                                   .format(pil_image.mode, path))
        data = np.asarray(pil_image.convert('L'), dtype=np.uint8)
    if not np.all((data == 0) | (data == 255)):
        raise ImageFormatError('Mask PNG values must be 0 or 255: {}'.format(path))
    return (data == 255).astype(np.float64)


def save_mask(mask, path):
    check_mask(mask)
    Image.fromarray((mask * 255).astype(np.uint8)).save(path, format='PNG')

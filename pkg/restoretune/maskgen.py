"""Mask generation

Rectangular masks and free-form masks made of thick random strokes. Free-form
masks are used both as original test masks and as the random fine-tuning
masks applied to the initial restoration during adaptation.
"""
import logging
import math
from collections import namedtuple

import numpy as np

from restoretune.core import ParameterError

logger = logging.getLogger(__name__)


class SamplingError(ParameterError):
    def __init__(self, message, last_coverage):
        super().__init__(message)
        self.last_coverage = last_coverage


_FreeFormParams = namedtuple('FreeFormParams', ['max_strokes', 'max_vertices',
                                                'brush_width', 'max_segment_length',
                                                'max_turn_angle'])
_FreeFormParams.__new__.__defaults__ = (6, 8, (6, 20), 40, 2 * math.pi / 5)


class FreeFormParams(_FreeFormParams):
    """Parameters of the free-form stroke sampler

    max_strokes: maximum number of strokes in a mask
    max_vertices: maximum number of segments in a stroke
    brush_width: (min, max) stroke width in pixels
    max_segment_length: maximum length of a segment in pixels
    max_turn_angle: maximum change of direction between segments in radians
    """
    def __new__(cls, *args, **kwargs):
        self = super().__new__(cls, *args, **kwargs)
        min_width, max_width = self.brush_width
        if self.max_strokes < 1:
            raise ParameterError('max_strokes must be at least 1')
        if self.max_vertices < 1:
            raise ParameterError('max_vertices must be at least 1')
        if not 1 <= min_width <= max_width:
            raise ParameterError('Invalid brush width range: {}'.format(self.brush_width))
        if self.max_segment_length < 1:
            raise ParameterError('max_segment_length must be at least 1')
        if self.max_turn_angle < 0:
            raise ParameterError('max_turn_angle must be non-negative')
        # JSON configuration files give lists
        return self._replace(brush_width=(min_width, max_width))


_CoverageRange = namedtuple('CoverageRange', ['lo', 'hi'])


class CoverageRange(_CoverageRange):
    """Accepted fraction of masked pixels, bounds included"""
    def __new__(cls, lo, hi):
        if not 0 <= lo < hi <= 1:
            raise ParameterError('Invalid coverage range: [{}, {}]'.format(lo, hi))
        return super().__new__(cls, lo, hi)

    def __contains__(self, value):
        return self.lo <= value <= self.hi


Stroke = namedtuple('Stroke', ['vertices', 'width'])
Stroke.__doc__ = 'Polyline of (y, x) vertices drawn with a round brush of the given width'


def coverage(mask):
    """Fraction of masked pixels"""
    return float(np.count_nonzero(mask)) / mask.size


def rect_mask(rs, height, width, side_range):
    """Mask made of one filled rectangle

    :param rs: RandomState
    :param height: Height of the mask
    :param width: Width of the mask
    :param side_range: ((min_height, max_height), (min_width, max_width)) of the
    rectangle, bounds included
    """
    (min_h, max_h), (min_w, max_w) = side_range
    if not (1 <= min_h <= max_h <= height and 1 <= min_w <= max_w <= width):
        raise ParameterError('Rectangle sides {} do not fit in a {}x{} image'
                             .format(side_range, height, width))
    rect_h = rs.integers(min_h, max_h + 1)
    rect_w = rs.integers(min_w, max_w + 1)
    top = rs.integers(0, height - rect_h + 1)
    left = rs.integers(0, width - rect_w + 1)
    mask = np.zeros((height, width))
    mask[top:top + rect_h, left:left + rect_w] = 1
    return mask


def sample_strokes(rs, height, width, params):
    """Draw the strokes of a free-form mask

    Each stroke starts at a uniformly random point with a random heading, then
    chains segments whose direction turns by at most `max_turn_angle` and
    whose length is at most `max_segment_length`. Vertices are clipped to the
    image.
    """
    strokes = []
    min_width, max_width = params.brush_width
    for _ in range(rs.integers(0, params.max_strokes + 1)):
        y, x = rs.uniform(0, height), rs.uniform(0, width)
        heading = rs.uniform(0, 2 * math.pi)
        vertices = [(y, x)]
        for _ in range(rs.integers(1, params.max_vertices + 1)):
            heading += rs.uniform(-params.max_turn_angle, params.max_turn_angle)
            length = rs.uniform(1, params.max_segment_length)
            y = min(max(y + length * math.sin(heading), 0), height - 1)
            x = min(max(x + length * math.cos(heading), 0), width - 1)
            vertices.append((y, x))
        strokes.append(Stroke(vertices, rs.integers(min_width, max_width + 1)))
    return strokes


def rasterize_strokes(height, width, strokes):
    """Union of the pixels whose center lies within half a brush width of a
    stroke segment (disks of the brush diameter swept along each segment)"""
    mask = np.zeros((height, width), dtype=bool)
    for stroke in strokes:
        radius = stroke.width / 2
        for (y0, x0), (y1, x1) in zip(stroke.vertices, stroke.vertices[1:]):
            _draw_capsule(mask, y0, x0, y1, x1, radius)
        if len(stroke.vertices) == 1:
            y0, x0 = stroke.vertices[0]
            _draw_capsule(mask, y0, x0, y0, x0, radius)
    return mask.astype(np.float64)


def _draw_capsule(mask, y0, x0, y1, x1, radius):
    height, width = mask.shape
    top = max(int(math.floor(min(y0, y1) - radius)), 0)
    bottom = min(int(math.ceil(max(y0, y1) + radius)) + 1, height)
    left = max(int(math.floor(min(x0, x1) - radius)), 0)
    right = min(int(math.ceil(max(x0, x1) + radius)) + 1, width)
    if top >= bottom or left >= right:
        return
    # Pixel (i, j) has its center at (i + 0.5, j + 0.5)
    ys = np.arange(top, bottom)[:, np.newaxis] + 0.5
    xs = np.arange(left, right)[np.newaxis, :] + 0.5
    dy, dx = y1 - y0, x1 - x0
    squared_length = dy * dy + dx * dx
    if squared_length > 0:
        t = np.clip(((ys - y0) * dy + (xs - x0) * dx) / squared_length, 0, 1)
    else:
        t = 0
    distance2 = (ys - (y0 + t * dy)) ** 2 + (xs - (x0 + t * dx)) ** 2
    mask[top:bottom, left:right] |= distance2 <= radius * radius


def free_form_mask(rs, height, width, params):
    """Mask made of random thick strokes"""
    return rasterize_strokes(height, width, sample_strokes(rs, height, width, params))


def sample_mask_in_coverage(rs, height, width, params, coverage_range, max_tries=100):
    """Rejection-sample free-form masks until one has a coverage within range

    Raise SamplingError carrying the coverage of the last attempt if no
    sample is accepted within `max_tries` attempts.
    """
    if max_tries < 1:
        raise ParameterError('max_tries must be at least 1')
    last_coverage = None
    for attempt in range(max_tries):
        mask = free_form_mask(rs, height, width, params)
        last_coverage = coverage(mask)
        if last_coverage in coverage_range:
            return mask
        logger.debug('Rejected mask #{} with coverage {:.3f}'.format(attempt, last_coverage))
    raise SamplingError('No mask with coverage in [{}, {}] after {} tries (last: {:.4f})'
                        .format(coverage_range.lo, coverage_range.hi, max_tries, last_coverage),
                        last_coverage)

"""SVG line chart of aggregate PSNR against the number of fine-tuning
iterations, built with lxml"""
import math

from lxml import etree

SVG_NS = 'http://www.w3.org/2000/svg'
NAMESPACES = {None: SVG_NS}

WIDTH = 480
HEIGHT = 320
# Margins around the plotting area (left, right, top, bottom)
MARGINS = (56, 16, 24, 40)
TICKS = 5

_STYLE = """
.axis { stroke: #444444; stroke-width: 1; }
.grid { stroke: #dddddd; stroke-width: 1; }
.curve { fill: none; stroke: #1f77b4; stroke-width: 2; }
.point { fill: #1f77b4; }
.best { fill: #d62728; }
text { font-family: sans-serif; font-size: 11px; fill: #222222; }
"""


class PlotError(Exception):
    pass


def _tag(name):
    return '{{{}}}{}'.format(SVG_NS, name)


def _element(parent, name, attrib):
    return etree.SubElement(parent, _tag(name), attrib=attrib)


def _scale(value, low, high, start, end):
    if high == low:
        return (start + end) / 2
    return start + (value - low) * (end - start) / (high - low)


def _format_tick(value):
    return '{:.2f}'.format(value).rstrip('0').rstrip('.')


def curve_points(rows, column='psnr'):
    """(iterations, value) pairs of the sweep rows with a finite value"""
    points = []
    for row in rows:
        value = row[column]
        if value is not None and math.isfinite(value):
            points.append((row['iterations'], value))
    return points


def render_curve(points, title='', y_label='PSNR (dB)'):
    """Return the root element of the SVG chart of `points`

    :param points: Sequence of (iterations, value) with strictly increasing
    iterations
    :param title: Text displayed above the chart
    :param y_label: Label of the vertical axis
    """
    if not points:
        raise PlotError('Nothing to plot')
    xs = [x for x, _ in points]
    ys = [y for _, y in points]
    left, right, top, bottom = MARGINS
    x0, x1 = left, WIDTH - right
    y0, y1 = HEIGHT - bottom, top
    low, high = min(ys), max(ys)
    if high - low < 1e-6:
        low, high = low - 0.5, high + 0.5

    root = etree.Element(_tag('svg'), nsmap=NAMESPACES, attrib={
        'width': str(WIDTH),
        'height': str(HEIGHT),
        'viewBox': '0 0 {} {}'.format(WIDTH, HEIGHT),
    })
    style = _element(root, 'style', {'type': 'text/css'})
    style.text = etree.CDATA(_STYLE)
    if title:
        _element(root, 'text', {'x': str(x0), 'y': str(top - 8)}).text = title

    for tick in range(TICKS):
        value = low + (high - low) * tick / (TICKS - 1)
        y = _scale(value, low, high, y0, y1)
        _element(root, 'line', {
            'class': 'grid', 'x1': str(x0), 'x2': str(x1), 'y1': str(y), 'y2': str(y)
        })
        label = _element(root, 'text', {
            'x': str(x0 - 6), 'y': str(y + 4), 'text-anchor': 'end'
        })
        label.text = _format_tick(value)

    _element(root, 'line', {
        'class': 'axis', 'x1': str(x0), 'x2': str(x1), 'y1': str(y0), 'y2': str(y0)
    })
    _element(root, 'line', {
        'class': 'axis', 'x1': str(x0), 'x2': str(x0), 'y1': str(y0), 'y2': str(y1)
    })
    x_label = _element(root, 'text', {
        'x': str((x0 + x1) / 2), 'y': str(HEIGHT - 6), 'text-anchor': 'middle'
    })
    x_label.text = 'iterations'
    vertical_label = _element(root, 'text', {
        'x': '12', 'y': str((y0 + y1) / 2), 'text-anchor': 'middle',
        'transform': 'rotate(-90 12 {})'.format((y0 + y1) / 2)
    })
    vertical_label.text = y_label

    coordinates = [(_scale(x, xs[0], xs[-1], x0, x1), _scale(y, low, high, y0, y1))
                   for x, y in points]
    _element(root, 'polyline', {
        'class': 'curve',
        'points': ' '.join('{:.2f},{:.2f}'.format(x, y) for x, y in coordinates),
    })
    best = ys.index(max(ys))
    for index, ((x, y), (iterations, _)) in enumerate(zip(coordinates, points)):
        _element(root, 'circle', {
            'class': 'best' if index == best else 'point',
            'cx': '{:.2f}'.format(x), 'cy': '{:.2f}'.format(y), 'r': '3',
        })
        tick = _element(root, 'text', {
            'x': '{:.2f}'.format(x), 'y': str(y0 + 14), 'text-anchor': 'middle'
        })
        tick.text = str(iterations)
    return root


def write_curve(points, path, title=''):
    root = render_curve(points, title)
    with open(path, 'wb') as svg_file:
        svg_file.write(etree.tostring(root, xml_declaration=True, encoding='utf-8'))

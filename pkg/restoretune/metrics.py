"""Image quality metrics and reports

PSNR, SSIM and L1 percentage between images with intensities in [0, 1], and
the per-image / aggregate report comparing restorations before and after
fine-tuning.
"""
import csv
import json
import math
import statistics
from collections import namedtuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from restoretune.core import ParameterError, ShapeError

PEAK = 1.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

REPORT_COLUMNS = ['id', 'psnr_before', 'psnr_after', 'ssim_before', 'ssim_after',
                  'l1pct_before', 'l1pct_after']
METRIC_COLUMNS = REPORT_COLUMNS[1:]


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError('Image dimensions differ: {} and {}'.format(a.shape, b.shape))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB (peak 1.0), inf for identical images"""
    _check_same_shape(a, b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(PEAK * PEAK / mse)


def ssim(a, b, window=SSIM_WINDOW):
    """Mean structural similarity over all `window` x `window` uniform windows,
    averaged over channels"""
    _check_same_shape(a, b)
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError('Images must be at least {0}x{0} pixels for SSIM'.format(window))
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 2:
        a, b = a[:, :, np.newaxis], b[:, :, np.newaxis]

    def local_mean(x):
        return sliding_window_view(x, (window, window), axis=(0, 1)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    ssim_map = numerator / denominator
    return float(np.mean([ssim_map[:, :, channel].mean()
                          for channel in range(ssim_map.shape[2])]))


def l1_percent(a, b):
    """100 x mean absolute difference"""
    _check_same_shape(a, b)
    return 100 * float(np.mean(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


_MetricsRow = namedtuple('MetricsRow', REPORT_COLUMNS)


class MetricsRow(_MetricsRow):
    """Metrics of one image before and after fine-tuning"""
    @classmethod
    def measure(cls, image_id, ground_truth, before, after, ssim_window=SSIM_WINDOW):
        return cls(image_id,
                   psnr(before, ground_truth), psnr(after, ground_truth),
                   ssim(before, ground_truth, ssim_window),
                   ssim(after, ground_truth, ssim_window),
                   l1_percent(before, ground_truth), l1_percent(after, ground_truth))


MetricsReport = namedtuple('MetricsReport', ['rows', 'means', 'medians', 'infinite_counts',
                                             'fingerprint'])
MetricsReport.__doc__ = """Per-image rows with their aggregates

means, medians: mapping from metric column to aggregate value, computed over
finite values only (None when a column has no finite value)
infinite_counts: mapping from metric column to the number of excluded
infinite values
fingerprint: identifier of the configuration that produced the rows
"""


def build_report(rows, fingerprint=''):
    if not rows:
        raise ParameterError('Cannot build a report without rows')
    means, medians, infinite_counts = {}, {}, {}
    for column in METRIC_COLUMNS:
        values = [getattr(row, column) for row in rows]
        finite = [value for value in values if math.isfinite(value)]
        infinite_counts[column] = len(values) - len(finite)
        means[column] = math.fsum(finite) / len(finite) if finite else None
        medians[column] = statistics.median(finite) if finite else None
    return MetricsReport(list(rows), means, medians, infinite_counts, fingerprint)


def format_value(value):
    if isinstance(value, float):
        return 'inf' if value == math.inf else repr(value)
    return str(value)


def write_report_csv(report, path):
    with open(path, 'w', newline='') as report_file:
        writer = csv.writer(report_file)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([format_value(value) for value in row])


def read_report_rows(path):
    """Read the rows of a report CSV written by `write_report_csv`"""
    with open(path, newline='') as report_file:
        reader = csv.DictReader(report_file)
        if reader.fieldnames != REPORT_COLUMNS:
            raise ParameterError('Unexpected report columns: {}'.format(reader.fieldnames))
        return [MetricsRow(line['id'], *[float(line[column]) for column in METRIC_COLUMNS])
                for line in reader]


def report_to_json(report, ssim_window=SSIM_WINDOW):
    def encode(value):
        if isinstance(value, float) and math.isinf(value):
            return 'inf'
        return value

    return json.dumps({
        'fingerprint': report.fingerprint,
        'ssim_window': ssim_window,
        'rows': [{column: encode(value) for column, value in row._asdict().items()}
                 for row in report.rows],
        'means': report.means,
        'medians': report.medians,
        'infinite_counts': report.infinite_counts,
    }, indent=2, sort_keys=True)


def write_report_json(report, path, ssim_window=SSIM_WINDOW):
    with open(path, 'w') as report_file:
        report_file.write(report_to_json(report, ssim_window))
        report_file.write('\n')


def region_psnr(a, b, mask):
    """PSNR restricted to the pixels where `mask` is 1"""
    _check_same_shape(a, b)
    selected = mask.astype(bool)
    if not selected.any():
        raise ParameterError('Empty region')
    diff = np.asarray(a, np.float64)[selected] - np.asarray(b, np.float64)[selected]
    mse = float(np.mean(diff ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(PEAK * PEAK / mse)


def ncc(a, b):
    """Normalized cross-correlation of two windows of identical shape, 0 when
    either window is constant"""
    _check_same_shape(a, b)
    a = np.asarray(a, np.float64) - np.mean(a)
    b = np.asarray(b, np.float64) - np.mean(b)
    denominator = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denominator == 0:
        return 0.0
    return float(np.sum(a * b)) / denominator
